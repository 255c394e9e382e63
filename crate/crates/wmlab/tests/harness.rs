use wmlab::harness::{
    bench, calibrate, from_csv, run_averaging, run_experiment, run_sweep, sweep_rows, ExperimentConfig, PcaRow,
    ResultsTable, SweepAxis,
};
use wmlab::pgid::Profile;
use wmlab::watermarks::Scheme;
use wmlab::WmError;

/// A 64-dimensional campaign small enough to run in well under a second.
const SMALL: &str = r#"
seed = 11
population = 4
calibration = 100

[model]
d = 64
k = 4

[keys]
gs_k_bits = 16
gs_users = 1
gs_fpr = 0.01
tr_radius = 2
t2s_bits = 16

[removal]
kind = "removal"
steps = 3

[forgery]
kind = "forgery"
steps = 3
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(SMALL).unwrap()
}

#[test]
fn small_campaign_fills_the_table() {
    let cfg = small();
    let res = run_experiment(&cfg).unwrap();
    assert_eq!(res.table.rows.len(), 3 * 3 * 4);
    for s in Scheme::ALL {
        for p in Profile::ALL {
            for attack in ["none", "unwatermarked", "removal", "forgery"] {
                let row = res.table.find(s, p, attack).unwrap_or_else(|| panic!("{s}/{p}/{attack}"));
                assert!((0.0..=1.0).contains(&row.det_rate));
                assert!((0.0..=1.0).contains(&row.auc));
                // Rates are counts over four images.
                assert_eq!((row.det_rate * 4.0).fract(), 0.0);
                assert_eq!(row.bit_acc.is_some(), s.is_multi_bit());
                let steps = match attack {
                    "removal" => 3,
                    "forgery" => 3,
                    _ => 0,
                };
                assert_eq!(row.steps, steps);
            }
        }
        // Clean generation under standard inversion: marks are found.
        assert_eq!(res.table.find(s, Profile::Baseline, "none").unwrap().det_rate, 1.0);
        assert!(res.schemes[&s].regions.is_some());
    }
    assert_eq!(res.detections.len(), 3 * 3 * 4 * 4);
    assert_eq!(res.timings.len(), res.table.rows.len());
}

#[test]
fn campaigns_are_reproducible_and_seeded() {
    let cfg = small();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.table.to_csv().unwrap(), b.table.to_csv().unwrap());
    assert_eq!(a.detections, b.detections);
    assert_eq!(a.pca, b.pca);
    let other = run_experiment(&ExperimentConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.detections, other.detections);
}

#[test]
fn outputs_round_trip_from_disk() {
    let cfg = small();
    let res = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    res.write(&cfg, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(text.starts_with("scheme,defense,attack,steps,det_rate,bit_acc,auc"));
    assert_eq!(ResultsTable::from_csv(&text).unwrap(), res.table);
    for s in Scheme::ALL {
        let pca = std::fs::read_to_string(dir.path().join(format!("pca_{s}.csv"))).unwrap();
        assert!(pca.starts_with("group,pc1,pc2"));
        let rows: Vec<PcaRow> = from_csv(&pca).unwrap();
        // Six groups of four.
        assert_eq!(rows.len(), 24);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 11);
    assert_eq!(summary["results"].as_array().unwrap().len(), 36);
    for f in ["detections.csv", "timings.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn config_survives_toml_round_trip() {
    let cfg = small();
    let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
    assert_eq!(back, cfg);
    assert!(ExperimentConfig::from_toml_str("population = 0").is_err());
    assert!(ExperimentConfig::from_toml_str("schemes = []").is_err());
    assert!(ExperimentConfig::from_toml_str("[defenses.pgid_r]\nk_stop = 60\ns_skip = 1\ngamma = 0.0").is_err());
    assert!(ExperimentConfig::from_toml_str("[removal]\nkind = \"forgery\"").is_err());
}

#[test]
fn single_value_sweep_equals_a_direct_run() {
    let cfg = ExperimentConfig { schemes: vec![Scheme::GaussianShading], ..small() };
    let runs = run_sweep(&cfg, SweepAxis::KStop, &[5.0], Profile::PgidR).unwrap();
    let direct = run_experiment(&SweepAxis::KStop.apply(&cfg, Profile::PgidR, 5.0).unwrap()).unwrap();
    assert_eq!(runs[0].1.table, direct.table);
    let rows = sweep_rows(SweepAxis::KStop, &runs);
    assert_eq!(rows.len(), direct.table.rows.len());
    assert!(rows.iter().all(|r| r.axis == "k_stop" && r.value == 5.0));

    let steps = run_sweep(&cfg, SweepAxis::AttackSteps, &[0.0, 2.0], Profile::PgidF).unwrap();
    let forgery = |i: usize| steps[i].1.table.find(Scheme::GaussianShading, Profile::Baseline, "forgery").unwrap().steps;
    assert_eq!((forgery(0), forgery(1)), (0, 2));
}

#[test]
fn sweep_arguments_are_checked() {
    let cfg = small();
    assert!(matches!(run_sweep(&cfg, SweepAxis::Gamma, &[], Profile::PgidR), Err(WmError::InvalidConfig(_))));
    assert!(SweepAxis::KStop.apply(&cfg, Profile::PgidR, 2.5).is_err());
    assert!(SweepAxis::KStop.apply(&cfg, Profile::PgidR, 50.0).is_err());
    assert!(SweepAxis::Gamma.apply(&cfg, Profile::Baseline, 0.1).is_err());
    assert!("nonsense".parse::<SweepAxis>().is_err());
    let g = SweepAxis::Gamma.apply(&cfg, Profile::PgidF, 0.25).unwrap();
    assert_eq!(g.defenses.get(Profile::PgidF).unwrap().gamma, 0.25);
    assert_eq!(g.defenses.get(Profile::PgidR), cfg.defenses.get(Profile::PgidR));
}

#[test]
fn bench_reports_every_method_with_matching_counts() {
    let rows = bench(&small(), 2).unwrap();
    let methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["ddim", "pgid-r", "pgid-f"]);
    let counts: Vec<(usize, usize)> =
        rows.iter().map(|r| (r.predicted_stage2_steps, r.measured_stage2_steps)).collect();
    assert_eq!(counts, [(0, 0), (100, 100), (198, 198)]);
    assert!(rows.iter().all(|r| r.total_ms >= 0.0));
}

#[test]
fn calibration_and_averaging_run() {
    let cfg = small();
    let rows = calibrate(&cfg).unwrap();
    assert_eq!(rows.len(), 3);
    let gs = rows.iter().find(|r| r.scheme == Scheme::GaussianShading).unwrap();
    // Analytic threshold for 16 bits at FPR 0.01: P(Bin(16, ½) > 12) ≈ 0.0106,
    // P(> 13) ≈ 0.0021.
    assert_eq!(gs.threshold, 13.0 / 16.0);
    assert!(rows.iter().all(|r| r.threshold.is_finite()));

    let avg = run_averaging(&cfg, Scheme::TreeRing, 8).unwrap();
    assert_eq!(avg.residual_count, 8);
    assert_eq!(avg.det_clean, 1.0);
    for v in [avg.det_attacked, avg.det_attacked_pgid_r] {
        assert!((0.0..=1.0).contains(&v));
    }
}
