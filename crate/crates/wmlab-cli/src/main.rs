use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use wmlab::harness::{
    self, sweep_rows, to_csv, ExperimentConfig, ImageSet, Pipeline, Population, SweepAxis,
};
use wmlab::pgid::Profile;
use wmlab::watermarks::Scheme;

#[derive(Parser)]
#[command(name = "wmlab", version, about = "Semantic watermarking testbed for latent diffusion")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Defense profile: baseline, pgid-r or pgid-f.
    #[arg(long, global = true, default_value = "pgid-r")]
    profile: Profile,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate watermarked and unwatermarked images for each scheme.
    Generate,
    /// Generate the removal-attacked and forged populations as well; with
    /// `--averaging N`, run the residual-averaging removal attack instead.
    Attack {
        #[arg(long)]
        averaging: Option<usize>,
    },
    /// Detect on an image set under the selected profile.
    Defend {
        /// Image CSV written by `generate` or `attack`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the full experiment and write the results table.
    Evaluate,
    /// One experiment per value of a PGID or attack parameter.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Per-stage runtimes of DDIM inversion and the PGID profiles.
    Bench {
        #[arg(long, default_value_t = 10)]
        images: usize,
    },
    /// Calibrate detection thresholds on unwatermarked images.
    Calibrate,
    /// Print the effective config as TOML.
    ShowConfig,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.output_dir = Some(c.out.clone().or(cfg.output_dir).unwrap_or_else(|| PathBuf::from("out")));
    Ok(cfg)
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
    println!("wrote {}", p.display());
    Ok(())
}

/// Group names are `<scheme>/<population>`.
fn group_name(s: Scheme, p: Population) -> String {
    format!("{s}/{}", p.name())
}

#[derive(Serialize)]
struct DefendRow {
    scheme: Scheme,
    statistic: f64,
    threshold: f64,
    detected: bool,
    bit_accuracy: Option<f64>,
    p_value: Option<f64>,
    group: String,
    index: usize,
}

fn images(cfg: &ExperimentConfig, with_attacks: bool) -> Result<ImageSet> {
    let pipe = Pipeline::new(cfg.clone())?;
    let mut set = ImageSet::default();
    for &s in &cfg.schemes {
        let key = pipe.calibrated_key(s)?;
        let n = cfg.population;
        let wm = pipe.watermarked_images(&key, n, &group_name(s, Population::Watermarked))?;
        let un = pipe.clean_images(n, &group_name(s, Population::Unwatermarked))?;
        set.push_all(&group_name(s, Population::Watermarked), &wm);
        set.push_all(&group_name(s, Population::Unwatermarked), &un);
        if with_attacks {
            let rm = pipe.removal_images(&wm, &group_name(s, Population::Removed))?;
            let covers = pipe.clean_images(n, &format!("{s}/covers"))?;
            let fg = pipe.forgery_images(&covers, &wm, &group_name(s, Population::Forged))?;
            set.push_all(&group_name(s, Population::Removed), &rm);
            set.push_all(&group_name(s, Population::Forged), &fg);
        }
    }
    Ok(set)
}

fn defend(cfg: &ExperimentConfig, profile: Profile, input: &Path) -> Result<Vec<DefendRow>> {
    let set = ImageSet::from_csv(&fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?)?;
    let pipe = Pipeline::new(cfg.clone())?;
    let mut rows = Vec::new();
    for &s in &cfg.schemes {
        let key = pipe.calibrated_key(s)?;
        for group in set.groups().into_iter().filter(|g| g.starts_with(&format!("{s}/"))) {
            let imgs = set.group(&group);
            if imgs.first().is_some_and(|x| x.len() != cfg.model.d) {
                bail!("group {group}: image length {} does not match d = {}", imgs[0].len(), cfg.model.d);
            }
            let det = pipe.detect_all(&key, &imgs, &group, pipe.defense(profile).as_ref())?;
            rows.extend(det.into_iter().enumerate().map(|(index, d)| DefendRow {
                scheme: s,
                statistic: d.report.statistic,
                threshold: d.report.threshold,
                detected: d.report.detected,
                bit_accuracy: d.report.bit_accuracy,
                p_value: d.report.p_value,
                group: group.clone(),
                index,
            }));
        }
    }
    Ok(rows)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli.common)?;
    let out = cfg.output_dir.clone().expect("set by load_config");
    let profile = cli.common.profile;
    match cli.cmd {
        Cmd::Generate => write(&out, "images.csv", &images(&cfg, false)?.to_csv()?)?,
        Cmd::Attack { averaging: None } => write(&out, "images.csv", &images(&cfg, true)?.to_csv()?)?,
        Cmd::Attack { averaging: Some(n) } => {
            let rows = cfg
                .schemes
                .iter()
                .map(|&s| harness::run_averaging(&cfg, s, n))
                .collect::<wmlab::Result<Vec<_>>>()?;
            let body = to_csv(&rows)?;
            print!("{body}");
            write(&out, "averaging.csv", &body)?;
        }
        Cmd::Defend { input } => {
            let rows = defend(&cfg, profile, &input)?;
            write(&out, &format!("detections_{profile}.csv"), &to_csv(&rows)?)?;
        }
        Cmd::Evaluate => {
            let res = harness::run_experiment(&cfg)?;
            res.write(&cfg, &out)?;
            print!("{}", res.table.to_csv()?);
            for (s, sum) in &res.schemes {
                if let Some(r) = &sum.regions {
                    println!(
                        "{s}: separation {:.3}, crossed {:.3}, returned {:.3}",
                        r.separation,
                        r.crossed(),
                        r.returned()
                    );
                }
            }
            println!("wrote results to {}", out.display());
        }
        Cmd::Sweep { axis, values } => {
            let runs = harness::run_sweep(&cfg, axis, &values, profile)?;
            let body = to_csv(&sweep_rows(axis, &runs))?;
            print!("{body}");
            write(&out, &format!("sweep_{}.csv", axis.name()), &body)?;
        }
        Cmd::Bench { images } => {
            let body = to_csv(&harness::bench(&cfg, images)?)?;
            print!("{body}");
            write(&out, "bench.csv", &body)?;
        }
        Cmd::Calibrate => {
            let body = to_csv(&harness::calibrate(&cfg)?)?;
            print!("{body}");
            write(&out, "thresholds.csv", &body)?;
        }
        Cmd::ShowConfig => print!("{}", cfg.to_toml_string()),
    }
    Ok(())
}
