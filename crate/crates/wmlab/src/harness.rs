//! Experiment runner: builds the pipeline from an [`ExperimentConfig`],
//! generates the four populations (watermarked, unwatermarked,
//! removal-attacked, forged), evaluates them under standard inversion and
//! the PGID profiles, and emits CSV / JSON results.
//!
//! Every random draw comes from a stream derived from the master seed, a
//! label and an image index, so runs are reproducible bit for bit and
//! images can be processed in parallel.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{averaging_attack, forgery_attack, removal_attack, Adversary, AttackConfig, AttackKind};
use crate::diffusion::ToyModelSpec;
use crate::error::{Result, WmError};
use crate::metrics::{auc_of, LinearProbe, Pca2};
use crate::pgid::{pgid_latent, PgidConfig, PgidTrace, Profile};
use crate::rng::stream;
use crate::watermarks::{DetectionReport, KeySpec, Scheme, WatermarkKey};
use crate::{Ddim, Image, Latent, LatentCodec, NoiseSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    pub num_train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub steps: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { num_train_steps: 1000, beta_start: 0.00085, beta_end: 0.012, steps: 50 }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.num_train_steps, self.beta_start, self.beta_end)?.subsample(self.steps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecSpec {
    pub seed: u64,
    pub noise_std: f64,
    /// Seed of the attacker's codec; `None` gives the attacker the provider's.
    pub proxy_seed: Option<u64>,
}

impl Default for CodecSpec {
    fn default() -> Self {
        Self { seed: 2, noise_std: 0.01, proxy_seed: None }
    }
}

/// Parameters behind the named PGID profiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseSpec {
    pub pgid_r: PgidConfig,
    pub pgid_f: PgidConfig,
}

impl Default for DefenseSpec {
    fn default() -> Self {
        Self { pgid_r: PgidConfig::REMOVAL, pgid_f: PgidConfig::FORGERY }
    }
}

impl DefenseSpec {
    pub fn get(&self, p: Profile) -> Option<PgidConfig> {
        match p {
            Profile::Baseline => None,
            Profile::PgidR => Some(self.pgid_r),
            Profile::PgidF => Some(self.pgid_f),
        }
    }

    pub fn get_mut(&mut self, p: Profile) -> Option<&mut PgidConfig> {
        match p {
            Profile::Baseline => None,
            Profile::PgidR => Some(&mut self.pgid_r),
            Profile::PgidF => Some(&mut self.pgid_f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub model: ToyModelSpec,
    /// Means seed of the attacker's proxy model; `None` = matched proxy.
    pub proxy_means_seed: Option<u64>,
    pub schedule: ScheduleSpec,
    pub codec: CodecSpec,
    pub keys: KeySpec,
    pub removal: AttackConfig,
    pub forgery: AttackConfig,
    pub defenses: DefenseSpec,
    pub profiles: Vec<Profile>,
    /// Images per population.
    pub population: usize,
    /// Unwatermarked images used to calibrate empirical thresholds.
    pub calibration: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            schemes: Scheme::ALL.to_vec(),
            model: ToyModelSpec::default(),
            proxy_means_seed: None,
            schedule: ScheduleSpec::default(),
            codec: CodecSpec::default(),
            keys: KeySpec::default(),
            removal: AttackConfig::removal(50),
            forgery: AttackConfig::forgery(100),
            defenses: DefenseSpec::default(),
            profiles: Profile::ALL.to_vec(),
            population: 100,
            calibration: 500,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(WmError::InvalidConfig("population must be >= 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(WmError::InvalidConfig("no schemes selected".into()));
        }
        if self.removal.kind != AttackKind::Removal || self.forgery.kind != AttackKind::Forgery {
            return Err(WmError::InvalidConfig("removal/forgery attack kinds are fixed".into()));
        }
        self.removal.validate()?;
        self.forgery.validate()?;
        for p in &self.profiles {
            if let Some(c) = self.defenses.get(*p) {
                c.validate(self.schedule.steps)?;
            }
        }
        Ok(())
    }
}

/// Provider and attacker components built from one config.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub ddim: Ddim,
    pub proxy_ddim: Ddim,
    pub codec: LatentCodec,
    pub proxy_codec: LatentCodec,
}

/// Generated images of one scheme.
#[derive(Clone, Debug)]
pub struct Populations {
    pub key: WatermarkKey,
    pub watermarked: Vec<Image<f64>>,
    pub unwatermarked: Vec<Image<f64>>,
    pub removed: Vec<Image<f64>>,
    pub forged: Vec<Image<f64>>,
}

/// One image's detection under one defense.
#[derive(Clone, Debug)]
pub struct Detection {
    pub report: DetectionReport,
    pub noise: Latent<f64>,
    pub trace: PgidTrace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Population {
    Watermarked,
    Unwatermarked,
    Removed,
    Forged,
}

impl Population {
    pub const ALL: [Population; 4] =
        [Population::Watermarked, Population::Unwatermarked, Population::Removed, Population::Forged];

    pub fn name(self) -> &'static str {
        match self {
            Population::Watermarked => "watermarked",
            Population::Unwatermarked => "unwatermarked",
            Population::Removed => "removed",
            Population::Forged => "forged",
        }
    }

    /// Name used in the `attack` column of the results table.
    pub fn attack_name(self) -> &'static str {
        match self {
            Population::Watermarked => "none",
            Population::Unwatermarked => "unwatermarked",
            Population::Removed => "removal",
            Population::Forged => "forgery",
        }
    }
}

impl Populations {
    pub fn get(&self, p: Population) -> &[Image<f64>] {
        match p {
            Population::Watermarked => &self.watermarked,
            Population::Unwatermarked => &self.unwatermarked,
            Population::Removed => &self.removed,
            Population::Forged => &self.forged,
        }
    }
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let model = Arc::new(cfg.model.build()?);
        let ddim = Ddim::new(model.clone(), &schedule);
        let proxy_ddim = match cfg.proxy_means_seed {
            None => ddim.clone(),
            Some(s) => Ddim::new(Arc::new(cfg.model.with_means_seed(s).build()?), &schedule),
        };
        let codec = LatentCodec::orthogonal(cfg.model.d, cfg.codec.seed, cfg.codec.noise_std);
        let proxy_codec = match cfg.codec.proxy_seed {
            None => codec.clone(),
            Some(s) => LatentCodec::orthogonal(cfg.model.d, s, cfg.codec.noise_std),
        };
        Ok(Self { cfg, ddim, proxy_ddim, codec, proxy_codec })
    }

    pub fn adversary(&self) -> Adversary<'_, f64> {
        Adversary { ddim: &self.proxy_ddim, codec: &self.proxy_codec }
    }

    pub fn defense(&self, p: Profile) -> Option<PgidConfig> {
        self.cfg.defenses.get(p)
    }

    /// `𝓓(T_{T→0}(z_T))`.
    pub fn generate_image(&self, zt: &[f64]) -> Result<Image<f64>> {
        Ok(self.codec.decode(&self.ddim.denoise_full(zt)?))
    }

    pub fn watermarked_images(&self, key: &WatermarkKey, n: usize, label: &str) -> Result<Vec<Image<f64>>> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(self.cfg.seed, &format!("{label}/noise"), i as u64);
                self.generate_image(&key.sample_watermarked_noise::<f64>(&mut rng))
            })
            .collect()
    }

    pub fn clean_images(&self, n: usize, label: &str) -> Result<Vec<Image<f64>>> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(self.cfg.seed, &format!("{label}/noise"), i as u64);
                let zt: Vec<f64> = (0..self.cfg.model.d).map(|_| StandardNormal.sample(&mut rng)).collect();
                self.generate_image(&zt)
            })
            .collect()
    }

    /// Provider-side encoding of image `i` of population `label`.
    pub fn encode(&self, x: &[f64], label: &str, i: usize) -> Latent<f64> {
        self.codec.encode(x, &mut stream(self.cfg.seed, &format!("{label}/encode"), i as u64))
    }

    /// Noise estimate under standard inversion (`None`) or PGID.
    pub fn extract(&self, z0: &[f64], defense: Option<&PgidConfig>) -> Result<(Latent<f64>, PgidTrace)> {
        match defense {
            Some(c) => pgid_latent(c, &self.ddim, z0),
            None => {
                let t = std::time::Instant::now();
                let z = self.ddim.invert_full(z0)?.last().clone();
                let mut trace = PgidTrace::default();
                trace.stage_times[0] = t.elapsed();
                Ok((z, trace))
            }
        }
    }

    pub fn detect_all(
        &self,
        key: &WatermarkKey,
        images: &[Image<f64>],
        label: &str,
        defense: Option<&PgidConfig>,
    ) -> Result<Vec<Detection>> {
        images
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let (noise, trace) = self.extract(&self.encode(x, label, i), defense)?;
                Ok(Detection { report: key.detect(&noise)?, noise, trace })
            })
            .collect()
    }

    /// A key with its threshold calibrated on `cfg.calibration` unwatermarked images.
    pub fn calibrated_key(&self, scheme: Scheme) -> Result<WatermarkKey> {
        let mut key = self.cfg.keys.build(scheme, self.cfg.model.d)?;
        if scheme != Scheme::GaussianShading {
            let imgs = self.clean_images(self.cfg.calibration, "calibration")?;
            let noises: Vec<Latent<f64>> = imgs
                .par_iter()
                .enumerate()
                .map(|(i, x)| Ok(self.ddim.invert_full(&self.encode(x, "calibration", i))?.last().clone()))
                .collect::<Result<_>>()?;
            key.calibrate(&noises, self.cfg.keys.target_fpr(scheme))?;
        }
        Ok(key)
    }

    pub fn removal_images(&self, images: &[Image<f64>], label: &str) -> Result<Vec<Image<f64>>> {
        let adv = self.adversary();
        images
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut rng = stream(self.cfg.seed, &format!("{label}/attack"), i as u64);
                Ok(removal_attack(&self.cfg.removal, &adv, x, &mut rng)?.image)
            })
            .collect()
    }

    pub fn forgery_images(&self, covers: &[Image<f64>], sources: &[Image<f64>], label: &str) -> Result<Vec<Image<f64>>> {
        let adv = self.adversary();
        covers
            .par_iter()
            .enumerate()
            .map(|(i, xc)| {
                let mut rng = stream(self.cfg.seed, &format!("{label}/attack"), i as u64);
                let xw = &sources[i % sources.len()];
                Ok(forgery_attack(&self.cfg.forgery, &adv, xc, xw, &mut rng)?.image)
            })
            .collect()
    }

    pub fn populations(&self, scheme: Scheme) -> Result<Populations> {
        let n = self.cfg.population;
        let key = self.calibrated_key(scheme)?;
        let watermarked = self.watermarked_images(&key, n, &format!("{scheme}/watermarked"))?;
        let unwatermarked = self.clean_images(n, &format!("{scheme}/unwatermarked"))?;
        let removed = self.removal_images(&watermarked, &format!("{scheme}/removed"))?;
        let covers = self.clean_images(n, &format!("{scheme}/covers"))?;
        let forged = self.forgery_images(&covers, &watermarked, &format!("{scheme}/forged"))?;
        Ok(Populations { key, watermarked, unwatermarked, removed, forged })
    }

    /// Detections of one population under one profile.
    pub fn evaluate(&self, pops: &Populations, pop: Population, profile: Profile) -> Result<Vec<Detection>> {
        let scheme = pops.key.scheme();
        self.detect_all(
            &pops.key,
            pops.get(pop),
            &format!("{scheme}/{}", pop.name()),
            self.defense(profile).as_ref(),
        )
    }
}

/// Fraction of detections flagged as watermarked.
pub fn det_rate(d: &[Detection]) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    d.iter().filter(|x| x.report.detected).count() as f64 / d.len() as f64
}

/// Mean bit accuracy (multi-bit schemes).
pub fn mean_bit_acc(d: &[Detection]) -> Option<f64> {
    let v: Vec<f64> = d.iter().filter_map(|x| x.report.bit_accuracy).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn scores(d: &[Detection]) -> Vec<f64> {
    d.iter().map(|x| x.report.score()).collect()
}

fn mean_ms(d: &[Detection], stage: usize) -> f64 {
    let total: Duration = d.iter().map(|x| x.trace.stage_times[stage]).sum();
    total.as_secs_f64() * 1e3 / d.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub defense: Profile,
    pub attack: String,
    pub steps: usize,
    pub det_rate: f64,
    pub bit_acc: Option<f64>,
    pub auc: f64,
}

/// Per-stage wall-clock means (kept out of the results table so that
/// results stay byte-reproducible).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scheme: Scheme,
    pub defense: Profile,
    pub attack: String,
    pub stage1_ms: f64,
    pub stage2_ms: f64,
    pub stage3_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub scheme: Scheme,
    pub defense: Profile,
    pub population: Population,
    pub index: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub detected: bool,
    pub bit_accuracy: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaRow {
    pub group: String,
    pub pc1: f64,
    pub pc2: f64,
}

/// Region-separation statistics in the PCA plane of inverted noises.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    /// Probe accuracy on clean watermarked vs unwatermarked noises.
    pub separation: f64,
    /// Removed noises classified unwatermarked.
    pub crossed_removal: f64,
    /// Forged noises classified watermarked.
    pub crossed_forgery: f64,
    /// Removed noises after PGID-R classified watermarked.
    pub returned_removal: f64,
    /// Forged noises after PGID-F classified unwatermarked.
    pub returned_forgery: f64,
}

impl RegionStats {
    pub fn crossed(&self) -> f64 {
        (self.crossed_removal + self.crossed_forgery) / 2.0
    }

    pub fn returned(&self) -> f64 {
        (self.returned_removal + self.returned_forgery) / 2.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn find(&self, scheme: Scheme, defense: Profile, attack: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.defense == defense && r.attack == attack)
    }

    pub fn to_csv(&self) -> Result<String> {
        to_csv(&self.rows)
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        Ok(Self { rows: from_csv(s)? })
    }
}

pub fn to_csv<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| WmError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn from_csv<R: for<'de> Deserialize<'de>>(s: &str) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_reader(s.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<Vec<R>, _>>()?)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub threshold: Option<f64>,
    pub regions: Option<RegionStats>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResults {
    pub table: ResultsTable,
    pub timings: Vec<TimingRow>,
    pub detections: Vec<DetectionRow>,
    pub pca: BTreeMap<Scheme, Vec<PcaRow>>,
    pub schemes: BTreeMap<Scheme, SchemeSummary>,
}

#[derive(Serialize)]
struct SummaryJson<'a> {
    config: &'a ExperimentConfig,
    schemes: &'a BTreeMap<Scheme, SchemeSummary>,
    results: &'a [ResultRow],
}

impl ExperimentResults {
    pub fn summary_json(&self, cfg: &ExperimentConfig) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SummaryJson {
            config: cfg,
            schemes: &self.schemes,
            results: &self.table.rows,
        })?)
    }

    /// Writes `results.csv`, `detections.csv`, `timings.csv`,
    /// `pca_<scheme>.csv` and `summary.json` into `dir`.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.csv"), self.table.to_csv()?)?;
        fs::write(dir.join("detections.csv"), to_csv(&self.detections)?)?;
        fs::write(dir.join("timings.csv"), to_csv(&self.timings)?)?;
        for (scheme, rows) in &self.pca {
            fs::write(dir.join(format!("pca_{scheme}.csv")), to_csv(rows)?)?;
        }
        fs::write(dir.join("summary.json"), self.summary_json(cfg)?)?;
        Ok(())
    }
}

type EvalMap = BTreeMap<(Population, Profile), Vec<Detection>>;

fn region_stats(ev: &EvalMap) -> Result<Option<(RegionStats, Vec<PcaRow>)>> {
    use Population as P;
    use Profile as F;
    let get = |p, f| ev.get(&(p, f));
    let (Some(wm), Some(un), Some(rm), Some(fg), Some(rm_r), Some(fg_f)) = (
        get(P::Watermarked, F::Baseline),
        get(P::Unwatermarked, F::Baseline),
        get(P::Removed, F::Baseline),
        get(P::Forged, F::Baseline),
        get(P::Removed, F::PgidR),
        get(P::Forged, F::PgidF),
    ) else {
        return Ok(None);
    };
    if wm.len() < 2 || un.len() < 2 {
        return Ok(None);
    }
    let noises = |d: &[Detection]| d.iter().map(|x| x.noise.clone()).collect::<Vec<_>>();
    let mut fit = noises(wm);
    fit.extend(noises(un));
    let pca = Pca2::fit(&fit)?;
    let proj = |d: &[Detection]| d.iter().map(|x| pca.transform(&x.noise)).collect::<Vec<_>>();
    let groups = [
        ("watermarked", proj(wm)),
        ("unwatermarked", proj(un)),
        ("removed", proj(rm)),
        ("forged", proj(fg)),
        ("removed+pgid-r", proj(rm_r)),
        ("forged+pgid-f", proj(fg_f)),
    ];
    let probe = LinearProbe::fit(&groups[0].1, &groups[1].1)?;
    let n_clean = (groups[0].1.len() + groups[1].1.len()) as f64;
    let stats = RegionStats {
        separation: (probe.rate(&groups[0].1, true) * groups[0].1.len() as f64
            + probe.rate(&groups[1].1, false) * groups[1].1.len() as f64)
            / n_clean,
        crossed_removal: probe.rate(&groups[2].1, false),
        crossed_forgery: probe.rate(&groups[3].1, true),
        returned_removal: probe.rate(&groups[4].1, true),
        returned_forgery: probe.rate(&groups[5].1, false),
    };
    let rows = groups
        .iter()
        .flat_map(|(g, pts)| pts.iter().map(move |p| PcaRow { group: (*g).to_string(), pc1: p[0], pc2: p[1] }))
        .collect();
    Ok(Some((stats, rows)))
}

fn row_auc(ev: &EvalMap, pop: Population, profile: Profile) -> Result<f64> {
    let s = |p| ev.get(&(p, profile)).map(|d| scores(d)).unwrap_or_default();
    let (pos, neg) = match pop {
        Population::Watermarked | Population::Unwatermarked => {
            (s(Population::Watermarked), s(Population::Unwatermarked))
        }
        Population::Removed => (s(Population::Removed), s(Population::Unwatermarked)),
        Population::Forged => (s(Population::Watermarked), s(Population::Forged)),
    };
    auc_of(&pos, &neg)
}

/// Evaluates precomputed populations under every configured profile.
pub fn evaluate_populations(pipe: &Pipeline, all: &[Populations]) -> Result<ExperimentResults> {
    let cfg = &pipe.cfg;
    let mut results = ExperimentResults {
        table: ResultsTable::default(),
        timings: Vec::new(),
        detections: Vec::new(),
        pca: BTreeMap::new(),
        schemes: BTreeMap::new(),
    };
    for pops in all {
        let scheme = pops.key.scheme();
        let mut ev: EvalMap = BTreeMap::new();
        for &profile in &cfg.profiles {
            for pop in Population::ALL {
                let d = pipe.evaluate(pops, pop, profile).map_err(|e| WmError::Row {
                    row: format!("{scheme}/{profile}/{}", pop.name()),
                    source: Box::new(e),
                })?;
                ev.insert((pop, profile), d);
            }
        }
        for (&(pop, profile), d) in &ev {
            let steps = match pop {
                Population::Removed => cfg.removal.steps,
                Population::Forged => cfg.forgery.steps,
                _ => 0,
            };
            results.table.rows.push(ResultRow {
                scheme,
                defense: profile,
                attack: pop.attack_name().to_string(),
                steps,
                det_rate: det_rate(d),
                bit_acc: mean_bit_acc(d),
                auc: row_auc(&ev, pop, profile)?,
            });
            let ms = [mean_ms(d, 0), mean_ms(d, 1), mean_ms(d, 2)];
            results.timings.push(TimingRow {
                scheme,
                defense: profile,
                attack: pop.attack_name().to_string(),
                stage1_ms: ms[0],
                stage2_ms: ms[1],
                stage3_ms: ms[2],
                total_ms: ms.iter().sum(),
            });
            results.detections.extend(d.iter().enumerate().map(|(index, x)| DetectionRow {
                scheme,
                defense: profile,
                population: pop,
                index,
                statistic: x.report.statistic,
                threshold: x.report.threshold,
                detected: x.report.detected,
                bit_accuracy: x.report.bit_accuracy,
                p_value: x.report.p_value,
            }));
        }
        let regions = region_stats(&ev)?;
        if let Some((_, rows)) = &regions {
            results.pca.insert(scheme, rows.clone());
        }
        results
            .schemes
            .insert(scheme, SchemeSummary { threshold: pops.key.threshold(), regions: regions.map(|r| r.0) });
    }
    results.table.rows.sort_by(|a, b| {
        (a.scheme, a.defense, &a.attack).cmp(&(b.scheme, b.defense, &b.attack))
    });
    Ok(results)
}

/// Generates all populations and evaluates them.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    let pipe = Pipeline::new(cfg.clone())?;
    let pops = cfg.schemes.iter().map(|&s| pipe.populations(s)).collect::<Result<Vec<_>>>()?;
    evaluate_populations(&pipe, &pops)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    KStop,
    SSkip,
    Gamma,
    AttackSteps,
}

impl std::str::FromStr for SweepAxis {
    type Err = WmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k_stop" | "k" => Ok(Self::KStop),
            "s_skip" | "s" => Ok(Self::SSkip),
            "gamma" => Ok(Self::Gamma),
            "attack_steps" => Ok(Self::AttackSteps),
            _ => Err(WmError::InvalidConfig(format!("unknown sweep axis {s:?}"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::KStop => "k_stop",
            Self::SSkip => "s_skip",
            Self::Gamma => "gamma",
            Self::AttackSteps => "attack_steps",
        }
    }

    /// `cfg` with this axis set to `value`; PGID axes modify `profile`,
    /// `attack_steps` modifies the attack matching `profile` (forgery for
    /// PGID-F, removal otherwise).
    pub fn apply(self, cfg: &ExperimentConfig, profile: Profile, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = cfg.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(WmError::InvalidConfig(format!("{} needs a nonnegative integer, got {v}", self.name())))
            }
        };
        match self {
            Self::AttackSteps => {
                let steps = as_count(value)?;
                if profile == Profile::PgidF {
                    cfg.forgery.steps = steps;
                } else {
                    cfg.removal.steps = steps;
                }
            }
            _ => {
                let p = cfg
                    .defenses
                    .get_mut(profile)
                    .ok_or_else(|| WmError::InvalidConfig("sweeps need a PGID profile".into()))?;
                match self {
                    Self::KStop => p.k_stop = as_count(value)?,
                    Self::SSkip => p.s_skip = as_count(value)?,
                    Self::Gamma => p.gamma = value,
                    Self::AttackSteps => unreachable!(),
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub scheme: Scheme,
    pub defense: Profile,
    pub attack: String,
    pub steps: usize,
    pub det_rate: f64,
    pub bit_acc: Option<f64>,
    pub auc: f64,
}

/// One experiment per value. Populations are generated once unless the
/// axis changes the attacks.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    profile: Profile,
) -> Result<Vec<(f64, ExperimentResults)>> {
    if values.is_empty() {
        return Err(WmError::InvalidConfig("sweep needs at least one value".into()));
    }
    let cfgs = values.iter().map(|&v| axis.apply(cfg, profile, v)).collect::<Result<Vec<_>>>()?;
    if axis == SweepAxis::AttackSteps {
        return values.iter().zip(&cfgs).map(|(&v, c)| Ok((v, run_experiment(c)?))).collect();
    }
    let base = Pipeline::new(cfg.clone())?;
    let pops = cfg.schemes.iter().map(|&s| base.populations(s)).collect::<Result<Vec<_>>>()?;
    values
        .iter()
        .zip(cfgs)
        .map(|(&v, c)| Ok((v, evaluate_populations(&Pipeline::new(c)?, &pops)?)))
        .collect()
}

pub fn sweep_rows(axis: SweepAxis, runs: &[(f64, ExperimentResults)]) -> Vec<SweepRow> {
    runs.iter()
        .flat_map(|(v, r)| {
            r.table.rows.iter().map(move |row| SweepRow {
                axis: axis.name().into(),
                value: *v,
                scheme: row.scheme,
                defense: row.defense,
                attack: row.attack.clone(),
                steps: row.steps,
                det_rate: row.det_rate,
                bit_acc: row.bit_acc,
                auc: row.auc,
            })
        })
        .collect()
}

/// Averaging-attack outcome on one scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragingResult {
    pub scheme: Scheme,
    pub residual_count: usize,
    pub det_clean: f64,
    pub det_attacked: f64,
    pub det_attacked_pgid_r: f64,
}

/// Subtracts the mean watermarked-minus-clean residual of `n_avg` image
/// pairs from each watermarked target, then detects with and without PGID-R.
pub fn run_averaging(cfg: &ExperimentConfig, scheme: Scheme, n_avg: usize) -> Result<AveragingResult> {
    let pipe = Pipeline::new(cfg.clone())?;
    let key = pipe.calibrated_key(scheme)?;
    let wm_set = pipe.watermarked_images(&key, n_avg, &format!("{scheme}/avg-watermarked"))?;
    let clean_set = pipe.clean_images(n_avg, &format!("{scheme}/avg-clean"))?;
    let targets = pipe.watermarked_images(&key, cfg.population, &format!("{scheme}/avg-target"))?;
    let attacked = targets
        .iter()
        .map(|t| averaging_attack(&wm_set, &clean_set, t))
        .collect::<Result<Vec<_>>>()?;
    let rate = |imgs: &[Image<f64>], label: &str, d: Option<PgidConfig>| -> Result<f64> {
        Ok(det_rate(&pipe.detect_all(&key, imgs, label, d.as_ref())?))
    };
    let label = format!("{scheme}/avg-attacked");
    Ok(AveragingResult {
        scheme,
        residual_count: n_avg,
        det_clean: rate(&targets, &format!("{scheme}/avg-target"), None)?,
        det_attacked: rate(&attacked, &label, None)?,
        det_attacked_pgid_r: rate(&attacked, &label, pipe.defense(Profile::PgidR))?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub stage1_ms: f64,
    pub stage2_ms: f64,
    pub stage3_ms: f64,
    pub total_ms: f64,
    pub predicted_stage2_steps: usize,
    pub measured_stage2_steps: usize,
}

/// Mean per-stage runtime of standard inversion and each PGID profile over
/// `n` unwatermarked images, with stage-II step counts.
pub fn bench(cfg: &ExperimentConfig, n: usize) -> Result<Vec<BenchRow>> {
    let pipe = Pipeline::new(cfg.clone())?;
    let imgs = pipe.clean_images(n.max(1), "bench")?;
    let latents: Vec<Latent<f64>> = imgs.iter().enumerate().map(|(i, x)| pipe.encode(x, "bench", i)).collect();
    let mut rows = Vec::new();
    for profile in Profile::ALL {
        let defense = pipe.defense(profile);
        let mut times = [Duration::ZERO; 3];
        let mut measured = 0;
        for z in &latents {
            let (_, tr) = pipe.extract(z, defense.as_ref())?;
            for (t, s) in times.iter_mut().zip(tr.stage_times) {
                *t += s;
            }
            measured = tr.stage2.inversions + tr.stage2.denoisings;
        }
        let ms = times.map(|t| t.as_secs_f64() * 1e3 / latents.len() as f64);
        let predicted = defense.map_or(0, |c| {
            let p = c.predicted_steps();
            p.inversions + p.denoisings
        });
        rows.push(BenchRow {
            method: if profile == Profile::Baseline { "ddim".into() } else { profile.name().into() },
            stage1_ms: ms[0],
            stage2_ms: ms[1],
            stage3_ms: ms[2],
            total_ms: ms.iter().sum(),
            predicted_stage2_steps: predicted,
            measured_stage2_steps: measured,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub scheme: Scheme,
    pub target_fpr: f64,
    pub threshold: f64,
}

pub fn calibrate(cfg: &ExperimentConfig) -> Result<Vec<CalibrationRow>> {
    let pipe = Pipeline::new(cfg.clone())?;
    cfg.schemes
        .iter()
        .map(|&s| {
            let key = pipe.calibrated_key(s)?;
            Ok(CalibrationRow {
                scheme: s,
                target_fpr: cfg.keys.target_fpr(s),
                threshold: key.threshold().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Images with a group tag, stored as CSV rows `group,index,v0,…`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageSet {
    pub entries: Vec<(String, Image<f64>)>,
}

impl ImageSet {
    pub fn push_all(&mut self, group: &str, images: &[Image<f64>]) {
        self.entries.extend(images.iter().map(|x| (group.to_string(), x.clone())));
    }

    pub fn group(&self, group: &str) -> Vec<Image<f64>> {
        self.entries.iter().filter(|(g, _)| g == group).map(|(_, x)| x.clone()).collect()
    }

    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.entries.iter().map(|(g, _)| g.clone()).collect();
        g.dedup();
        g
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let d = self.entries.first().map_or(0, |e| e.1.len());
        let mut header = vec!["group".to_string(), "index".to_string()];
        header.extend((0..d).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
        for (g, x) in &self.entries {
            let idx = counters.entry(g).or_default();
            let mut rec = vec![g.clone(), idx.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
            *idx += 1;
        }
        let bytes = w.into_inner().map_err(|e| WmError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let group = rec.get(0).unwrap_or_default().to_string();
            let values = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map_err(|e| WmError::InvalidConfig(format!("bad value {v:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            entries.push((group, values));
        }
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str("seed = 11\npopulation = 3\n[defenses.pgid_r]\nk_stop = 5\ns_skip = 1\ngamma = 0.0\n").unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.population, 3);
        assert_eq!(cfg.defenses.pgid_r.k_stop, 5);
        assert_eq!(cfg.defenses.pgid_f, PgidConfig::FORGERY);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ExperimentConfig::from_toml_str("population = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("[defenses.pgid_r]\nk_stop = 60\ns_skip = 1\ngamma = 0.1").is_err());
    }

    #[test]
    fn sweep_axis_application() {
        let cfg = ExperimentConfig::default();
        let c = SweepAxis::SSkip.apply(&cfg, Profile::PgidR, 3.0).unwrap();
        assert_eq!(c.defenses.pgid_r.s_skip, 3);
        assert!(SweepAxis::KStop.apply(&cfg, Profile::PgidR, 2.5).is_err());
        assert!(SweepAxis::Gamma.apply(&cfg, Profile::Baseline, 0.1).is_err());
        let c = SweepAxis::AttackSteps.apply(&cfg, Profile::PgidF, 7.0).unwrap();
        assert_eq!(c.forgery.steps, 7);
    }

    #[test]
    fn image_set_round_trip() {
        let mut s = ImageSet::default();
        s.push_all("a", &[vec![0.1, -2.5e-7], vec![3.0, 4.0]]);
        s.push_all("b", &[vec![1.0 / 3.0, 0.0]]);
        let back = ImageSet::from_csv(&s.to_csv().unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.groups(), vec!["a".to_string(), "b".to_string()]);
    }
}
