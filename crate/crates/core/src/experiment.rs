//! TOML experiment configs, ablation arms and multi-seed runs.
//!
//! ```toml
//! name = "desk"
//!
//! [data]
//! seed = 7
//! [data.synthetic]
//! height = 16
//! width = 16
//! channels = 1
//! classes_per_domain = [4, 4, 4, 5, 2, 8]
//! train_per_class = 40
//! test_per_class = 20
//!
//! [schedule]
//! base_domains = [0, 1, 2]
//! incremental_domains = [3, 4, 5]
//! layout = "single-domain"
//! shots = 1
//!
//! [loss]
//! lambda = 0.8
//!
//! [augment]
//! pseudo_op = "mixup"
//! alpha = 1.0
//! pseudo_per_batch = 8
//!
//! [run]
//! seeds = [1, 2, 3]
//! ```
//!
//! Omitted sections take library defaults. Relative paths resolve against
//! the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{MixKind, MixOp, StandardAugment};
use crate::data::{self, generate_synthetic, load_split, DatasetPool, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::protocol::{
    render_table, run_protocol, IncrementalLayout, ModelConfig, ProtocolConfig, ProtocolReport, RunSeeds,
    SessionSchedule, TrainOptions,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub run: RunConfig,
}

fn default_name() -> String {
    "experiment".into()
}

/// Exactly one of `synthetic` or `manifests`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Generator seed for synthetic data.
    #[serde(default)]
    pub seed: u64,
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub manifests: Vec<ManifestPair>,
}

/// Train and test manifests of one pool member. `test` defaults to
/// `train` for manifests holding both splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPair {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
}

/// A schedule file, a named preset, or a layout over pool domains.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub path: Option<PathBuf>,
    pub preset: Option<SchedulePreset>,
    #[serde(default)]
    pub base_domains: Vec<usize>,
    #[serde(default)]
    pub incremental_domains: Vec<usize>,
    pub layout: Option<IncrementalLayout>,
    pub shots: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulePreset {
    /// Fifteen 1-way 1-shot sessions over the MedMNIST pool.
    MedmnistOneWay,
    /// Three single-domain 1-shot sessions over the MedMNIST pool.
    MedmnistSingleDomain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        TrainConfig {
            lr: t.lr,
            momentum: t.momentum,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            val_fraction: t.val_fraction,
            threads: t.threads,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub pseudo_op: MixKind,
    pub alpha: f64,
    /// Cutmix/cutout patch side fraction.
    pub patch: f64,
    pub pseudo_per_batch: usize,
    pub standard: StandardAugment,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        AugmentConfig {
            pseudo_op: t.mix.kind,
            alpha: t.mix.alpha,
            patch: t.mix.patch,
            pseudo_per_batch: t.pseudo_per_batch,
            standard: t.augment,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    /// Seed of the incremental shot draw; each run's model seed if unset.
    pub shot_seed: Option<u64>,
    pub out: PathBuf,
    /// Ablation arms run next to the full method.
    pub ablations: Vec<Ablation>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![0],
            shot_seed: None,
            out: PathBuf::from("out"),
            ablations: Vec::new(),
        }
    }
}

/// Configuration changes that turn the full method into a comparison arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Drop the domain loss: `λ = 1`.
    NoLd,
    /// Drop pseudo classes.
    NoPseudo,
    /// Neither domain loss nor pseudo classes.
    Baseline,
    /// Plain cosine softmax: `λ = 1`, no margin, no pseudo classes.
    Plain,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::NoLd, Ablation::NoPseudo, Ablation::Baseline, Ablation::Plain];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::NoLd => "no-ld",
            Ablation::NoPseudo => "no-pseudo",
            Ablation::Baseline => "baseline",
            Ablation::Plain => "plain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|a| a.as_str()).collect();
            Error::Usage(format!("unknown ablation '{s}'; expected one of {}", names.join(", ")))
        })
    }

    pub fn apply(self, cfg: &mut ExperimentConfig) {
        let (no_ld, no_pseudo, no_margin) = match self {
            Ablation::NoLd => (true, false, false),
            Ablation::NoPseudo => (false, true, false),
            Ablation::Baseline => (true, true, false),
            Ablation::Plain => (true, true, true),
        };
        if no_ld {
            cfg.loss.lambda = 1.0;
        }
        if no_pseudo {
            cfg.augment.pseudo_per_batch = 0;
        }
        if no_margin {
            cfg.loss.m_a = 0.0;
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Parse, resolve relative paths against `base_dir` and validate.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        for m in &mut cfg.data.manifests {
            resolve(&mut m.train);
            if let Some(t) = &mut m.test {
                resolve(t);
            }
        }
        if let Some(p) = &mut cfg.schedule.path {
            resolve(p);
        }
        resolve(&mut cfg.run.out);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fully resolved configuration as TOML; loading it reproduces `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        match (&d.synthetic, d.manifests.is_empty()) {
            (Some(_), false) | (None, true) => {
                return Err(Error::Config(
                    "[data] needs exactly one of `synthetic` or `manifests`".into(),
                ))
            }
            _ => {}
        }
        for m in &d.manifests {
            for p in std::iter::once(&m.train).chain(&m.test) {
                if !p.exists() {
                    return Err(Error::Config(format!("manifest {} does not exist", p.display())));
                }
            }
        }
        let s = &self.schedule;
        let by_domains = !s.base_domains.is_empty();
        let sources = usize::from(s.path.is_some()) + usize::from(s.preset.is_some()) + usize::from(by_domains);
        if sources != 1 {
            return Err(Error::Config(
                "[schedule] needs exactly one of `path`, `preset` or `base_domains`".into(),
            ));
        }
        if let Some(p) = &s.path {
            if !p.exists() {
                return Err(Error::Config(format!("schedule {} does not exist", p.display())));
            }
        }
        if !by_domains && (s.layout.is_some() || s.shots.is_some() || !s.incremental_domains.is_empty()) {
            return Err(Error::Config(
                "`layout`, `shots` and `incremental_domains` only apply with `base_domains`".into(),
            ));
        }
        if self.model.embed_dim == 0 {
            return Err(Error::Config("model.embed_dim must be positive".into()));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds is empty".into()));
        }
        self.loss.validate()?;
        self.protocol_config().train.validate()
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        let (t, a) = (&self.train, &self.augment);
        ProtocolConfig {
            model: self.model.clone(),
            loss: self.loss,
            train: TrainOptions {
                lr: t.lr,
                momentum: t.momentum,
                batch_size: t.batch_size,
                epochs: t.epochs,
                patience: t.patience,
                val_fraction: t.val_fraction,
                augment: a.standard,
                pseudo_per_batch: a.pseudo_per_batch,
                mix: MixOp {
                    kind: a.pseudo_op,
                    alpha: a.alpha,
                    patch: a.patch,
                },
                threads: t.threads,
            },
        }
    }

    pub fn load_pool(&self) -> Result<DatasetPool> {
        if let Some(spec) = &self.data.synthetic {
            let (train, test) = generate_synthetic(spec, self.data.seed)?;
            return DatasetPool::single(train, test);
        }
        let pairs = self
            .data
            .manifests
            .iter()
            .map(|m| {
                let train = load_split(&m.train, Split::Train)?;
                let test = load_split(m.test.as_ref().unwrap_or(&m.train), Split::Test)?;
                Ok((train, test))
            })
            .collect::<Result<Vec<_>>>()?;
        DatasetPool::new(pairs)
    }

    pub fn load_schedule(&self, pool: &DatasetPool) -> Result<SessionSchedule> {
        let s = &self.schedule;
        if let Some(p) = &s.path {
            return SessionSchedule::read(p);
        }
        if let Some(preset) = s.preset {
            return Ok(match preset {
                SchedulePreset::MedmnistOneWay => data::medmnist::one_way_one_shot(),
                SchedulePreset::MedmnistSingleDomain => data::medmnist::single_domain_one_shot(),
            });
        }
        SessionSchedule::from_domains(
            pool,
            &s.base_domains,
            &s.incremental_domains,
            s.layout.unwrap_or(IncrementalLayout::SingleDomain),
            s.shots.unwrap_or(1),
        )
    }

    pub fn seeds_for(&self, seed: u64) -> RunSeeds {
        RunSeeds {
            model: seed,
            shots: self.run.shot_seed.unwrap_or(seed),
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub seeds: Vec<u64>,
    pub pd: Vec<f64>,
    pub pd_mean: f64,
    pub pd_std: f64,
    /// `A_t` averaged over seeds, per session.
    pub average_accuracy_mean: Vec<f64>,
    pub average_accuracy_std: Vec<f64>,
}

impl ArmSummary {
    pub fn from_reports(arm: &str, runs: &[(u64, ProtocolReport)]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::Validation(format!("arm {arm} has no runs")))?;
        let sessions = first.1.average_accuracy.len();
        if runs.iter().any(|(_, r)| r.average_accuracy.len() != sessions) {
            return Err(Error::Validation(format!("runs of arm {arm} differ in session count")));
        }
        let pd: Vec<f64> = runs.iter().map(|(_, r)| r.pd).collect();
        let (pd_mean, pd_std) = mean_std(&pd);
        let (mut means, mut stds) = (Vec::new(), Vec::new());
        for t in 0..sessions {
            let col: Vec<f64> = runs.iter().map(|(_, r)| r.average_accuracy[t]).collect();
            let (m, s) = mean_std(&col);
            means.push(m);
            stds.push(s);
        }
        Ok(ArmSummary {
            arm: arm.to_string(),
            seeds: runs.iter().map(|(s, _)| *s).collect(),
            pd,
            pd_mean,
            pd_std,
            average_accuracy_mean: means,
            average_accuracy_std: stds,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub arms: Vec<ArmSummary>,
}

impl ExperimentSummary {
    /// Session table with one row of seed-averaged `A_t` per arm.
    pub fn table(&self) -> String {
        let rows: Vec<(String, Vec<f64>, f64)> = self
            .arms
            .iter()
            .map(|a| (a.arm.clone(), a.average_accuracy_mean.clone(), a.pd_mean))
            .collect();
        render_table(&rows)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Paths written for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub arm: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub report: ProtocolReport,
}

/// Run the full method plus `extra` ablation arms over every seed.
///
/// Writes `<out>/<name>/<arm>/seed-<s>/{report.json, report.csv,
/// config.lock}` and `<out>/<name>/summary.json`, where `out` is `out_root`
/// if given, else `run.out`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    extra: &[Ablation],
    out_root: Option<&Path>,
) -> Result<(ExperimentSummary, Vec<RunOutput>)> {
    let pool = cfg.load_pool()?;
    let schedule = cfg.load_schedule(&pool)?;
    let root = out_root.unwrap_or(&cfg.run.out).join(&cfg.name);

    let mut arms: Vec<(String, ExperimentConfig)> = vec![("full".into(), cfg.clone())];
    for &a in cfg.run.ablations.iter().chain(extra) {
        if arms.iter().any(|(n, _)| n == a.as_str()) {
            continue;
        }
        let mut c = cfg.clone();
        a.apply(&mut c);
        c.run.ablations.clear();
        arms.push((a.as_str().into(), c));
    }

    let mut summaries = Vec::new();
    let mut outputs = Vec::new();
    for (arm, arm_cfg) in &arms {
        let protocol = arm_cfg.protocol_config();
        let mut runs = Vec::new();
        for &seed in &cfg.run.seeds {
            log::info!("{}: arm {arm}, seed {seed}", cfg.name);
            let report = run_protocol(&pool, &schedule, &protocol, &cfg.seeds_for(seed))?;
            let dir = root.join(arm).join(format!("seed-{seed}"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            report.write_json(&dir.join("report.json"))?;
            report.write_csv(&dir.join("report.csv"))?;
            let mut lock = arm_cfg.clone();
            lock.run.seeds = vec![seed];
            let lock_path = dir.join("config.lock");
            fs::write(&lock_path, lock.to_toml()).map_err(|e| Error::io(&lock_path, e))?;
            runs.push((seed, report.clone()));
            outputs.push(RunOutput {
                arm: arm.clone(),
                seed,
                dir,
                report,
            });
        }
        summaries.push(ArmSummary::from_reports(arm, &runs)?);
    }
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        arms: summaries,
    };
    let path = root.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok((summary, outputs))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "small"
[data]
seed = 3
[data.synthetic]
height = 8
width = 8
channels = 1
classes_per_domain = [2, 2, 1]
train_per_class = 6
test_per_class = 3
[schedule]
base_domains = [0, 1]
incremental_domains = [2]
[model]
arch = "affine"
embed_dim = 8
precision = "f64"
[train]
epochs = 2
batch_size = 8
[augment]
pseudo_per_batch = 2
standard = { enabled = false }
[run]
seeds = [1, 2]
ablations = ["no-ld"]
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(SMALL, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.loss, LossConfig::default());
        assert_eq!(cfg.run.out, PathBuf::from("/cfg/out"));
        assert_eq!(cfg.train.lr, TrainOptions::default().lr);
        assert!(!cfg.augment.standard.enabled);
        let p = cfg.protocol_config();
        assert_eq!(p.train.pseudo_per_batch, 2);
        assert_eq!(p.train.epochs, 2);
    }

    #[test]
    fn partial_sections_take_defaults() {
        let text = SMALL.replace("precision = \"f64\"\n", "") + "[loss]\nlambda = 1.0\n";
        let cfg = ExperimentConfig::from_toml(&text, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.model.precision, crate::protocol::Precision::F64);
        assert_eq!(cfg.loss.r_a, LossConfig::default().r_a);
        assert_eq!(cfg.loss.lambda, 1.0);
        let missing = ExperimentConfig::load("/nonexistent/config.toml").unwrap_err();
        assert_eq!(missing.exit_code(), 1);
    }

    #[test]
    fn lock_roundtrips() {
        let cfg = ExperimentConfig::from_toml(SMALL, Path::new("/cfg")).unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            SMALL.replace("[data.synthetic]", "[data.bogus]"),
            SMALL.replace("base_domains = [0, 1]", "base_domains = []"),
            SMALL.replace("seeds = [1, 2]", "seeds = []"),
            SMALL.replace("embed_dim = 8", "embed_dim = 0"),
            SMALL.replace("[loss]", "") + "[loss]\nlambda = 2.0\n",
            SMALL.replace("pseudo_per_batch = 2", "pseudo_per_batch = 2\npseudo_op = \"cutout\""),
            SMALL.replace("[schedule]", "[schedule]\npath = \"missing.json\""),
        ];
        for text in cases {
            let e = ExperimentConfig::from_toml(&text, Path::new("/cfg")).unwrap_err();
            assert!(matches!(e, Error::Config(_) | Error::Validation(_)), "{e:?}");
            assert_eq!(e.exit_code(), 1);
        }
    }

    #[test]
    fn ablation_arms() {
        let mut cfg = ExperimentConfig::from_toml(SMALL, Path::new("/cfg")).unwrap();
        Ablation::Plain.apply(&mut cfg);
        assert_eq!((cfg.loss.lambda, cfg.loss.m_a, cfg.augment.pseudo_per_batch), (1.0, 0.0, 0));
        assert!(Ablation::parse("nope").is_err());
        assert_eq!(Ablation::parse("no-ld").unwrap(), Ablation::NoLd);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.2909944487358056).abs() < 1e-15);
    }

    #[test]
    fn writes_reports_for_every_arm_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml(SMALL, dir.path()).unwrap();
        let (summary, outputs) = run_experiment(&cfg, &[Ablation::Baseline], None).unwrap();
        assert_eq!(summary.arms.len(), 3);
        assert_eq!(outputs.len(), 6);
        for o in &outputs {
            for f in ["report.json", "report.csv", "config.lock"] {
                assert!(o.dir.join(f).exists());
            }
        }
        let lock = ExperimentConfig::load(outputs[0].dir.join("config.lock")).unwrap();
        assert_eq!(lock.run.seeds, vec![1]);
        assert!(dir.path().join("out/small/summary.json").exists());
        assert!(summary.table().starts_with("Session "));
    }
}
