//! The experiment configuration document and dotted-path overrides.

use std::path::{Path, PathBuf};

use ftn_core::data::{CifarKind, PoolTarget, Regime, ZCA_LAMBDA};
use ftn_core::lstm_pool::{ModulationActivation, PoolSharingMode};
use ftn_core::nn::{NetworkSpec, PoolChoice, PoolKind};
use ftn_core::optim::{LrSchedule, MetricMode};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Approx,
    Classify,
    AnalyzeLocations,
    AnalyzeResponse,
    Gradcheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Approx => "approx",
            ExperimentKind::Classify => "classify",
            ExperimentKind::AnalyzeLocations => "analyze_locations",
            ExperimentKind::AnalyzeResponse => "analyze_response",
            ExperimentKind::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub approx: ApproxConfig,
    pub classify: ClassifyConfig,
    pub analyze_locations: LocationsConfig,
    pub analyze_response: ResponseConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Classify,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            approx: ApproxConfig::default(),
            classify: ClassifyConfig::default(),
            analyze_locations: LocationsConfig::default(),
            analyze_response: ResponseConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Training a single pooling unit to mimic max or average pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxConfig {
    /// Region lengths (k²); each of 4, 9 and 16 is allowed.
    pub lens: Vec<usize>,
    pub target: PoolTarget,
    pub psi: ModulationActivation,
    /// Training and validation batches cycle through these regimes.
    pub train_regimes: Vec<Regime>,
    /// Independent initializations per region length; the one with the
    /// lowest validation MAE is kept.
    pub restarts: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    /// Upper bound on training epochs.
    pub epochs: usize,
    pub batches_per_epoch: usize,
    /// Batches in the validation stream and in each test regime.
    pub eval_batches: usize,
    pub clip_norm: Option<f64>,
    pub schedule: LrSchedule,
    /// Stop once the learning rate has reached the schedule floor and
    /// validation has not improved for this many further epochs.
    pub stop_after_floor: Option<usize>,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            lens: vec![4, 9, 16],
            target: PoolTarget::Max,
            psi: ModulationActivation::Relu,
            train_regimes: Regime::ALL.to_vec(),
            restarts: 3,
            lr: 0.1,
            momentum: 0.9,
            batch: 128,
            epochs: 50,
            batches_per_epoch: 10_000,
            eval_batches: 10_000,
            clip_norm: Some(1.0),
            schedule: LrSchedule::Plateau {
                patience: 1,
                factor: 0.1,
                min_lr: 1e-6,
                mode: MetricMode::Min,
            },
            stop_after_floor: Some(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkPreset {
    ConvN,
    Vgg16,
}

/// The network to train: a preset plus pooling choice, or an inline spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub preset: NetworkPreset,
    /// Conv_N width.
    pub n: usize,
    /// VGG16 width multiplier.
    pub multiplier: f64,
    pub pool: PoolKind,
    pub sharing: PoolSharingMode,
    /// ψ of the pooling units; defaults to the network's activation.
    pub psi: Option<ModulationActivation>,
    /// Used instead of the preset when present.
    pub spec: Option<NetworkSpec>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            preset: NetworkPreset::ConvN,
            n: 8,
            multiplier: 1.0,
            pool: PoolKind::Max,
            sharing: PoolSharingMode::PerLayer,
            psi: None,
            spec: None,
        }
    }
}

impl NetworkConfig {
    pub fn build_spec(&self, classes: usize) -> NetworkSpec {
        if let Some(s) = &self.spec {
            return s.clone();
        }
        let pool = match self.pool {
            PoolKind::Max => PoolChoice::Max,
            PoolKind::Avg => PoolChoice::Avg,
            PoolKind::Lstm => PoolChoice::Lstm {
                sharing: self.sharing,
                psi: self.psi,
            },
        };
        match self.preset {
            NetworkPreset::ConvN => NetworkSpec::conv_n(self.n, pool),
            NetworkPreset::Vgg16 => NetworkSpec::vgg16(self.multiplier, classes, pool),
        }
    }
}

/// Where the images come from and how they are prepared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: CifarKind,
    /// Directory holding the binary files; `FTN_DATA_ROOT` overrides the
    /// parent directory.
    pub root: PathBuf,
    /// First N training images (all when absent).
    pub train_subset: Option<usize>,
    /// First N test images (all when absent).
    pub test_subset: Option<usize>,
    pub zca_lambda: f64,
    pub whitening_cache: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset: CifarKind::Cifar10,
            root: PathBuf::from("data/cifar-10-batches-bin"),
            train_subset: None,
            test_subset: None,
            zca_lambda: ZCA_LAMBDA,
            whitening_cache: Some(PathBuf::from("data/cache")),
        }
    }
}

impl DataConfig {
    /// Dataset directory after applying `FTN_DATA_ROOT`.
    pub fn resolved_root(&self) -> PathBuf {
        match std::env::var_os("FTN_DATA_ROOT") {
            Some(r) => {
                let name = self.root.file_name().map(PathBuf::from).unwrap_or_default();
                Path::new(&r).join(name)
            }
            None => self.root.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub iterations: u64,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    pub schedule: LrSchedule,
    pub eval_every: u64,
    pub augment: bool,
    /// Negative control: permute the training labels.
    pub shuffle_labels: bool,
    pub wg_epsilon: f64,
    /// Learning-rate multiplier for the pooling-unit parameters.
    pub pool_lr_scale: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            data: DataConfig::default(),
            network: NetworkConfig::default(),
            iterations: 122_000,
            batch: 100,
            lr: 0.01,
            momentum: 0.9,
            clip_norm: Some(10.0),
            schedule: LrSchedule::Step {
                milestones: vec![50_000, 90_000],
                factor: 0.1,
            },
            eval_every: 1000,
            augment: true,
            shuffle_labels: false,
            wg_epsilon: ftn_core::lstm_pool::DEFAULT_WG_EPSILON,
            pool_lr_scale: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocationsConfig {
    pub checkpoint: PathBuf,
    /// Images are prepared exactly as for training.
    pub data: DataConfig,
    pub n_patches: usize,
    /// Spec index of the max-pool layer; the first one when absent.
    pub layer: Option<usize>,
}

impl Default for LocationsConfig {
    fn default() -> Self {
        LocationsConfig {
            checkpoint: PathBuf::from("checkpoint.ftn"),
            data: DataConfig::default(),
            n_patches: 5000,
            layer: None,
        }
    }
}

/// Where the probed pooling units come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnitSource {
    /// Every learnable pooling layer of a checkpoint.
    Checkpoint { path: PathBuf },
    /// The units trained by an `approx` run, one per region length.
    ApproxReport { dir: PathBuf },
    /// One explicit unit.
    Params {
        params: [f64; 12],
        k: usize,
        psi: ModulationActivation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseConfig {
    pub source: UnitSource,
    pub n: usize,
    pub fixed_max: f64,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        ResponseConfig {
            source: UnitSource::Checkpoint {
                path: PathBuf::from("checkpoint.ftn"),
            },
            n: 1000,
            fixed_max: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Relative central-difference step for the layer checks.
    pub step: f64,
    pub step_network: f64,
    pub rtol_layer: f64,
    pub rtol_network: f64,
    /// Random points for the end-to-end check.
    pub points: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-3,
            step_network: 1e-5,
            rtol_layer: 1e-4,
            rtol_network: 1e-3,
            points: 5,
        }
    }
}

/// Set `path` (dot-separated keys) inside a JSON document. The value is
/// parsed as JSON when possible, otherwise taken as a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), RunError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| RunError::Config(format!("override `{assignment}` is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(RunError::Config(format!("override key `{path}` has an empty segment")));
    }
    let mut cur = doc;
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| RunError::Config(format!("override `{path}`: `{}` is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    unreachable!("non-empty key path")
}

impl ExperimentConfig {
    /// Defaults, then the document at `path`, then each override in order.
    pub fn load(path: Option<&Path>, kind: ExperimentKind, overrides: &[String]) -> Result<Self, RunError> {
        let mut doc = serde_json::to_value(ExperimentConfig {
            kind,
            ..Default::default()
        })
        .expect("defaults serialize");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| RunError::Config(format!("reading {}: {e}", p.display())))?;
            let user: Value =
                serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", p.display())))?;
            merge(&mut doc, user);
        }
        doc["kind"] = serde_json::to_value(kind).expect("kind serializes");
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(doc).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        let a = &self.approx;
        if let Some(l) = a.lens.iter().find(|l| ![4, 9, 16].contains(*l)) {
            return bad(format!("approx.lens: {l} is not one of 4, 9, 16"));
        }
        if a.batch == 0 || a.batches_per_epoch == 0 || a.eval_batches == 0 || a.restarts == 0 {
            return bad("approx: batch sizes, counts and restarts must be positive".into());
        }
        if a.train_regimes.is_empty() {
            return bad("approx.train_regimes is empty".into());
        }
        let c = &self.classify;
        if c.batch == 0 || c.eval_every == 0 {
            return bad("classify: batch and eval_every must be positive".into());
        }
        if !(c.pool_lr_scale > 0.0) {
            return bad(format!("classify.pool_lr_scale must be positive, got {}", c.pool_lr_scale));
        }
        for (name, s) in [("approx.schedule", &a.schedule), ("classify.schedule", &c.schedule)] {
            s.validate().map_err(|e| RunError::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

/// Recursive merge of `src` into `dst`; objects merge, everything else replaces.
fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (d, s) => *d = s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_set_nested_values() {
        let cfg = ExperimentConfig::load(
            None,
            ExperimentKind::Approx,
            &[
                "approx.lr=0.05".into(),
                "approx.lens=[9]".into(),
                "approx.target=avg".into(),
                "out_dir=runs/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.approx.lr, 0.05);
        assert_eq!(cfg.approx.lens, vec![9]);
        assert_eq!(cfg.approx.target, PoolTarget::Avg);
        assert_eq!(cfg.out_dir, PathBuf::from("runs/x"));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = ExperimentConfig::load(None, ExperimentKind::Approx, &["approx.learning_rate=1".into()]).unwrap_err();
        assert!(matches!(err, RunError::Config(_)), "{err}");
        assert!(ExperimentConfig::load(None, ExperimentKind::Approx, &["approx.lens=[5]".into()]).is_err());
        assert!(ExperimentConfig::load(None, ExperimentKind::Approx, &["noequals".into()]).is_err());
        assert!(ExperimentConfig::load(None, ExperimentKind::Classify, &["classify.pool_lr_scale=0".into()]).is_err());
    }

    #[test]
    fn file_values_merge_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 7, "classify": {"network": {"pool": "lstm", "n": 16}}}"#).unwrap();
        let cfg = ExperimentConfig::load(Some(&p), ExperimentKind::Classify, &["classify.network.n=4".into()]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.classify.network.pool, PoolKind::Lstm);
        assert_eq!(cfg.classify.network.n, 4);
        assert_eq!(cfg.classify.batch, 100);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    }
}
