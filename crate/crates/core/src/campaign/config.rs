use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::axmult::{BitSuppressorConfig, FixtureKind, MultiplierLut};
use crate::dataset::{load_mnist_idx, Dataset};
use crate::error::{Error, Result};
use crate::faults::{required_sample_size, FaultPopulation, FaultSite};
use crate::qnn::{load_model, ExecPath, NetworkModel};

/// Default logit/OFM tolerance on the float path. The int8 path uses 0.
pub const DEFAULT_FLOAT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Use a seeded subset of this many images.
    #[serde(default)]
    pub subset: Option<usize>,
    /// Seed of the subset; shared by every mode of one comparison.
    #[serde(default)]
    pub subset_seed: u64,
}

/// How many faults an FI campaign evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "budget", rename_all = "snake_case")]
pub enum FaultBudget {
    /// Fresh faults for each image; `count` per image.
    PerImage { count: u64 },
    /// One fault list of `count`, each evaluated on every image. In rate
    /// mode `count` is the number of repetitions.
    Total { count: u64 },
    /// `Total` with the count taken from the finite-population sample-size
    /// formula over the compromised layer's bits.
    Statistical { margin: f64, confidence: f64, p: f64 },
}

/// Multiplier reference in a config: `"exact"`, a fixture such as
/// `"operand_truncate(3)"`, or a LUT file path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LutRef(pub String);

impl LutRef {
    pub fn resolve(&self, base: &Path) -> Result<Arc<MultiplierLut>> {
        let s = self.0.trim();
        if s == "exact" {
            return Ok(Arc::new(MultiplierLut::exact()));
        }
        if let Ok(kind) = s.parse::<FixtureKind>() {
            return Ok(Arc::new(MultiplierLut::fixture(kind)?));
        }
        let p = Path::new(s);
        let p = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        Ok(Arc::new(MultiplierLut::load(p)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CampaignMode {
    FiSingle {
        site: FaultSite,
    },
    FiRate {
        site: FaultSite,
        rate: f64,
    },
    AxMult {
        lut: LutRef,
    },
    AxMultPlus {
        lut: LutRef,
        #[serde(default)]
        suppressor: BitSuppressorConfig,
    },
    SuppressorOnly {
        #[serde(default)]
        suppressor: BitSuppressorConfig,
    },
}

impl CampaignMode {
    pub fn is_fi(&self) -> bool {
        matches!(self, CampaignMode::FiSingle { .. } | CampaignMode::FiRate { .. })
    }

    pub fn path(&self) -> ExecPath {
        match self {
            CampaignMode::FiSingle { site } | CampaignMode::FiRate { site, .. } => site.path(),
            _ => ExecPath::Quant,
        }
    }

    /// Short label used in reports and CSV rows.
    pub fn tag(&self) -> String {
        match self {
            CampaignMode::FiSingle { .. } => "fi_single".into(),
            CampaignMode::FiRate { rate, .. } => format!("fi_rate({rate})"),
            CampaignMode::AxMult { lut } => format!("ax_mult({})", lut.0),
            CampaignMode::AxMultPlus { lut, .. } => format!("ax_mult_plus({})", lut.0),
            CampaignMode::SuppressorOnly { .. } => "suppressor_only".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub model: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(flatten)]
    pub mode: CampaignMode,
    pub compromised_layer: usize,
    /// Required by FI modes, ignored otherwise.
    #[serde(default)]
    pub faults: Option<FaultBudget>,
    #[serde(default)]
    pub master_seed: u64,
    /// Tolerance for Masked and for propagation flags; defaults by path.
    #[serde(default)]
    pub eps: Option<f64>,
    /// Layer whose per-neuron peak errors are kept for protection sets;
    /// defaults to the first multiplying layer after the compromised one.
    #[serde(default)]
    pub measured_layer: Option<usize>,
    /// Directory for the fault list and resume checkpoint.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl CampaignConfig {
    /// Reads a JSON config. Relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: CampaignConfig =
            serde_json::from_str(&raw).map_err(|e| Error::json(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.model);
        fix(&mut self.dataset.images);
        fix(&mut self.dataset.labels);
        if let Some(o) = self.output_dir.as_mut() {
            fix(o);
        }
        let lut = match &mut self.mode {
            CampaignMode::AxMult { lut } | CampaignMode::AxMultPlus { lut, .. } => Some(lut),
            _ => None,
        };
        if let Some(lut) = lut {
            let s = lut.0.trim();
            if s != "exact" && s.parse::<FixtureKind>().is_err() && Path::new(s).is_relative() {
                lut.0 = base.join(s).display().to_string();
            }
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps.unwrap_or(match self.mode.path() {
            ExecPath::Float => DEFAULT_FLOAT_EPS,
            ExecPath::Quant => 0.0,
        })
    }

    /// Checks the config against a loaded model.
    pub fn validate(&self, model: &NetworkModel) -> Result<()> {
        let n = model.layers.len();
        if self.compromised_layer >= n {
            return Err(Error::Config(format!(
                "compromised layer {} does not exist ({n} layers)",
                self.compromised_layer
            )));
        }
        if let Some(m) = self.measured_layer {
            if m < self.compromised_layer || m >= n {
                return Err(Error::Config(format!(
                    "measured layer {m} must lie in [{}, {n})",
                    self.compromised_layer
                )));
            }
        }
        if self.eps.is_some_and(|e| !(e >= 0.0)) {
            return Err(Error::Config("eps must be non-negative".into()));
        }
        let multiplying = model.layers[self.compromised_layer].kind.has_weights();
        match &self.mode {
            CampaignMode::FiSingle { site } | CampaignMode::FiRate { site, .. } => {
                if site.is_weight() && !multiplying {
                    return Err(Error::Config(format!(
                        "layer {} has no weights to inject into",
                        self.compromised_layer
                    )));
                }
                match (&self.mode, self.faults) {
                    (_, None) => return Err(Error::Config("FI modes need a `faults` budget".into())),
                    (CampaignMode::FiRate { rate, .. }, Some(b)) => {
                        if !(*rate > 0.0 && *rate <= 1.0) {
                            return Err(Error::Config(format!("rate {rate} outside (0, 1]")));
                        }
                        if matches!(b, FaultBudget::Statistical { .. }) {
                            return Err(Error::Config(
                                "rate mode takes a repetition count, not a statistical budget".into(),
                            ));
                        }
                    }
                    _ => {}
                }
            }
            CampaignMode::AxMult { .. } | CampaignMode::AxMultPlus { .. } => {
                if !multiplying {
                    return Err(Error::Config(format!(
                        "layer {} performs no multiplications",
                        self.compromised_layer
                    )));
                }
            }
            CampaignMode::SuppressorOnly { .. } => {}
        }
        match &self.mode {
            CampaignMode::AxMultPlus { suppressor, .. } | CampaignMode::SuppressorOnly { suppressor } => {
                suppressor.validate().map_err(|e| Error::Config(e.to_string()))?
            }
            _ => {}
        }
        if self.mode.path() == ExecPath::Quant && !model.is_quantized() {
            return Err(Error::Config(
                "the int8 path needs a calibrated, quantized model".into(),
            ));
        }
        Ok(())
    }

    pub fn measured_layer(&self, model: &NetworkModel) -> usize {
        self.measured_layer.unwrap_or_else(|| {
            model
                .weighted_layers()
                .find(|&l| l > self.compromised_layer)
                .unwrap_or(self.compromised_layer)
        })
    }

    /// Number of faults (or repetitions) per evaluated image group.
    pub fn fault_count(&self, model: &NetworkModel) -> Result<u64> {
        match (self.faults, &self.mode) {
            (None, _) => Ok(0),
            (Some(FaultBudget::PerImage { count } | FaultBudget::Total { count }), _) => Ok(count),
            (Some(FaultBudget::Statistical { margin, confidence, p }), CampaignMode::FiSingle { site }) => {
                let pop = FaultPopulation::new(model, *site, Some(&[self.compromised_layer]))?;
                required_sample_size(pop.total_bits(), margin, confidence, p)
            }
            (Some(FaultBudget::Statistical { .. }), _) => {
                Err(Error::Config("statistical budget needs fi_single".into()))
            }
        }
    }
}

/// Model and dataset a campaign runs on.
#[derive(Debug, Clone)]
pub struct CampaignInputs {
    pub model: NetworkModel,
    pub dataset: Dataset,
}

impl CampaignInputs {
    pub fn load(cfg: &CampaignConfig) -> Result<Self> {
        let model = load_model(&cfg.model)?;
        let mut dataset = load_mnist_idx(&cfg.dataset.images, &cfg.dataset.labels)?;
        if let Some(n) = cfg.dataset.subset {
            dataset = dataset.subset(n, cfg.dataset.subset_seed);
        }
        dataset.check_labels(model.num_classes)?;
        Ok(Self { model, dataset })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let raw = r#"{
            "model": "m.json",
            "dataset": {"images": "/abs/i", "labels": "l", "subset": 10},
            "mode": "ax_mult_plus", "lut": "operand_truncate(3)",
            "compromised_layer": 0, "master_seed": 5
        }"#;
        let mut cfg: CampaignConfig = serde_json::from_str(raw).unwrap();
        cfg.rebase(Path::new("/base"));
        assert_eq!(cfg.model, PathBuf::from("/base/m.json"));
        assert_eq!(cfg.dataset.images, PathBuf::from("/abs/i"));
        match &cfg.mode {
            CampaignMode::AxMultPlus { lut, suppressor } => {
                assert_eq!(lut.0, "operand_truncate(3)");
                assert_eq!(*suppressor, BitSuppressorConfig::default());
            }
            m => panic!("{m:?}"),
        }
        assert_eq!(cfg.eps(), 0.0);
        let back: CampaignConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn fi_budget_json() {
        let raw = r#"{"model":"m","dataset":{"images":"i","labels":"l"},"mode":"fi_rate","site":"ofm_int8",
            "rate":0.1,"compromised_layer":0,"faults":{"budget":"total","count":4}}"#;
        let cfg: CampaignConfig = serde_json::from_str(raw).unwrap();
        assert_eq!(cfg.faults, Some(FaultBudget::Total { count: 4 }));
        assert_eq!(cfg.mode.tag(), "fi_rate(0.1)");
        assert!(cfg.mode.is_fi());
    }

    #[test]
    fn lut_refs() {
        let base = Path::new(".");
        assert_eq!(LutRef("exact".into()).resolve(base).unwrap().name(), "exact");
        assert!(LutRef("operand_truncate(2)".into()).resolve(base).is_ok());
        assert!(LutRef("no/such/file.lut".into()).resolve(base).is_err());
    }
}
