//! Run configuration: flat `key = value` lines under section headers
//! (a TOML subset), with `section.key=value` overrides from the command
//! line. Unknown sections and keys are rejected; every numeric field is
//! range-checked with its legal interval in the error.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::{Aggregation, Quadrature};
use crate::degrade::DegradationKind;
use crate::error::{Error, Result};
use crate::pipeline::report::Format;
use crate::pipeline::PretrainMode;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub paths: PathsSection,
    pub data: DataSection,
    pub pretrain: PretrainSection,
    pub mac: MacSection,
    pub finetune: FinetuneSection,
    pub extractor: ExtractorSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Parent of the per-run directories.
    pub out_dir: PathBuf,
}

/// Inputs produced by earlier stages. Empty means "not given".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Dataset root written by `synth` (holds `train/` and `test/<kind>/`).
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Extractor checkpoint; the bundled one is used when absent.
    pub extractor: Option<PathBuf>,
    /// Directory of P6 images for `twin-infer`; defaults to every test set.
    pub images: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub size: usize,
    pub train: usize,
    /// Test pairs per kind.
    pub test: usize,
    /// Training degradations (also the in-distribution test sets).
    pub kinds: Vec<String>,
    /// Held-out test-only degradations.
    pub ood_kinds: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub batch: usize,
    pub mask_ratio: f64,
    pub mask_weight: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub mode: String,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacSection {
    pub delta: f64,
    pub steps: usize,
    pub path_ratio: f64,
    pub k_percent: f64,
    /// Probe images per training kind.
    pub probes: usize,
    pub aggregation: String,
    pub quadrature: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub steps: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub fusion: bool,
}

/// Training budget of the `extractor` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorSection {
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub format: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            size: 32,
            train: 256,
            test: 16,
            kinds: vec!["gaussian_noise".into(), "gaussian_blur".into(), "jpeg".into()],
            ood_kinds: vec!["pepper".into(), "speckle".into(), "poisson".into()],
        }
    }
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            steps: 5000,
            batch: 8,
            mask_ratio: 0.5,
            mask_weight: 1e-4,
            lr_max: 2e-4,
            lr_min: 1e-6,
            mode: "joint".into(),
            checkpoint_every: 1000,
        }
    }
}

impl Default for MacSection {
    fn default() -> Self {
        MacSection {
            delta: 100.0,
            steps: 64,
            path_ratio: 0.5,
            k_percent: 30.0,
            probes: 8,
            aggregation: "absolute".into(),
            quadrature: "trapezoid".into(),
        }
    }
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            steps: 1000,
            batch: 8,
            lr_max: 2e-4,
            lr_min: 1e-6,
            fusion: true,
        }
    }
}

impl Default for ExtractorSection {
    fn default() -> Self {
        ExtractorSection { steps: 1000 }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { format: "table".into() }
    }
}

fn check(field: &str, value: f64, ok: bool, range: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::range(field, value, range))
    }
}

fn positive(field: &str, value: usize) -> Result<()> {
    check(field, value as f64, value >= 1, "[1, ∞)")
}

fn learning_rates(section: &str, max: f64, min: f64) -> Result<()> {
    check(&format!("{section}.lr_max"), max, max > 0.0 && max.is_finite(), "(0, ∞)")?;
    check(&format!("{section}.lr_min"), min, min > 0.0 && min <= max, &format!("(0, {section}.lr_max]"))
}

fn kinds(field: &str, names: &[String]) -> Result<Vec<DegradationKind>> {
    names
        .iter()
        .map(|n| {
            n.parse().map_err(|_| Error::Config {
                location: field.into(),
                reason: format!("unknown degradation kind `{n}`"),
            })
        })
        .collect()
}

fn named<T>(field: &str, parsed: Result<T>) -> Result<T> {
    parsed.map_err(|e| Error::Config {
        location: field.into(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    /// Smallest budgets that still exercise every stage end to end.
    pub fn smoke() -> Self {
        let mut c = RunConfig::default();
        c.data.train = 64;
        c.data.test = 4;
        c.pretrain.steps = 200;
        c.pretrain.checkpoint_every = 100;
        c.mac.probes = 2;
        c.finetune.steps = 100;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        check("data.size", d.size as f64, d.size >= 32 && d.size % 8 == 0, "multiples of 8, at least 32")?;
        positive("data.train", d.train)?;
        positive("data.test", d.test)?;
        if self.train_kinds()?.is_empty() {
            return Err(Error::Config {
                location: "data.kinds".into(),
                reason: "at least one training degradation is required".into(),
            });
        }
        self.ood_kinds()?;

        let p = &self.pretrain;
        positive("pretrain.steps", p.steps)?;
        positive("pretrain.batch", p.batch)?;
        check("pretrain.mask_ratio", p.mask_ratio, p.mask_ratio > 0.0 && p.mask_ratio < 1.0, "(0, 1)")?;
        check("pretrain.mask_weight", p.mask_weight, p.mask_weight >= 0.0 && p.mask_weight.is_finite(), "[0, ∞)")?;
        learning_rates("pretrain", p.lr_max, p.lr_min)?;
        self.pretrain_mode()?;

        let m = &self.mac;
        check("mac.delta", m.delta, m.delta > 0.0 && m.delta.is_finite(), "(0, ∞)")?;
        check("mac.steps", m.steps as f64, m.steps >= 4, "[4, ∞)")?;
        check("mac.path_ratio", m.path_ratio, m.path_ratio > 0.0 && m.path_ratio <= 1.0, "(0, 1]")?;
        check("mac.k_percent", m.k_percent, m.k_percent > 0.0 && m.k_percent <= 100.0, "(0, 100]")?;
        positive("mac.probes", m.probes)?;
        self.aggregation()?;
        self.quadrature()?;

        let f = &self.finetune;
        positive("finetune.steps", f.steps)?;
        positive("finetune.batch", f.batch)?;
        learning_rates("finetune", f.lr_max, f.lr_min)?;
        positive("extractor.steps", self.extractor.steps)?;
        self.format()?;
        Ok(())
    }

    pub fn train_kinds(&self) -> Result<Vec<DegradationKind>> {
        kinds("data.kinds", &self.data.kinds)
    }

    pub fn ood_kinds(&self) -> Result<Vec<DegradationKind>> {
        kinds("data.ood_kinds", &self.data.ood_kinds)
    }

    pub fn pretrain_mode(&self) -> Result<PretrainMode> {
        named("pretrain.mode", PretrainMode::parse(&self.pretrain.mode))
    }

    pub fn aggregation(&self) -> Result<Aggregation> {
        named("mac.aggregation", Aggregation::parse(&self.mac.aggregation))
    }

    pub fn quadrature(&self) -> Result<Quadrature> {
        named("mac.quadrature", Quadrature::parse(&self.mac.quadrature))
    }

    pub fn format(&self) -> Result<Format> {
        named("eval.format", Format::parse(&self.eval.format))
    }

    /// Parses and validates config text, then applies `section.key=value`
    /// overrides in order.
    pub fn parse(text: &str, origin: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config {
            location: origin.into(),
            reason: e.message().to_string(),
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config = RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config {
            location: origin.into(),
            reason: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies the
    /// overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                RunConfig::parse(&text, &p.display().to_string(), overrides)
            }
            None => RunConfig::parse("", "defaults", overrides),
        }
    }

    /// The effective config as text that [`RunConfig::parse`] reads back
    /// to an equal value.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config fields are all representable")
    }
}

/// `section.key=value`; the value is read as a TOML value when it parses as
/// one and as a bare string otherwise, so `mode=joint` needs no quotes.
fn apply_override(table: &mut toml::Table, raw: &str) -> Result<()> {
    let bad = |reason: &str| Error::Config {
        location: format!("--set {raw}"),
        reason: reason.into(),
    };
    let (key, value) = raw.split_once('=').ok_or_else(|| bad("expected section.key=value"))?;
    let (section, field) = key.trim().split_once('.').ok_or_else(|| bad("key must be section.key"))?;
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(field.to_string(), parsed);
            Ok(())
        }
        _ => Err(bad("section is not a table")),
    }
}
