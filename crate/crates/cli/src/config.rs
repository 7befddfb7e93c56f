//! Flat `key = value` run configuration.
//!
//! Every key has a default; a config file only overrides. Lines starting with
//! `#` and blank lines are ignored. Lists are comma-separated and annulus
//! grids are `lo:hi` pairs, e.g. `sweep_grid = 0:1, 1:2, 2:3, 3:4`.

use std::collections::BTreeMap;
use std::path::Path;

use vmf_gos::data::{LongTailSpec, MixtureRecipe};
use vmf_gos::eval::OdinConfig;
use vmf_gos::gradcheck::GradcheckSpec;
use vmf_gos::nn::{Activation, NetDims, OptimizerKind, TrainConfig};
use vmf_gos::{AnchorKappa, AnnulusSpec, LossWeights};

use crate::error::{AtPath, CliError, CliResult};

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "7"),
    // synthetic data
    ("num_classes", "10"),
    ("head_count", "1000"),
    ("imbalance_ratio", "100"),
    ("data_dim", "32"),
    ("data_kappa", "50"),
    ("min_angle_deg", "60"),
    ("test_per_class", "200"),
    ("ood_kinds", "uniform-sphere"),
    ("ood_count", "2000"),
    ("ood_kappa", "50"),
    ("ood_components", "10"),
    ("ood_min_angle_deg", "45"),
    // model
    ("hidden", "64"),
    ("embed_dim", "32"),
    ("head_hidden", "16"),
    ("activation", "relu"),
    // training
    ("epochs", "100"),
    ("batch_size", "128"),
    ("learning_rate", "0.001"),
    ("optimizer", "adam"),
    ("tau", "0.1"),
    ("epsilon", "1"),
    ("alpha", "1"),
    ("beta", "0.1"),
    ("dgs_weight", "1"),
    ("epr_temperature", "none"),
    ("annulus_lo", "2"),
    ("annulus_hi", "3"),
    ("outliers_per_class", "4"),
    ("anchor_kappa", "per-class"),
    // scoring
    ("odin_eta", "0"),
    ("odin_temp", "1"),
    ("odin_sweep", "false"),
    ("odin_etas", "0, 0.001, 0.002, 0.004"),
    ("odin_temps", "1, 10, 100"),
    // outlier dump
    ("gos_per_class", "100"),
    // displacement-law check
    ("verify_dim", "64"),
    ("verify_kappa", "500"),
    ("verify_samples", "100000"),
    ("verify_kappas", ""),
    ("ks_threshold", "0.02"),
    // annulus sweep
    ("sweep_grid", "0:1, 1:2, 2:3, 3:4"),
    // gradient check
    ("gradcheck_configs", "100"),
    ("gradcheck_dim", "8"),
    ("gradcheck_classes", "4"),
    ("gradcheck_outliers", "6"),
];

/// Raw key-value view with every key present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: DEFAULTS.iter().map(|&(k, v)| (k, v.to_string())).collect() }
    }
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        DEFAULTS.iter().map(|&(k, _)| k)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// `key=value` lines in key order.
    pub fn canonical_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// CRC-32C of the canonical text, as 8 hex digits.
    pub fn digest(&self) -> String {
        format!("{:08x}", crc32c::crc32c(self.canonical_text().as_bytes()))
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        self.values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    pub fn settings(&self) -> CliResult<Settings> {
        Settings::from_config(self)
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("every key has a default")
    }

    fn parse_as<V: std::str::FromStr>(&self, key: &str) -> CliResult<V> {
        parse_value(key, self.raw(key))
    }

    fn list<V: std::str::FromStr>(&self, key: &str) -> CliResult<Vec<V>> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',').map(|s| parse_value(key, s.trim())).collect()
    }
}

fn strip_prefix(e: &CliError) -> String {
    match e {
        CliError::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn parse_value<V: std::str::FromStr>(key: &str, raw: &str) -> CliResult<V> {
    raw.parse().map_err(|_| CliError::Config(format!("key `{key}`: cannot parse `{raw}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodKind {
    UniformSphere,
    ShiftedMixture,
}

impl OodKind {
    pub fn name(self) -> &'static str {
        match self {
            OodKind::UniformSphere => "uniform-sphere",
            OodKind::ShiftedMixture => "shifted-mixture",
        }
    }
}

impl std::str::FromStr for OodKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "uniform-sphere" => Ok(OodKind::UniformSphere),
            "shifted-mixture" => Ok(OodKind::ShiftedMixture),
            _ => Err(()),
        }
    }
}

/// Typed, validated view of a [`RunConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub data: LongTailSpec<f64>,
    pub ood_kinds: Vec<OodKind>,
    pub ood_count: usize,
    pub ood_kappa: f64,
    pub ood_components: usize,
    pub ood_min_angle_deg: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub head_hidden: usize,
    pub activation: Activation,
    pub train: TrainConfig<f64>,
    pub odin: OdinConfig<f64>,
    pub odin_sweep: bool,
    pub odin_etas: Vec<f64>,
    pub odin_temps: Vec<f64>,
    pub gos_per_class: usize,
    pub verify_dim: usize,
    pub verify_kappa: f64,
    pub verify_samples: usize,
    pub verify_kappas: Vec<f64>,
    pub ks_threshold: f64,
    pub sweep_grid: Vec<AnnulusSpec<f64>>,
    pub gradcheck: GradcheckSpec,
}

impl Settings {
    pub fn from_config(c: &RunConfig) -> CliResult<Self> {
        let seed: u64 = c.parse_as("seed")?;
        let num_classes: usize = c.parse_as("num_classes")?;
        let data_dim: usize = c.parse_as("data_dim")?;
        let data = LongTailSpec {
            num_classes,
            head_count: c.parse_as("head_count")?,
            imbalance_ratio: c.parse_as("imbalance_ratio")?,
            dim: data_dim,
            recipe: MixtureRecipe::RandomWellSeparated {
                kappa: c.parse_as("data_kappa")?,
                min_angle_deg: c.parse_as("min_angle_deg")?,
            },
            test_per_class: c.parse_as("test_per_class")?,
            seed,
        };
        let ood_kinds: Vec<OodKind> = c.list("ood_kinds")?;

        let activation = match c.raw("activation") {
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            other => {
                return Err(CliError::Config(format!("key `activation`: expected relu or identity, got `{other}`")))
            }
        };
        let optimizer = match c.raw("optimizer") {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => return Err(CliError::Config(format!("key `optimizer`: expected adam or sgd, got `{other}`"))),
        };
        let epr_temperature = match c.raw("epr_temperature") {
            "none" => None,
            _ => Some(c.parse_as("epr_temperature")?),
        };
        let anchor = match c.raw("anchor_kappa") {
            "per-class" => AnchorKappa::PerClass,
            _ => AnchorKappa::Fixed(c.parse_as("anchor_kappa")?),
        };
        let weights = LossWeights {
            tau: c.parse_as("tau")?,
            epsilon: c.parse_as("epsilon")?,
            alpha: c.parse_as("alpha")?,
            beta: c.parse_as("beta")?,
            dgs_weight: c.parse_as("dgs_weight")?,
            epr_temperature,
        };
        let train = TrainConfig {
            epochs: c.parse_as("epochs")?,
            batch_size: c.parse_as("batch_size")?,
            learning_rate: c.parse_as("learning_rate")?,
            optimizer,
            seed,
            weights,
            annulus: annulus("annulus_lo/annulus_hi", c.parse_as("annulus_lo")?, c.parse_as("annulus_hi")?)?,
            outliers_per_class: c.parse_as("outliers_per_class")?,
            anchor,
        };
        train.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let odin = OdinConfig { eta: c.parse_as("odin_eta")?, temp: c.parse_as("odin_temp")? };
        odin.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let sweep_grid = c
            .raw("sweep_grid")
            .split(',')
            .map(|cell| {
                let cell = cell.trim();
                let (lo, hi) = cell
                    .split_once(':')
                    .ok_or_else(|| CliError::Config(format!("key `sweep_grid`: expected lo:hi, got `{cell}`")))?;
                annulus("sweep_grid", parse_value("sweep_grid", lo.trim())?, parse_value("sweep_grid", hi.trim())?)
            })
            .collect::<CliResult<Vec<_>>>()?;

        let gradcheck = GradcheckSpec {
            configurations: c.parse_as("gradcheck_configs")?,
            dim: c.parse_as("gradcheck_dim")?,
            classes: c.parse_as("gradcheck_classes")?,
            outliers: c.parse_as("gradcheck_outliers")?,
            seed,
            inject_sign_bug: None,
        };

        let s = Self {
            seed,
            data,
            ood_kinds,
            ood_count: c.parse_as("ood_count")?,
            ood_kappa: c.parse_as("ood_kappa")?,
            ood_components: c.parse_as("ood_components")?,
            ood_min_angle_deg: c.parse_as("ood_min_angle_deg")?,
            hidden: c.parse_as("hidden")?,
            embed_dim: c.parse_as("embed_dim")?,
            head_hidden: c.parse_as("head_hidden")?,
            activation,
            train,
            odin,
            odin_sweep: c.parse_as("odin_sweep")?,
            odin_etas: c.list("odin_etas")?,
            odin_temps: c.list("odin_temps")?,
            gos_per_class: c.parse_as("gos_per_class")?,
            verify_dim: c.parse_as("verify_dim")?,
            verify_kappa: c.parse_as("verify_kappa")?,
            verify_samples: c.parse_as("verify_samples")?,
            verify_kappas: c.list("verify_kappas")?,
            ks_threshold: c.parse_as("ks_threshold")?,
            sweep_grid,
            gradcheck,
        };
        s.dims(data_dim).validate().map_err(|e| CliError::Config(e.to_string()))?;
        if s.ood_kinds.is_empty() {
            return Err(CliError::Config("key `ood_kinds`: need at least one kind".into()));
        }
        if s.odin_sweep && (s.odin_etas.is_empty() || s.odin_temps.is_empty()) {
            return Err(CliError::Config("odin_sweep needs non-empty odin_etas and odin_temps".into()));
        }
        Ok(s)
    }

    /// Network shape for inputs of dimension `input`.
    pub fn dims(&self, input: usize) -> NetDims {
        NetDims {
            input,
            hidden: self.hidden,
            feature: self.embed_dim,
            classes: self.data.num_classes,
            head_hidden: self.head_hidden,
        }
    }
}

fn annulus(key: &str, lo: f64, hi: f64) -> CliResult<AnnulusSpec<f64>> {
    AnnulusSpec::new(lo, hi).map_err(|e| CliError::Config(format!("key `{key}`: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let s = RunConfig::default().settings().unwrap();
        assert_eq!(s.data.num_classes, 10);
        assert_eq!(s.sweep_grid.len(), 4);
        assert!(s.verify_kappas.is_empty());
        assert_eq!(s.train.weights.epr_temperature, None);
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = RunConfig::parse("epochs = 3\nlearning_rat = 0.1\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("learning_rat"), "{err}");
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn comments_and_whitespace() {
        let c = RunConfig::parse("# header\n\n  tau =  0.5  \n").unwrap();
        assert_eq!(c.get("tau"), Some("0.5"));
    }

    #[test]
    fn digest_tracks_values_not_layout() {
        let a = RunConfig::parse("tau=0.5\nbeta=0.2").unwrap();
        let b = RunConfig::parse("# x\nbeta = 0.2\n\ntau = 0.5\n").unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), RunConfig::default().digest());
        assert_eq!(a.digest().len(), 8);
    }

    #[test]
    fn malformed_grid_is_a_config_error() {
        for bad in ["0:1, 2", "1:0", "a:b", ""] {
            let mut c = RunConfig::default();
            c.set("sweep_grid", bad).unwrap();
            assert_eq!(c.settings().unwrap_err().exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn typed_values_are_checked() {
        for (k, v) in [("epochs", "-1"), ("activation", "tanh"), ("ood_kinds", "gaussian"), ("odin_temp", "0")] {
            let mut c = RunConfig::default();
            c.set(k, v).unwrap();
            assert_eq!(c.settings().unwrap_err().exit_code(), 2, "{k}={v}");
        }
    }

    #[test]
    fn fixed_anchor_and_epr_temperature() {
        let c = RunConfig::parse("anchor_kappa = 200\nepr_temperature = 2").unwrap();
        let s = c.settings().unwrap();
        assert_eq!(s.train.anchor, AnchorKappa::Fixed(200.0));
        assert_eq!(s.train.weights.epr_temperature, Some(2.0));
    }
}
