//! Run configuration shared by the command line and the library pipeline.
//!
//! Every field has a default. Values taken from the published method are
//! marked `method default` in [`RunConfig::describe`]; everything else is an
//! artifact default chosen for the synthetic setting.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::components::{Connectivity, DEFAULT_SIZE_THRESHOLD};
use crate::ensemble::{TrainConfig, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE};
use crate::error::{Error, Result};
use crate::patching::{SamplingSpec, Scale};
use crate::phantom::{OracleSpec, PhantomSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subjects: usize,
    pub repeats: usize,
    pub train_fraction: f64,
    pub seed: u64,
    /// Patch geometry for the fine, mid and coarse opinions.
    pub scales: [SamplingSpec; 3],
    pub size_threshold: usize,
    pub connectivity: Connectivity,
    pub activation: ActivationKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub phantom: PhantomSpec,
    pub oracles: [OracleSpec; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            subjects: 20,
            repeats: 5,
            train_fraction: 0.9,
            seed: 7,
            scales: Scale::ALL.map(Scale::sampling),
            size_threshold: DEFAULT_SIZE_THRESHOLD,
            connectivity: Connectivity::default(),
            activation: ActivationKind::SinAct,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            phantom: PhantomSpec::default(),
            oracles: Scale::ALL.map(OracleSpec::biased),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.phantom.validate()?;
        for (k, o) in self.oracles.iter().enumerate() {
            o.validate()?;
            if o.scale != Scale::ALL[k] {
                return Err(Error::InvalidConfig(format!(
                    "oracle {k} must have scale {}, got {}",
                    Scale::ALL[k],
                    o.scale
                )));
            }
        }
        for s in &self.scales {
            SamplingSpec::new(s.patch, s.stride)?;
            if (0..3).any(|a| s.patch[a] > self.phantom.dims[a]) {
                return Err(Error::InvalidConfig(format!(
                    "patch {:?} does not fit the phantom grid {:?}",
                    s.patch, self.phantom.dims
                )));
            }
        }
        if self.subjects < 2 || self.repeats == 0 {
            return Err(Error::InvalidConfig(
                "need at least 2 subjects and 1 repeat".into(),
            ));
        }
        Ok(())
    }

    /// Key/value lines for report headers, each tagged with where its
    /// default comes from.
    pub fn describe(&self) -> Vec<String> {
        let method = "method default";
        let artifact = "artifact default";
        let dims = |d: [usize; 3]| format!("{}x{}x{}", d[0], d[1], d[2]);
        let mut out = vec![
            format!(
                "scales = {} [{method}]",
                self.scales.map(|s| dims(s.patch)).join(", ")
            ),
            format!(
                "strides = {} [{method}: half patch]",
                self.scales.map(|s| dims(s.stride)).join(", ")
            ),
            format!("size_threshold = {} voxels [{method}]", self.size_threshold),
            format!("activation = {} [{method}]", self.activation),
            format!("initial_weights = 1/3 each [{method}]"),
            format!("epochs = {} [{method}]", self.epochs),
            format!("binarization_threshold = 0.5 [{method}]"),
            format!(
                "train_fraction = {} [{method}: 54 of 60]",
                self.train_fraction
            ),
            format!("learning_rate = {} [{artifact}]", self.learning_rate),
            format!("optimizer = full-batch gradient descent [{artifact}]"),
            format!("connectivity = {} [{artifact}]", self.connectivity),
            format!("subjects = {} [{artifact}]", self.subjects),
            format!("repeats = {} [{method}]", self.repeats),
            format!("seed = {} [{artifact}]", self.seed),
            format!(
                "phantom = dims {} spacing {:?} small {:?} large {:?} noise {} [{artifact}]",
                dims(self.phantom.dims),
                self.phantom.spacing.0,
                self.phantom.small_radius,
                self.phantom.large_radius,
                self.phantom.noise_amplitude
            ),
        ];
        for o in &self.oracles {
            out.push(format!(
                "oracle.{} = blur {} fp_rate {} small_dropout {} jitter {} [{artifact}]",
                o.scale, o.blur_radius, o.fp_rate, o.small_dropout, o.jitter
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_method_constants() {
        let c = RunConfig::default();
        assert_eq!(c.scales[0].patch, [6, 10, 6]);
        assert_eq!(c.scales[1].patch, [12, 20, 12]);
        assert_eq!(c.scales[2].patch, [24, 40, 24]);
        assert_eq!(c.scales[2].stride, [12, 20, 12]);
        assert_eq!(c.size_threshold, 1000);
        assert_eq!(c.epochs, 10);
        assert_eq!(c.activation, ActivationKind::SinAct);
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let partial = RunConfig::from_toml_str("epochs = 3\nactivation = \"sigmoid\"\n").unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.activation, ActivationKind::Sigmoid);
        assert_eq!(partial.subjects, 20);
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::from_toml_str("epochs = 0").is_err());
    }

    #[test]
    fn describe_labels_every_line() {
        for line in RunConfig::default().describe() {
            assert!(line.ends_with(']'), "{line}");
            assert!(line.contains("default"), "{line}");
        }
    }
}
