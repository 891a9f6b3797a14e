//! TOML pipeline configuration. Command-line flags override file values,
//! which override the built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use tss_core::datamodel::{PreprocessSpec, SplitStrategy};
use tss_core::ingest::IngestOptions;
use tss_core::network::NetworkSpec;
use tss_core::synthgen::SceneSpec;
use tss_core::trainer::{Hyperparameters, Optimizer};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub synthgen: SynthgenSection,
    pub ingest: IngestOptions,
    pub split: SplitSection,
    pub network: NetworkSection,
    pub trainer: TrainerSection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthgenSection {
    pub per_class: usize,
    pub scene: SceneSpec,
}

impl Default for SynthgenSection {
    fn default() -> Self {
        Self { per_class: 200, scene: SceneSpec::default() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub val_fraction: f64,
    pub strategy: SplitStrategy,
    pub allow_missing_classes: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { val_fraction: 0.1, strategy: SplitStrategy::StratifiedRandom, allow_missing_classes: false }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// `alexnet` or `tiny`.
    pub name: String,
    pub init_checkpoint: Option<PathBuf>,
    /// Overrides the default normalization; its side must equal the network input.
    pub preprocess: Option<PreprocessSpec>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { name: "alexnet".into(), init_checkpoint: None, preprocess: None }
    }
}

/// Hyperparameters without the seed, which comes from the global setting.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub optimizer: Option<Optimizer>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
}

impl TrainerSection {
    pub fn hyperparameters(&self, seed: u64) -> Hyperparameters {
        let d = Hyperparameters::default();
        Hyperparameters {
            optimizer: self.optimizer.unwrap_or(d.optimizer),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            adam_beta1: self.adam_beta1.unwrap_or(d.adam_beta1),
            adam_beta2: self.adam_beta2.unwrap_or(d.adam_beta2),
            adam_eps: self.adam_eps.unwrap_or(d.adam_eps),
            seed,
        }
    }
}

/// Output file names, relative to the output directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub json: String,
    pub confusion_csv: String,
    pub roc_csv: String,
    pub predictions_csv: String,
    pub learning_curve_csv: String,
    pub final_checkpoint: String,
    pub best_checkpoint: String,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            json: "report.json".into(),
            confusion_csv: "confusion.csv".into(),
            roc_csv: "roc.csv".into(),
            predictions_csv: "predictions.csv".into(),
            learning_curve_csv: "learning_curve.csv".into(),
            final_checkpoint: "final.ckpt".into(),
            best_checkpoint: "best.ckpt".into(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("config {}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.message().trim()))
    }

    /// Checks every section against its owning module before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.synthgen.scene.validate().context("[synthgen.scene]")?;
        self.ingest.validate().context("[ingest]")?;
        if !(self.split.val_fraction > 0.0 && self.split.val_fraction < 1.0) {
            bail!("[split] val_fraction {} is not in (0, 1)", self.split.val_fraction);
        }
        let spec = NetworkSpec::by_name(&self.network.name, 3).context("[network]")?;
        if let Some(p) = &self.network.preprocess {
            p.validate().context("[network.preprocess]")?;
            if p.resize_side != spec.input_side {
                bail!(
                    "[network.preprocess] resize_side {} does not match the {} input side {}",
                    p.resize_side,
                    spec.name,
                    spec.input_side
                );
            }
        }
        self.trainer.hyperparameters(0).validate().context("[trainer]")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = PipelineConfig::parse("").unwrap();
        c.validate().unwrap();
        assert_eq!(c.trainer.hyperparameters(7), Hyperparameters { seed: 7, ..Default::default() });
        assert_eq!(c.synthgen.per_class, 200);
        assert_eq!(c.network.name, "alexnet");
    }

    #[test]
    fn sections_parse() {
        let c = PipelineConfig::parse(
            r#"
            seed = 3
            [synthgen]
            per_class = 10
            [synthgen.scene]
            image_size = 128
            [ingest]
            blur_threshold = 5.0
            [split]
            strategy = "grouped_by_sample"
            [network]
            name = "tiny"
            [trainer]
            optimizer = "sgd"
            learning_rate = 0.01
            epochs = 3
            "#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.synthgen.scene.image_size, 128);
        assert_eq!(c.split.strategy, SplitStrategy::GroupedBySample);
        let hp = c.trainer.hyperparameters(0);
        assert_eq!((hp.optimizer, hp.epochs, hp.batch_size), (Optimizer::Sgd, 3, 50));
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(PipelineConfig::parse("[trainer]\nmomentum = 0.9").is_err());
        assert!(PipelineConfig::parse("colour = 1").is_err());
        let c = PipelineConfig::parse("[trainer]\nepochs = 0").unwrap();
        assert!(c.validate().is_err());
        let c = PipelineConfig::parse("[network]\nname = \"vgg\"").unwrap();
        assert!(c.validate().is_err());
        let c = PipelineConfig::parse("[split]\nval_fraction = 1.5").unwrap();
        assert!(c.validate().is_err());
    }
}
