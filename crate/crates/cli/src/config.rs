use std::path::{Path, PathBuf};

use boxseq::autoenc::{CellKind, TrainConfig};
use boxseq::embed::TsneConfig;
use boxseq::geometry::{FitOptions, StartMode};
use boxseq::synthgen::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub n_train: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { n_train: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub fit: FitOptions,
    /// Seed each step's search with the previous step's rotation.
    pub warm_start: bool,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            warm_start: true,
        }
    }
}

impl GeometryConfig {
    pub fn start_mode(&self) -> StartMode {
        if self.warm_start {
            StartMode::Warm
        } else {
            StartMode::Cold
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    /// Components to embed; all when absent.
    pub components: Option<Vec<String>>,
    pub rigid_removed: bool,
    pub tsne: TsneConfig,
    pub kmeans_seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            components: None,
            rigid_removed: true,
            tsne: TsneConfig::default(),
            kmeans_seed: 0,
        }
    }
}

/// Everything a pipeline run needs. Read from JSON; every field is optional
/// and falls back to its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Where `synth` writes and `fit` reads clouds, labels and parameters.
    /// Defaults to `out_dir`.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub geometry: GeometryConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    /// Cell type trained by `train` and used by `predict`/`embed`.
    pub cell: CellKind,
    /// Training runs per cell type in `eval`.
    pub n_seeds: usize,
    pub embed: EmbedConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            out_dir: PathBuf::from("out"),
            synth: SynthConfig::default(),
            geometry: GeometryConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            cell: CellKind::Lstm,
            n_seeds: 5,
            embed: EmbedConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), e.line()))
    }

    /// Sets every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.geometry.fit.genetic.seed = seed;
        self.split.seed = seed;
        self.train.seed = seed;
        self.embed.tsne.seed = seed;
        self.embed.kmeans_seed = seed;
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.n_seeds == 0 {
            anyhow::bail!("n_seeds must be at least 1");
        }
        Ok(())
    }

    pub fn data_dir(&self) -> &Path {
        self.data_dir.as_deref().unwrap_or(&self.out_dir)
    }

    pub fn clouds_path(&self) -> PathBuf {
        self.data_dir().join("clouds.jsonl")
    }

    pub fn labels_path(&self) -> PathBuf {
        self.data_dir().join("labels.csv")
    }

    pub fn params_path(&self) -> PathBuf {
        self.data_dir().join("params.csv")
    }

    pub fn boxes_path(&self) -> PathBuf {
        self.out_dir.join("boxes.csv")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("model.json")
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}
