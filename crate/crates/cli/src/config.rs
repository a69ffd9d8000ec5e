//! Experiment configuration files.

use std::path::{Path, PathBuf};

use hybrid_attn::analysis::{EntropyMode, Grouping};
use hybrid_attn::model::{build_layer_pattern, LayerPattern, ModelConfig, Variant};
use hybrid_attn::niah::{NeedlesGrid, TaskVocab};
use hybrid_attn::trainer::{AdamW, KvCurriculum, LossScope, Stage, TrainConfig};
use hybrid_attn::Parallelism;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// One experiment: a model, its data, and the parameters of every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Display name in comparison tables; defaults to the variant name.
    pub name: Option<String>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Allows evaluation lengths beyond the longest training length.
    pub allow_extrapolation: bool,
    pub parallelism: ParallelismChoice,
    pub model: ModelSection,
    pub pattern: PatternSection,
    pub task: TaskSection,
    pub train: TrainSection,
    pub niah: NiahSection,
    pub analysis: AnalysisSection,
    pub cost: CostSection,
    pub compare: CompareSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            seed: 0,
            out_dir: PathBuf::from("out"),
            allow_extrapolation: false,
            parallelism: ParallelismChoice::Rayon,
            model: ModelSection::default(),
            pattern: PatternSection::default(),
            task: TaskSection::default(),
            train: TrainSection::default(),
            niah: NiahSection::default(),
            analysis: AnalysisSection::default(),
            cost: CostSection::default(),
            compare: CompareSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParallelismChoice {
    Sequential,
    Rayon,
}

impl From<ParallelismChoice> for Parallelism {
    fn from(p: ParallelismChoice) -> Self {
        match p {
            ParallelismChoice::Sequential => Parallelism::Sequential,
            ParallelismChoice::Rayon => Parallelism::Rayon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub emb_dim: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub n_query_heads: usize,
    pub n_kv_heads: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub init_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ModelConfig::default();
        Self {
            emb_dim: c.emb_dim,
            ffn_dim: c.ffn_dim,
            n_layers: c.n_layers,
            n_query_heads: c.n_query_heads,
            n_kv_heads: c.n_kv_heads,
            vocab_size: c.vocab_size,
            max_seq: c.max_seq,
            init_scale: hybrid_attn::model::INIT_SCALE,
        }
    }
}

impl ModelSection {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            emb_dim: self.emb_dim,
            ffn_dim: self.ffn_dim,
            n_layers: self.n_layers,
            n_query_heads: self.n_query_heads,
            n_kv_heads: self.n_kv_heads,
            vocab_size: self.vocab_size,
            max_seq: self.max_seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternSection {
    pub variant: String,
    /// `[a, b]`: a NoPE layers per b RoPE layers.
    pub ratio: [usize; 2],
    pub window: usize,
    pub theta: f64,
    /// Explicit layout in the text format, e.g. `rope@10000/swa128*3 nope`.
    /// Overrides `variant`, `ratio`, `window` and `theta`.
    pub layout: Option<String>,
}

impl Default for PatternSection {
    fn default() -> Self {
        Self { variant: "rnope-swa".into(), ratio: [1, 3], window: 128, theta: 10_000.0, layout: None }
    }
}

impl PatternSection {
    pub fn variant(&self) -> Result<Variant, CliError> {
        self.variant.parse().map_err(|e| CliError::config("pattern.variant", e))
    }

    pub fn build(&self, n_layers: usize) -> Result<LayerPattern, CliError> {
        if let Some(text) = &self.layout {
            let p: LayerPattern = text.parse().map_err(|e| CliError::config("pattern.layout", e))?;
            if p.len() != n_layers {
                return Err(CliError::config("pattern.layout", format!("{} layers, model.n_layers = {n_layers}", p.len())));
            }
            return Ok(p);
        }
        build_layer_pattern(n_layers, (self.ratio[0], self.ratio[1]), self.window, self.theta, self.variant()?)
            .map_err(|e| CliError::config("pattern", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub vocab_size: usize,
    pub n_keys: usize,
    pub n_values: usize,
    pub value_len: usize,
    pub pair_density: f64,
    pub max_pairs: usize,
    pub repeat_prob: f64,
    pub chunk_min: usize,
    pub chunk_max: usize,
    pub loss_scope: LossScope,
}

impl Default for TaskSection {
    fn default() -> Self {
        let c = KvCurriculum::default();
        Self {
            vocab_size: c.vocab.vocab_size,
            n_keys: c.vocab.n_keys,
            n_values: c.vocab.n_values,
            value_len: c.vocab.value_len,
            pair_density: c.pair_density,
            max_pairs: c.max_pairs,
            repeat_prob: c.repeat_prob,
            chunk_min: c.chunk_min,
            chunk_max: c.chunk_max,
            loss_scope: c.loss_scope,
        }
    }
}

impl TaskSection {
    pub fn vocab(&self) -> TaskVocab {
        TaskVocab { vocab_size: self.vocab_size, n_keys: self.n_keys, n_values: self.n_values, value_len: self.value_len }
    }

    pub fn curriculum(&self) -> KvCurriculum {
        KvCurriculum {
            vocab: self.vocab(),
            pair_density: self.pair_density,
            max_pairs: self.max_pairs,
            repeat_prob: self.repeat_prob,
            chunk_min: self.chunk_min,
            chunk_max: self.chunk_max,
            loss_scope: self.loss_scope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub stages: Vec<StageSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSection {
    pub name: String,
    pub steps: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub end_lr: f64,
    pub batch_tokens: usize,
    pub short_len: usize,
    pub long_len: usize,
    /// `[short, long]` batches per cycle.
    pub interleave: [usize; 2],
    /// New RoPE base applied before the stage starts.
    pub theta: Option<f64>,
    pub grad_clip: Option<f64>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for StageSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            name: "stage".into(),
            steps: c.total_steps,
            warmup_steps: c.warmup_steps,
            peak_lr: c.peak_lr,
            end_lr: c.end_lr,
            batch_tokens: c.batch_tokens,
            short_len: c.short_len,
            long_len: c.long_len,
            interleave: [c.interleave_ratio.0, c.interleave_ratio.1],
            theta: None,
            grad_clip: c.grad_clip,
            weight_decay: c.optimizer.weight_decay,
            beta1: c.optimizer.beta1,
            beta2: c.optimizer.beta2,
        }
    }
}

impl StageSection {
    pub fn stage(&self, seed: u64) -> Stage {
        let config = TrainConfig {
            peak_lr: self.peak_lr,
            end_lr: self.end_lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.steps,
            batch_tokens: self.batch_tokens,
            short_len: self.short_len,
            long_len: self.long_len,
            interleave_ratio: (self.interleave[0], self.interleave[1]),
            seed,
            optimizer: AdamW { beta1: self.beta1, beta2: self.beta2, weight_decay: self.weight_decay, ..AdamW::default() },
            grad_clip: self.grad_clip,
        };
        Stage { name: self.name.clone(), config, theta: self.theta }
    }

    /// Longest input the stage feeds the model.
    pub fn longest(&self) -> usize {
        let mut l = 0;
        if self.interleave[0] > 0 {
            l = l.max(self.short_len);
        }
        if self.interleave[1] > 0 {
            l = l.max(self.long_len);
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NiahSection {
    /// Defaults to `<out_dir>/checkpoint.bin`.
    pub checkpoint: Option<PathBuf>,
    /// Evaluate a freshly initialized model instead of a checkpoint.
    pub untrained: bool,
    pub lengths: Vec<usize>,
    pub depths: Vec<f64>,
    pub seeds_per_cell: usize,
}

impl Default for NiahSection {
    fn default() -> Self {
        let g = NeedlesGrid::default();
        Self { checkpoint: None, untrained: false, lengths: g.lengths, depths: g.depths, seeds_per_cell: g.seeds_per_cell }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub checkpoint: Option<PathBuf>,
    /// Saved traces to analyze instead of running the model.
    pub traces: Vec<PathBuf>,
    pub lengths: Vec<usize>,
    pub depth: f64,
    pub samples: usize,
    pub grouping: Grouping,
    pub entropy: EntropyMode,
    /// Also write every captured trace under `<out>/traces/`.
    pub save_traces: bool,
    /// Write the mean end-row attention distribution per length.
    pub distribution: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            traces: Vec::new(),
            lengths: vec![1024],
            depth: 0.5,
            samples: 4,
            grouping: Grouping::Kind,
            entropy: EntropyMode::Raw,
            save_traces: false,
            distribution: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    /// Analytical, so not bounded by `model.max_seq`.
    pub lengths: Vec<u64>,
    pub bytes_per_elem: u64,
    pub baseline: String,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            lengths: vec![8192, 32768, 131072],
            bytes_per_elem: hybrid_attn::efficiency::DEFAULT_BYTES_PER_ELEM,
            baseline: "rope-baseline".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub runs: Vec<CompareRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRun {
    pub name: String,
    /// Output directory of the run's `niah` (and optionally `analyze`).
    pub dir: PathBuf,
}

/// A parsed config together with the digest of the bytes it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub sha256: String,
    /// Directory of the config file; relative paths resolve against it.
    pub base: PathBuf,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| CliError::config("--config", "file is not UTF-8"))?;
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
    let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, sha256, base })
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

fn check(cond: bool, field: &str, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::config(field, msg()))
    }
}

impl ExperimentConfig {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.pattern.layout.clone().unwrap_or_else(|| self.pattern.variant.clone()))
    }

    /// Longest training sequence across stages, 0 without stages.
    pub fn train_len(&self) -> usize {
        self.train.stages.iter().map(StageSection::longest).max().unwrap_or(0)
    }

    /// Checks shared by every subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = self.model.config();
        m.validate().map_err(|e| CliError::config("model", e))?;
        check(self.model.init_scale > 0.0 && self.model.init_scale.is_finite(), "model.init_scale", || {
            format!("must be a positive number, got {}", self.model.init_scale)
        })?;
        self.pattern.build(m.n_layers)?;
        self.task.curriculum().validate().map_err(|e| CliError::config("task", e))?;
        check(self.task.vocab_size <= m.vocab_size, "task.vocab_size", || {
            format!("{} exceeds model.vocab_size {}", self.task.vocab_size, m.vocab_size)
        })?;
        for (i, s) in self.train.stages.iter().enumerate() {
            let field = format!("train.stages[{i}]");
            s.stage(0).config.validate().map_err(|e| CliError::config(&field, e))?;
            check(s.longest() <= m.max_seq, &format!("{field}.long_len"), || {
                format!("training length {} exceeds model.max_seq {}", s.longest(), m.max_seq)
            })?;
            if let Some(t) = s.theta {
                check(t > 0.0 && t.is_finite(), &format!("{field}.theta"), || format!("must be positive, got {t}"))?;
            }
        }
        Ok(())
    }

    pub fn validate_niah(&self) -> Result<(), CliError> {
        self.grid(0).validate().map_err(|e| CliError::config("niah", e))?;
        self.check_eval_lengths("niah.lengths", &self.niah.lengths)
    }

    pub fn validate_analysis(&self) -> Result<(), CliError> {
        let a = &self.analysis;
        if a.traces.is_empty() {
            check(!a.lengths.is_empty() && a.samples > 0, "analysis", || "needs lengths and samples ≥ 1, or traces".into())?;
            check((0.0..=1.0).contains(&a.depth), "analysis.depth", || format!("{} outside [0, 1]", a.depth))?;
            self.check_eval_lengths("analysis.lengths", &a.lengths)?;
        }
        Ok(())
    }

    pub fn validate_cost(&self) -> Result<(), CliError> {
        check(!self.cost.lengths.is_empty() && self.cost.lengths.iter().all(|&l| l > 0), "cost.lengths", || {
            "needs at least one positive length".into()
        })?;
        check(self.cost.bytes_per_elem > 0, "cost.bytes_per_elem", || "must be ≥ 1".into())?;
        self.cost.baseline.parse::<Variant>().map(|_| ()).map_err(|e| CliError::config("cost.baseline", e))
    }

    pub fn validate_compare(&self) -> Result<(), CliError> {
        check(!self.compare.runs.is_empty(), "compare.runs", || "needs at least one run".into())
    }

    fn check_eval_lengths(&self, field: &str, lengths: &[usize]) -> Result<(), CliError> {
        let max_seq = self.model.max_seq;
        if let Some(&l) = lengths.iter().find(|&&l| l > max_seq) {
            return Err(CliError::config(field, format!("length {l} exceeds model.max_seq {max_seq}")));
        }
        let trained = self.train_len();
        if !self.allow_extrapolation && trained > 0 {
            if let Some(&l) = lengths.iter().find(|&&l| l > trained) {
                return Err(CliError::config(
                    field,
                    format!("length {l} exceeds the training length {trained}; set allow_extrapolation = true"),
                ));
            }
        }
        Ok(())
    }

    pub fn grid(&self, seed: u64) -> NeedlesGrid {
        NeedlesGrid {
            lengths: self.niah.lengths.clone(),
            depths: self.niah.depths.clone(),
            seeds_per_cell: self.niah.seeds_per_cell,
            seed,
        }
    }
}
