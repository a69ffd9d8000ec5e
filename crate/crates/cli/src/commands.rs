//! The five subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hybrid_attn::analysis::{
    aggregate_mass, attention_entropy, attention_mass, end_rows, entropy_row, mean_distribution, write_distribution_csv,
    write_entropy_csv, write_mass_csv, EntropyReport, HeadMass, MassReport, Segment, SegmentSpans,
};
use hybrid_attn::attention::{AttentionTrace, TraceMeta};
use hybrid_attn::efficiency::{cost_json, efficiency_report, write_cost_csv};
use hybrid_attn::model::{build_layer_pattern, init_params, read_checkpoint, write_checkpoint_with_meta, Model, Variant};
use hybrid_attn::niah::{make_sample, score_grid, score_row, write_grid_csv, write_heatmap_csv, GridSummary};
use hybrid_attn::seed::derive_seed;
use hybrid_attn::trainer::{run_stages, write_metrics_csv, StepMetrics};
use hybrid_attn::Parallelism;
use serde::Serialize;

use crate::artifact::{read_json_data, Provenance, Sink};
use crate::config::{ExperimentConfig, Loaded};
use crate::error::CliError;

/// Consumers of the global seed.
const SEED_INIT: u64 = 1;
const SEED_DATA: u64 = 2;
const SEED_GRID: u64 = 3;
const SEED_ANALYSIS: u64 = 4;

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const NIAH_SUMMARY: &str = "niah_summary.json";
pub const MASS_JSON: &str = "mass.json";

/// A loaded config with the command-line overrides applied.
#[derive(Debug, Clone)]
pub struct Run {
    pub loaded: Loaded,
    pub seed: u64,
    pub out: PathBuf,
}

impl Run {
    pub fn new(loaded: Loaded, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        let seed = seed.unwrap_or(loaded.config.seed);
        let out = out.unwrap_or_else(|| loaded.resolve(&loaded.config.out_dir));
        Self { loaded, seed, out }
    }

    pub fn cfg(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    fn policy(&self) -> Parallelism {
        self.cfg().parallelism.into()
    }

    fn sink(&self, command: &str) -> Sink {
        let provenance = Provenance { command: command.into(), config_sha256: self.loaded.sha256.clone(), seed: self.seed };
        Sink::new(self.out.clone(), provenance)
    }

    fn checkpoint_path(&self, explicit: &Option<PathBuf>) -> PathBuf {
        match explicit {
            Some(p) => self.loaded.resolve(p),
            None => self.out.join(CHECKPOINT),
        }
    }

    fn fresh_model(&self) -> Result<Model<f32>, CliError> {
        let cfg = self.cfg();
        let mc = cfg.model.config();
        let pattern = cfg.pattern.build(mc.n_layers)?;
        let params = init_params(&mc, &pattern, derive_seed(self.seed, &[SEED_INIT]), cfg.model.init_scale)?;
        Ok(Model::new(mc, pattern, params)?.with_parallelism(self.policy()))
    }

    fn load_model(&self, path: &Path) -> Result<Model<f32>, CliError> {
        let file = std::fs::File::open(path).map_err(|e| CliError::runtime(format!("checkpoint {}", path.display()), e))?;
        let model = read_checkpoint::<f32>(std::io::BufReader::new(file))
            .map_err(|e| CliError::runtime(format!("checkpoint {}", path.display()), e))?;
        Ok(model.with_parallelism(self.policy()))
    }
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    name: String,
    layout: String,
    parameters: usize,
    steps: usize,
    tokens_seen: u64,
    /// Mean loss of the last `tail_steps` steps.
    final_loss: f64,
    tail_steps: usize,
    stages: Vec<StageSummary>,
}

#[derive(Debug, Serialize)]
struct StageSummary {
    name: String,
    steps: usize,
    theta: Option<f64>,
    final_lr: f64,
}

pub fn train(run: &Run) -> Result<Sink, CliError> {
    let cfg = run.cfg();
    cfg.validate()?;
    if cfg.train.stages.is_empty() {
        return Err(CliError::config("train.stages", "needs at least one stage"));
    }
    let mut model = run.fresh_model()?;
    let stages: Vec<_> =
        cfg.train.stages.iter().enumerate().map(|(i, s)| s.stage(derive_seed(run.seed, &[SEED_DATA, i as u64]))).collect();
    let data = cfg.task.curriculum();
    let total: usize = stages.iter().map(|s| s.config.total_steps).sum();
    let mut finals = BTreeMap::new();
    let log = run_stages(&mut model, &data, &stages, &mut |stage, m: &StepMetrics| {
        finals.insert(stage.name.clone(), m.lr);
        if m.step % 100 == 0 || m.step == total {
            log::info!("{} step {}/{} lr {:.3e} loss {:.4}", stage.name, m.step, total, m.lr, m.loss);
        }
    })?;

    let mut sink = run.sink("train");
    let mut meta = sink.provenance.meta();
    meta.insert("name".into(), cfg.display_name());
    let mut ckpt = Vec::new();
    write_checkpoint_with_meta(&model, &meta, &mut ckpt)?;
    sink.bytes(CHECKPOINT, &ckpt)?;
    sink.csv("metrics.csv", |w| write_metrics_csv(&log, w))?;

    let tail_steps = log.len().min(50);
    let final_loss = log[log.len() - tail_steps..].iter().map(|m| m.loss).sum::<f64>() / tail_steps as f64;
    let summary = TrainSummary {
        name: cfg.display_name(),
        layout: model.pattern().to_string(),
        parameters: model.params().tensors().iter().map(|t| t.len()).sum(),
        steps: log.len(),
        tokens_seen: log.last().map_or(0, |m| m.tokens_seen),
        final_loss,
        tail_steps,
        stages: stages
            .iter()
            .map(|s| StageSummary {
                name: s.name.clone(),
                steps: s.config.total_steps,
                theta: s.theta,
                final_lr: finals.get(&s.name).copied().unwrap_or(0.0),
            })
            .collect(),
    };
    sink.json("train_summary.json", &summary)?;
    println!("{} final loss {:.4} after {} steps", summary.name, final_loss, summary.steps);
    Ok(sink)
}

#[derive(Debug, Serialize)]
struct NiahReport {
    name: String,
    layout: String,
    #[serde(flatten)]
    summary: GridSummary,
}

pub fn niah(run: &Run) -> Result<Sink, CliError> {
    let cfg = run.cfg();
    cfg.validate()?;
    cfg.validate_niah()?;
    let model = if cfg.niah.untrained { run.fresh_model()? } else { run.load_model(&run.checkpoint_path(&cfg.niah.checkpoint))? };
    let grid = cfg.grid(derive_seed(run.seed, &[SEED_GRID]));
    let vocab = cfg.task.vocab();
    if vocab.vocab_size > model.config().vocab_size {
        return Err(CliError::config("task.vocab_size", "exceeds the checkpoint's vocabulary"));
    }
    let result = score_grid(&model, &grid, &vocab, run.policy())?;

    let mut sink = run.sink("niah");
    sink.csv("niah_cells.csv", |w| write_grid_csv(&result, w))?;
    sink.csv("niah_heatmap.csv", |w| write_heatmap_csv(&result, w))?;
    let report = NiahReport { name: cfg.display_name(), layout: model.pattern().to_string(), summary: GridSummary::new(&result, &vocab) };
    sink.json(NIAH_SUMMARY, &report)?;
    println!("{}", score_row(&report.name, report.summary.score));
    for (len, s) in result.per_length() {
        println!("  L={len}: {s:.2}");
    }
    Ok(sink)
}

#[derive(Debug, Serialize)]
struct AnalysisOutput {
    name: String,
    mass: Vec<MassReport>,
    /// `nope` / `rope` split of the same entries.
    family_mass: Vec<MassReport>,
    entropy: Vec<EntropyReport>,
}

/// Per-length accumulators, filled one trace at a time so only one dense
/// trace is alive.
struct LengthAcc {
    len: usize,
    variant: String,
    masses: Vec<Vec<HeadMass>>,
    entropy: f64,
    samples: usize,
    distribution: Vec<f64>,
}

impl LengthAcc {
    fn slot<'a>(accs: &'a mut Vec<LengthAcc>, len: usize, variant: &str) -> &'a mut LengthAcc {
        let i = match accs.iter().position(|x| x.len == len && x.variant == variant) {
            Some(i) => i,
            None => {
                accs.push(LengthAcc { len, variant: variant.into(), masses: vec![], entropy: 0.0, samples: 0, distribution: vec![0.0; len] });
                accs.len() - 1
            }
        };
        &mut accs[i]
    }

    fn add(&mut self, trace: &AttentionTrace, spans: &SegmentSpans, cfg: &ExperimentConfig) -> Result<(), CliError> {
        self.masses.push(attention_mass(trace, spans)?);
        self.entropy += attention_entropy(trace, end_rows(trace), cfg.analysis.entropy)?;
        if cfg.analysis.distribution {
            let layers: Vec<usize> = (0..trace.layers()).collect();
            let d = mean_distribution(trace, end_rows(trace), &layers)?;
            self.distribution.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        self.samples += 1;
        Ok(())
    }
}

pub fn analyze(run: &Run) -> Result<Sink, CliError> {
    let cfg = run.cfg();
    cfg.validate()?;
    cfg.validate_analysis()?;
    let a = &cfg.analysis;
    let mut sink = run.sink("analyze");
    let mut accs: Vec<LengthAcc> = Vec::new();
    let mut kinds = Vec::new();

    if !a.traces.is_empty() {
        for p in &a.traces {
            let path = run.loaded.resolve(p);
            let file = std::fs::File::open(&path).map_err(|e| CliError::runtime(path.display(), e))?;
            let trace = AttentionTrace::read_from(std::io::BufReader::new(file)).map_err(|e| CliError::runtime(path.display(), e))?;
            let meta = trace.meta.clone().ok_or_else(|| CliError::runtime(path.display(), "trace carries no span metadata"))?;
            let spans = SegmentSpans::from_meta(trace.len(), &meta).map_err(|e| CliError::runtime(path.display(), e))?;
            kinds.extend(trace.kinds().iter().copied());
            LengthAcc::slot(&mut accs, trace.len(), &meta.variant).add(&trace, &spans, cfg)?;
        }
    } else {
        let model = run.load_model(&run.checkpoint_path(&a.checkpoint))?;
        kinds.extend(model.pattern().layers.iter().map(|l| l.kind()));
        let vocab = cfg.task.vocab();
        let name = cfg.display_name();
        for &len in &a.lengths {
            for s in 0..a.samples {
                let seed = derive_seed(run.seed, &[SEED_ANALYSIS, len as u64, s as u64]);
                let sample = make_sample(len, a.depth, seed, &vocab)?;
                let mut trace = model.forward(&sample.tokens, true)?.trace.expect("capture requested");
                trace.meta = Some(TraceMeta {
                    variant: name.clone(),
                    needle_span: sample.needle_span,
                    query_span: sample.query_span,
                    depth: a.depth,
                    seed,
                });
                let spans = SegmentSpans::new(len, sample.needle_span, sample.query_span)?;
                if a.save_traces {
                    sink.bytes(&format!("traces/L{len:06}_s{s:03}.trace"), &trace.to_bytes())?;
                }
                LengthAcc::slot(&mut accs, len, &name).add(&trace, &spans, cfg)?;
            }
        }
    }

    kinds.sort_by_key(|k| k.label());
    kinds.dedup();
    let expected: Vec<&str> = kinds.iter().map(|k| k.label()).collect();
    let mut families: Vec<&str> = kinds.iter().map(|k| k.family()).collect();
    families.dedup();
    families.sort_unstable();
    families.dedup();

    let mut out = AnalysisOutput { name: cfg.display_name(), mass: vec![], family_mass: vec![], entropy: vec![] };
    for acc in &accs {
        out.mass.push(aggregate_mass(&acc.masses, a.grouping, &acc.variant, acc.len, &expected));
        out.family_mass.push(aggregate_mass(&acc.masses, hybrid_attn::analysis::Grouping::Family, &acc.variant, acc.len, &families));
        out.entropy.push(EntropyReport {
            variant: acc.variant.clone(),
            len: acc.len,
            mode: a.entropy,
            entropy: acc.entropy / acc.samples as f64,
            samples: acc.samples,
        });
        if a.distribution {
            let d: Vec<f64> = acc.distribution.iter().map(|x| x / acc.samples as f64).collect();
            sink.csv(&format!("distribution_L{:06}.csv", acc.len), |w| write_distribution_csv(&d, 0, w))?;
        }
    }
    sink.csv("mass.csv", |w| write_mass_csv(&out.mass, w))?;
    sink.csv("entropy.csv", |w| write_entropy_csv(&out.entropy, w))?;
    sink.json(MASS_JSON, &out)?;
    for (m, e) in out.mass.iter().zip(&out.entropy) {
        println!("{}", entropy_row(&m.variant, m.len, e.entropy));
        for row in &m.rows {
            let cells: Vec<String> = Segment::ALL.iter().map(|&s| format!("{} {:.4}", s.name(), row.get(s))).collect();
            println!("  {:<14} {}", row.group, cells.join("  "));
        }
    }
    Ok(sink)
}

pub fn cost(run: &Run) -> Result<Sink, CliError> {
    let cfg = run.cfg();
    cfg.validate()?;
    cfg.validate_cost()?;
    let mc = cfg.model.config();
    let hybrid = cfg.pattern.build(mc.n_layers)?;
    let p = &cfg.pattern;
    let base_variant: Variant = cfg.cost.baseline.parse().map_err(|e| CliError::config("cost.baseline", e))?;
    let baseline = build_layer_pattern(mc.n_layers, (p.ratio[0], p.ratio[1]), p.window, p.theta, base_variant)
        .map_err(|e| CliError::config("cost.baseline", e))?;
    let reports = efficiency_report(&baseline, &hybrid, &mc, &cfg.cost.lengths, cfg.cost.bytes_per_elem)?;

    let mut sink = run.sink("cost");
    sink.csv("cost.csv", |w| write_cost_csv(&reports, w))?;
    let body: serde_json::Value = serde_json::from_str(&cost_json(&reports)?).map_err(|e| CliError::runtime("cost.json", e))?;
    sink.json("cost.json", &body)?;
    for r in &reports {
        println!("L={} kv_ratio {:.4} ({:.2}% smaller) pair_ratio {:.4}", r.len, r.kv_ratio, r.kv_reduction_pct(), r.pair_ratio);
    }
    Ok(sink)
}

pub fn compare(run: &Run) -> Result<Sink, CliError> {
    let cfg = run.cfg();
    cfg.validate_compare()?;
    let mut scores = Vec::new();
    let mut mass_rows: Vec<(String, serde_json::Value)> = Vec::new();
    for r in &cfg.compare.runs {
        let dir = run.loaded.resolve(&r.dir);
        let summary = read_json_data(&dir.join(NIAH_SUMMARY))?;
        let score = summary["score"]
            .as_f64()
            .ok_or_else(|| CliError::runtime(dir.join(NIAH_SUMMARY).display(), "no numeric `score`"))?;
        let per_length = summary["per_length"].clone();
        scores.push((r.name.clone(), score, per_length));
        let mass = dir.join(MASS_JSON);
        if mass.exists() {
            mass_rows.push((r.name.clone(), read_json_data(&mass)?));
        }
    }

    let mut sink = run.sink("compare");
    sink.csv("compare_scores.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["Model", "Needles Score"])?;
        for (name, score, _) in &scores {
            wr.write_record([name.clone(), format!("{score:.2}")])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    sink.csv("compare_lengths.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["Model", "Length", "Score"])?;
        for (name, _, pl) in &scores {
            for (len, s) in pl.as_object().into_iter().flatten() {
                let s = s.as_f64().map(|s| format!("{s:.2}")).unwrap_or_default();
                wr.write_record([name.clone(), len.trim_start_matches('0').to_string(), s])?;
            }
        }
        wr.flush()?;
        Ok(())
    })?;
    if !mass_rows.is_empty() {
        sink.csv("compare_mass.csv", |w| {
            let mut wr = csv::Writer::from_writer(w);
            wr.write_record(["Model", "Length", "Layers", "Begin", "Needle", "Context", "End"])?;
            for (name, out) in &mass_rows {
                for report in out["mass"].as_array().into_iter().flatten() {
                    let len = report["len"].as_u64().unwrap_or(0);
                    for row in report["rows"].as_array().into_iter().flatten() {
                        let mut rec = vec![name.clone(), len.to_string(), row["group"].as_str().unwrap_or("").to_string()];
                        rec.extend(
                            row["mass"].as_array().into_iter().flatten().map(|m| m.as_f64().map(|m| format!("{m:.4}")).unwrap_or_default()),
                        );
                        wr.write_record(&rec)?;
                    }
                }
            }
            wr.flush()?;
            Ok(())
        })?;
    }
    println!("Model, Needles Score");
    for (name, score, _) in &scores {
        println!("{}", score_row(name, *score));
    }
    Ok(sink)
}
