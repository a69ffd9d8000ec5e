use std::sync::Arc;

use crate::attention::{build_mask, build_rope_cache, AttentionTrace, RopeCache};
use crate::error::{Error, Result};
use crate::model::weights::{index_params, init_params, ParamIndex};
use crate::model::{LayerPattern, ModelConfig, ParamStore, Positional};
use crate::numeric::{GradTape, Real, Tensor, Var};
use crate::par::Parallelism;

/// Epsilon of the block and final RMS norms.
pub const NORM_EPS: f64 = 1e-6;
/// Epsilon of the QK-Norm layer norm.
pub const QK_NORM_EPS: f64 = 1e-6;
/// Standard deviation of the random initialization.
pub const INIT_SCALE: f64 = 0.07;

/// A decoder: config, layer layout and parameters, plus RoPE tables.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    config: ModelConfig,
    pattern: LayerPattern,
    params: ParamStore<T>,
    index: ParamIndex,
    ropes: Vec<Option<Arc<RopeCache>>>,
    parallelism: Parallelism,
}

/// Tape handles produced by [`Model::graph`].
#[derive(Debug, Clone)]
pub struct Graph {
    pub logits: Var,
    /// Attention node of every layer, in depth order.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub logits: Tensor<T>,
    pub trace: Option<AttentionTrace>,
}

fn rope_tables(config: &ModelConfig, pattern: &LayerPattern) -> Result<Vec<Option<Arc<RopeCache>>>> {
    let mut built: Vec<(f64, Arc<RopeCache>)> = Vec::new();
    pattern
        .layers
        .iter()
        .map(|spec| match (spec.positional, spec.theta) {
            (Positional::Rope, Some(theta)) => {
                if let Some((_, c)) = built.iter().find(|(t, _)| *t == theta) {
                    return Ok(Some(Arc::clone(c)));
                }
                let c = Arc::new(build_rope_cache(theta, config.head_dim(), config.max_seq)?);
                built.push((theta, Arc::clone(&c)));
                Ok(Some(c))
            }
            _ => Ok(None),
        })
        .collect()
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, pattern: LayerPattern, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        pattern.validate()?;
        if pattern.len() != config.n_layers {
            return Err(Error::Invalid(format!(
                "pattern has {} layers, config n_layers = {}",
                pattern.len(),
                config.n_layers
            )));
        }
        let index = index_params(&params, &config, &pattern)?;
        let ropes = rope_tables(&config, &pattern)?;
        Ok(Self { config, pattern, params, index, ropes, parallelism: Parallelism::default() })
    }

    /// Randomly initialized model.
    pub fn init(config: ModelConfig, pattern: LayerPattern, seed: u64) -> Result<Self> {
        let params = init_params(&config, &pattern, seed, INIT_SCALE)?;
        Self::new(config, pattern, params)
    }

    pub fn with_parallelism(mut self, p: Parallelism) -> Self {
        self.parallelism = p;
        self
    }

    pub fn parallelism(&self) -> Parallelism {
        self.parallelism
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn pattern(&self) -> &LayerPattern {
        &self.pattern
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Swaps the RoPE base of every RoPE layer, keeping the weights.
    pub fn set_theta(&mut self, theta: f64) -> Result<()> {
        let pattern = self.pattern.with_theta(theta);
        self.ropes = rope_tables(&self.config, &pattern)?;
        self.pattern = pattern;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            pattern: self.pattern.clone(),
            params: self.params.cast(),
            index: self.index.clone(),
            ropes: self.ropes.clone(),
            parallelism: self.parallelism,
        }
    }

    /// Records every parameter as a tape leaf, in store order.
    pub fn push_params(&self, tape: &mut GradTape<T>) -> Vec<Var> {
        self.params.tensors().iter().map(|t| tape.leaf(t.clone())).collect()
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Invalid("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_seq {
            return Err(Error::SequenceTooLong { len: tokens.len(), max_seq: self.config.max_seq });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Invalid(format!("token id {t} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Builds the forward graph on `tape` using `params` (leaves from
    /// [`push_params`](Self::push_params)). With `last_only` the output head
    /// only runs on the final position.
    pub fn graph(&self, tape: &mut GradTape<T>, params: &[Var], tokens: &[usize], keep_weights: bool, last_only: bool) -> Result<Graph> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let len = tokens.len();
        let positions: Vec<usize> = (0..len).collect();
        let eps = T::of(NORM_EPS);
        let p = |i: usize| params[i];

        let mut x = tape.embed(p(self.index.embed), tokens)?;
        let mut attention = Vec::with_capacity(cfg.n_layers);
        for ((spec, bp), rope) in self.pattern.layers.iter().zip(&self.index.blocks).zip(&self.ropes) {
            let h = tape.rms_norm(x, p(bp.attn_norm), eps)?;
            let q = tape.matmul(h, p(bp.wq))?;
            let k = tape.matmul(h, p(bp.wk))?;
            let v = tape.matmul(h, p(bp.wv))?;
            let mut q = tape.split_heads(q, cfg.n_query_heads)?;
            let mut k = tape.split_heads(k, cfg.n_kv_heads)?;
            let v = tape.split_heads(v, cfg.n_kv_heads)?;
            if let Some((qg, kg)) = bp.qk_norm {
                q = tape.layer_norm(q, p(qg), T::of(QK_NORM_EPS))?;
                k = tape.layer_norm(k, p(kg), T::of(QK_NORM_EPS))?;
            }
            if let Some(cache) = rope {
                q = tape.rope(q, cache, &positions)?;
                k = tape.rope(k, cache, &positions)?;
            }
            let mask = build_mask(len, spec.mask_kind, spec.window)?;
            let a = tape.attend(q, k, v, &mask, cfg.n_kv_heads, keep_weights)?;
            attention.push(a);
            let a = tape.merge_heads(a)?;
            let a = tape.matmul(a, p(bp.wo))?;
            x = tape.add(x, a)?;

            let h = tape.rms_norm(x, p(bp.ffn_norm), eps)?;
            let gate = tape.matmul(h, p(bp.w_gate))?;
            let up = tape.matmul(h, p(bp.w_up))?;
            let f = tape.swiglu(gate, up)?;
            let f = tape.matmul(f, p(bp.w_down))?;
            x = tape.add(x, f)?;
        }
        if last_only {
            x = tape.rows(x, len - 1, len)?;
        }
        let h = tape.rms_norm(x, p(self.index.final_norm), eps)?;
        let logits = tape.matmul(h, p(self.index.unembed))?;
        Ok(Graph { logits, attention })
    }

    /// Collects the captured weights of a graph into a trace.
    pub fn trace_from(&self, tape: &GradTape<T>, graph: &Graph, len: usize) -> Result<AttentionTrace> {
        let mut trace = AttentionTrace::new(len, self.config.n_query_heads);
        for (spec, &a) in self.pattern.layers.iter().zip(&graph.attention) {
            let w = tape
                .attention_weights(a)
                .ok_or_else(|| Error::Invalid("attention weights were not kept".into()))?;
            trace.push_layer(spec.kind(), w)?;
        }
        Ok(trace)
    }

    /// Logits `[len, vocab]` and, with `capture`, one `[heads, len, len]` slab per layer.
    pub fn forward(&self, tokens: &[usize], capture: bool) -> Result<ForwardOutput<T>> {
        let mut tape = GradTape::inference().with_parallelism(self.parallelism);
        let params = self.push_params(&mut tape);
        let graph = self.graph(&mut tape, &params, tokens, capture, false)?;
        let trace = capture.then(|| self.trace_from(&tape, &graph, tokens.len())).transpose()?;
        Ok(ForwardOutput { logits: tape.value(graph.logits).clone(), trace })
    }

    /// Logits of the final position only.
    pub fn last_logits(&self, tokens: &[usize]) -> Result<Vec<T>> {
        let mut tape = GradTape::inference().with_parallelism(self.parallelism);
        let params = self.push_params(&mut tape);
        let graph = self.graph(&mut tape, &params, tokens, false, true)?;
        Ok(tape.value(graph.logits).data().to_vec())
    }
}

/// Free-function form of [`Model::forward`].
pub fn forward<T: Real>(
    config: &ModelConfig,
    pattern: &LayerPattern,
    weights: &ParamStore<T>,
    tokens: &[usize],
    capture: bool,
) -> Result<ForwardOutput<T>> {
    Model::new(config.clone(), pattern.clone(), weights.clone())?.forward(tokens, capture)
}
