use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::model::{LayerPattern, ModelConfig};
use crate::numeric::{Real, Tensor};

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Positions of one block's tensors inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockParams {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub qk_norm: Option<(usize, usize)>,
    pub ffn_norm: usize,
    pub w_gate: usize,
    pub w_up: usize,
    pub w_down: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ParamIndex {
    pub embed: usize,
    pub blocks: Vec<BlockParams>,
    pub final_norm: usize,
    pub unembed: usize,
}

/// Expected `(name, shape)` list for a config and pattern, in store order.
pub fn param_layout(config: &ModelConfig, pattern: &LayerPattern) -> Vec<(String, Vec<usize>)> {
    let (e, f, v, d) = (config.emb_dim, config.ffn_dim, config.vocab_size, config.head_dim());
    let mut out = vec![("embed".to_string(), vec![v, e])];
    for spec in &pattern.layers {
        let p = |s: &str| format!("layers.{}.{s}", spec.index);
        out.push((p("attn_norm"), vec![e]));
        out.push((p("wq"), vec![e, config.n_query_heads * d]));
        out.push((p("wk"), vec![e, config.kv_dim()]));
        out.push((p("wv"), vec![e, config.kv_dim()]));
        out.push((p("wo"), vec![config.n_query_heads * d, e]));
        if spec.qk_norm {
            out.push((p("q_norm"), vec![d]));
            out.push((p("k_norm"), vec![d]));
        }
        out.push((p("ffn_norm"), vec![e]));
        out.push((p("w_gate"), vec![e, f]));
        out.push((p("w_up"), vec![e, f]));
        out.push((p("w_down"), vec![f, e]));
    }
    out.push(("final_norm".to_string(), vec![e]));
    out.push(("unembed".to_string(), vec![e, v]));
    out
}

fn is_gain(name: &str) -> bool {
    name.ends_with("norm")
}

fn is_residual_out(name: &str) -> bool {
    name.ends_with(".wo") || name.ends_with(".w_down")
}

/// Gains start at one, matrices at `N(0, scale²)`; projections writing into
/// the residual stream (`wo`, `w_down`) are further scaled by
/// `1/sqrt(2·n_layers)`.
pub fn init_params<T: Real>(config: &ModelConfig, pattern: &LayerPattern, seed: u64, scale: f64) -> Result<ParamStore<T>> {
    config.validate()?;
    pattern.validate()?;
    if pattern.len() != config.n_layers {
        return Err(invalid(format!("pattern has {} layers, config n_layers = {}", pattern.len(), config.n_layers)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, scale).map_err(|e| invalid(e.to_string()))?;
    let out_factor = 1.0 / (2.0 * config.n_layers.max(1) as f64).sqrt();
    let mut store = ParamStore::new();
    for (name, shape) in param_layout(config, pattern) {
        let n: usize = shape.iter().product();
        let data: Vec<T> = if is_gain(&name) {
            vec![T::one(); n]
        } else {
            let f = if is_residual_out(&name) { out_factor } else { 1.0 };
            (0..n).map(|_| T::of(f * normal.sample(&mut rng))).collect()
        };
        store.push(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

pub(crate) fn index_params<T: Real>(store: &ParamStore<T>, config: &ModelConfig, pattern: &LayerPattern) -> Result<ParamIndex> {
    for (name, shape) in param_layout(config, pattern) {
        match store.get(&name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => return Err(invalid(format!("parameter {name} has shape {:?}, expected {shape:?}", t.shape()))),
            None => return Err(invalid(format!("missing parameter {name}"))),
        }
    }
    let at = |n: String| store.index_of(&n).expect("checked above");
    let blocks = pattern
        .layers
        .iter()
        .map(|spec| {
            let p = |s: &str| format!("layers.{}.{s}", spec.index);
            BlockParams {
                attn_norm: at(p("attn_norm")),
                wq: at(p("wq")),
                wk: at(p("wk")),
                wv: at(p("wv")),
                wo: at(p("wo")),
                qk_norm: spec.qk_norm.then(|| (at(p("q_norm")), at(p("k_norm")))),
                ffn_norm: at(p("ffn_norm")),
                w_gate: at(p("w_gate")),
                w_up: at(p("w_up")),
                w_down: at(p("w_down")),
            }
        })
        .collect();
    Ok(ParamIndex { embed: at("embed".into()), blocks, final_norm: at("final_norm".into()), unembed: at("unembed".into()) })
}
