//! Per-layer attention layouts and the interleaving builder.
//!
//! Text form, one whitespace-separated token per layer (an optional `*n`
//! suffix repeats it): `nope`, `rope@10000`, `qk+rope@10000`, with a
//! `/swa<S>` suffix for sliding-window layers, e.g.
//! `rope@10000/swa128*3 nope rope@10000/swa128*3 nope`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{LayerKind, MaskKind};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Positional {
    Rope,
    Nope,
}

/// Architecture family selectable from configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    RopeBaseline,
    QkNorm,
    Nope,
    Rnope,
    RnopeSwa,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::RopeBaseline, Variant::QkNorm, Variant::Nope, Variant::Rnope, Variant::RnopeSwa];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RopeBaseline => "rope-baseline",
            Variant::QkNorm => "qk-norm",
            Variant::Nope => "nope",
            Variant::Rnope => "rnope",
            Variant::RnopeSwa => "rnope-swa",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid(format!("unknown variant `{s}` (expected one of rope-baseline, qk-norm, nope, rnope, rnope-swa)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    pub positional: Positional,
    pub qk_norm: bool,
    pub mask_kind: MaskKind,
    pub theta: Option<f64>,
    pub window: Option<usize>,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match (self.positional, self.mask_kind, self.qk_norm) {
            (Positional::Rope, _, true) => LayerKind::QkNorm,
            (Positional::Nope, MaskKind::CausalFull, _) => LayerKind::NopeFull,
            (Positional::Nope, MaskKind::CausalSwa, _) => LayerKind::NopeSwa,
            (Positional::Rope, MaskKind::CausalFull, false) => LayerKind::RopeFull,
            (Positional::Rope, MaskKind::CausalSwa, false) => LayerKind::RopeSwa,
        }
    }

    pub fn is_swa(&self) -> bool {
        self.mask_kind == MaskKind::CausalSwa
    }

    fn validate(&self) -> Result<()> {
        match (self.positional, self.theta) {
            (Positional::Nope, Some(_)) => return Err(invalid(format!("layer {}: nope layers carry no theta", self.index))),
            (Positional::Rope, None) => return Err(invalid(format!("layer {}: rope layer needs theta", self.index))),
            (Positional::Rope, Some(t)) if !(t > 0.0) => {
                return Err(invalid(format!("layer {}: theta must be positive", self.index)))
            }
            _ => {}
        }
        match (self.mask_kind, self.window) {
            (MaskKind::CausalSwa, None | Some(0)) => Err(invalid(format!("layer {}: swa needs a window ≥ 1", self.index))),
            (MaskKind::CausalFull, Some(_)) => Err(invalid(format!("layer {}: full layers carry no window", self.index))),
            _ => Ok(()),
        }
    }

    fn token(&self) -> String {
        let mut s = match (self.positional, self.qk_norm) {
            (Positional::Nope, false) => "nope".to_string(),
            (Positional::Nope, true) => "qk+nope".to_string(),
            (Positional::Rope, qk) => format!("{}rope@{}", if qk { "qk+" } else { "" }, self.theta.unwrap_or_default()),
        };
        if let Some(w) = self.window {
            s.push_str(&format!("/swa{w}"));
        }
        s
    }
}

/// Ordered layer specs, bottom layer first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPattern {
    pub layers: Vec<LayerSpec>,
}

impl LayerPattern {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.index != i {
                return Err(invalid(format!("layer index {} at position {i}", l.index)));
            }
            l.validate()?;
        }
        Ok(())
    }

    /// Distinct RoPE bases used by the pattern.
    pub fn thetas(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for t in self.layers.iter().filter_map(|l| l.theta) {
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }

    /// Replaces the RoPE base of every RoPE layer.
    pub fn with_theta(&self, theta: f64) -> Self {
        let mut p = self.clone();
        for l in &mut p.layers {
            if l.positional == Positional::Rope {
                l.theta = Some(theta);
            }
        }
        p
    }

    pub fn full_layers(&self) -> usize {
        self.layers.iter().filter(|l| !l.is_swa()).count()
    }
}

fn rope_layer(index: usize, theta: f64, window: Option<usize>, qk_norm: bool) -> LayerSpec {
    LayerSpec {
        index,
        positional: Positional::Rope,
        qk_norm,
        mask_kind: if window.is_some() { MaskKind::CausalSwa } else { MaskKind::CausalFull },
        theta: Some(theta),
        window,
    }
}

fn nope_layer(index: usize) -> LayerSpec {
    LayerSpec { index, positional: Positional::Nope, qk_norm: false, mask_kind: MaskKind::CausalFull, theta: None, window: None }
}

/// Builds the layer layout of a variant.
///
/// `ratio = (a, b)`: for `rnope-swa` each group is `b` sliding-window RoPE
/// layers followed by `a` full NoPE layers; for `rnope` each group is `a` NoPE
/// layers followed by `b` RoPE layers, all full attention. Baselines are uniform.
pub fn build_layer_pattern(n_layers: usize, ratio: (usize, usize), window: usize, theta: f64, variant: Variant) -> Result<LayerPattern> {
    let group = ratio.0 + ratio.1;
    let interleaved = matches!(variant, Variant::Rnope | Variant::RnopeSwa);
    if interleaved {
        if ratio.0 == 0 || ratio.1 == 0 {
            return Err(invalid(format!("interleaved variant needs both ratio parts > 0, got {}:{}", ratio.0, ratio.1)));
        }
        if n_layers % group != 0 {
            return Err(invalid(format!("n_layers ({n_layers}) is not divisible by the group size {group} of ratio {}:{}", ratio.0, ratio.1)));
        }
    }
    if variant == Variant::RnopeSwa && window == 0 {
        return Err(invalid("rnope-swa needs a sliding window ≥ 1"));
    }
    let layers = (0..n_layers)
        .map(|i| match variant {
            Variant::RopeBaseline => rope_layer(i, theta, None, false),
            Variant::QkNorm => rope_layer(i, theta, None, true),
            Variant::Nope => nope_layer(i),
            Variant::Rnope => {
                if i % group < ratio.0 {
                    nope_layer(i)
                } else {
                    rope_layer(i, theta, None, false)
                }
            }
            Variant::RnopeSwa => {
                if i % group < ratio.1 {
                    rope_layer(i, theta, Some(window), false)
                } else {
                    nope_layer(i)
                }
            }
        })
        .collect();
    let pattern = LayerPattern { layers };
    pattern.validate()?;
    Ok(pattern)
}

impl fmt::Display for LayerPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tokens: Vec<String> = self.layers.iter().map(LayerSpec::token).collect();
        let mut i = 0;
        let mut first = true;
        while i < tokens.len() {
            let mut run = 1;
            while i + run < tokens.len() && tokens[i + run] == tokens[i] {
                run += 1;
            }
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            if run > 1 {
                write!(f, "{}*{run}", tokens[i])?;
            } else {
                f.write_str(&tokens[i])?;
            }
            i += run;
        }
        Ok(())
    }
}

impl FromStr for LayerPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for raw in s.split_whitespace() {
            let (tok, count) = match raw.split_once('*') {
                Some((t, n)) => (t, n.parse::<usize>().map_err(|_| invalid(format!("bad repeat count in `{raw}`")))?),
                None => (raw, 1),
            };
            let (body, window) = match tok.split_once("/swa") {
                Some((b, w)) => (b, Some(w.parse::<usize>().map_err(|_| invalid(format!("bad window in `{raw}`")))?)),
                None => (tok, None),
            };
            let (qk_norm, body) = match body.strip_prefix("qk+") {
                Some(rest) => (true, rest),
                None => (false, body),
            };
            let (positional, theta) = if body == "nope" {
                (Positional::Nope, None)
            } else if let Some(t) = body.strip_prefix("rope@") {
                (Positional::Rope, Some(t.parse::<f64>().map_err(|_| invalid(format!("bad theta in `{raw}`")))?))
            } else {
                return Err(invalid(format!("unknown layer token `{raw}`")));
            };
            for _ in 0..count {
                layers.push(LayerSpec {
                    index: layers.len(),
                    positional,
                    qk_norm,
                    mask_kind: if window.is_some() { MaskKind::CausalSwa } else { MaskKind::CausalFull },
                    theta,
                    window,
                });
            }
        }
        let pattern = LayerPattern { layers };
        pattern.validate()?;
        Ok(pattern)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(p: &LayerPattern) -> Vec<LayerKind> {
        p.layers.iter().map(LayerSpec::kind).collect()
    }

    #[test]
    fn rnope_swa_one_to_three() {
        let p = build_layer_pattern(8, (1, 3), 128, 10_000.0, Variant::RnopeSwa).unwrap();
        use LayerKind::*;
        assert_eq!(kinds(&p), vec![RopeSwa, RopeSwa, RopeSwa, NopeFull, RopeSwa, RopeSwa, RopeSwa, NopeFull]);
        assert!(p.layers.iter().filter(|l| l.positional == Positional::Nope).all(|l| l.theta.is_none()));
        assert!(p.layers.iter().all(|l| !l.qk_norm));
    }

    #[test]
    fn rnope_alternates_with_full_attention() {
        let p = build_layer_pattern(4, (1, 1), 0, 10_000.0, Variant::Rnope).unwrap();
        use LayerKind::*;
        assert_eq!(kinds(&p), vec![NopeFull, RopeFull, NopeFull, RopeFull]);
        assert!(p.layers.iter().all(|l| l.mask_kind == MaskKind::CausalFull));
    }

    #[test]
    fn one_to_seven() {
        let p = build_layer_pattern(8, (1, 7), 64, 10_000.0, Variant::RnopeSwa).unwrap();
        assert!(p.layers[..7].iter().all(LayerSpec::is_swa));
        assert!(!p.layers[7].is_swa());
    }

    #[test]
    fn baselines_are_uniform() {
        for (v, k) in [
            (Variant::RopeBaseline, LayerKind::RopeFull),
            (Variant::QkNorm, LayerKind::QkNorm),
            (Variant::Nope, LayerKind::NopeFull),
        ] {
            let p = build_layer_pattern(6, (1, 3), 0, 10_000.0, v).unwrap();
            assert!(p.layers.iter().all(|l| l.kind() == k), "{v}");
        }
    }

    #[test]
    fn indivisible_depth_errors() {
        assert!(build_layer_pattern(6, (1, 3), 128, 10_000.0, Variant::RnopeSwa).is_err());
        assert!(build_layer_pattern(8, (1, 3), 0, 10_000.0, Variant::RnopeSwa).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let p = build_layer_pattern(8, (1, 3), 128, 10_000.0, Variant::RnopeSwa).unwrap();
        let text = p.to_string();
        assert_eq!(text, "rope@10000/swa128*3 nope rope@10000/swa128*3 nope");
        let back: LayerPattern = text.parse().unwrap();
        assert_eq!(back, p);
        let q = build_layer_pattern(2, (1, 1), 0, 500.0, Variant::QkNorm).unwrap();
        assert_eq!(q.to_string().parse::<LayerPattern>().unwrap(), q);
        assert!("rope".parse::<LayerPattern>().is_err());
        assert!("nope/swa0".parse::<LayerPattern>().is_err());
    }
}
