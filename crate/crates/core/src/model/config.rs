use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Decoder architecture dimensions. The FFN is always SwiGLU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub n_query_heads: usize,
    pub n_kv_heads: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
}

impl Default for ModelConfig {
    /// Desk scale: the production layout divided down to CPU size while keeping
    /// the head-count divisibility structure.
    fn default() -> Self {
        Self { emb_dim: 128, ffn_dim: 384, n_layers: 8, n_query_heads: 4, n_kv_heads: 2, vocab_size: 512, max_seq: 2048 }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.emb_dim / self.n_query_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("emb_dim", self.emb_dim),
            ("ffn_dim", self.ffn_dim),
            ("n_query_heads", self.n_query_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        if self.emb_dim % self.n_query_heads != 0 {
            return Err(invalid(format!(
                "emb_dim ({}) must be divisible by n_query_heads ({})",
                self.emb_dim, self.n_query_heads
            )));
        }
        if self.n_query_heads % self.n_kv_heads != 0 {
            return Err(invalid(format!(
                "n_query_heads ({}) must be divisible by n_kv_heads ({})",
                self.n_query_heads, self.n_kv_heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(invalid(format!("head_dim ({}) must be even for RoPE", self.head_dim())));
        }
        Ok(())
    }
}
