//! Model hyperparameters and architecture variants.

use crate::error::{CoreError, CoreResult};

/// Which representation path feeds the next transformer layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// The bare encoder-decoder transformer.
    BaseOnly,
    /// Adapter outputs propagate; no fusion (the non-compositional expert).
    AdapterOnly,
    /// Attention-fusion routing between base and adapter outputs.
    Fusion,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::BaseOnly => "base-only",
            Variant::AdapterOnly => "adapter-only",
            Variant::Fusion => "fusion",
        }
    }

    pub fn parse(s: &str) -> CoreResult<Self> {
        match s {
            "base-only" => Ok(Variant::BaseOnly),
            "adapter-only" => Ok(Variant::AdapterOnly),
            "fusion" => Ok(Variant::Fusion),
            other => Err(CoreError::InvalidConfig(alloc::format!(
                "unknown variant '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub adapter_bottleneck: usize,
    pub variant: Variant,
    /// Fusion layers sit after decoder layers too, not only encoder layers.
    pub fusion_in_decoder: bool,
    /// Decoder start-of-sequence token id.
    pub bos_token: u32,
}

impl ModelConfig {
    /// Desk-scale defaults; `vocab_size` always comes from the corpus.
    pub fn small(vocab_size: usize) -> Self {
        ModelConfig {
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            vocab_size,
            max_seq_len: 64,
            adapter_bottleneck: 16,
            variant: Variant::Fusion,
            fusion_in_decoder: true,
            bos_token: crate::corpus::vocab::BOS,
        }
    }

    /// Tiny configuration used by gradient-check and unit tests.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size,
            max_seq_len: 32,
            adapter_bottleneck: 4,
            variant: Variant::Fusion,
            fusion_in_decoder: true,
            bos_token: crate::corpus::vocab::BOS,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> CoreResult<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(CoreError::InvalidConfig(alloc::format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model,
                self.n_heads
            )));
        }
        if self.adapter_bottleneck >= self.d_model {
            return Err(CoreError::InvalidConfig(alloc::format!(
                "adapter_bottleneck {} must be below d_model {}",
                self.adapter_bottleneck,
                self.d_model
            )));
        }
        if self.n_enc_layers == 0 || self.n_dec_layers == 0 {
            return Err(CoreError::InvalidConfig(
                alloc::string::String::from("layer counts must be positive"),
            ));
        }
        if self.vocab_size as u64 <= u64::from(self.bos_token) {
            return Err(CoreError::InvalidConfig(alloc::format!(
                "vocab_size {} does not cover bos token {}",
                self.vocab_size,
                self.bos_token
            )));
        }
        if self.max_seq_len == 0 || self.d_ff == 0 {
            return Err(CoreError::InvalidConfig(alloc::string::String::from(
                "max_seq_len and d_ff must be positive",
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Layers that carry adapters/fusion: all encoder layers, plus decoder
    /// layers when fusion_in_decoder is set.
    pub fn n_routed_layers(&self) -> usize {
        self.n_enc_layers
            + if self.fusion_in_decoder {
                self.n_dec_layers
            } else {
                0
            }
    }
}
