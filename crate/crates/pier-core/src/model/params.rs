//! Named parameter storage and the structural handles the forward pass uses.
//!
//! Every tensor lives in a [`ParamStore`] under a dotted name whose first
//! segment ("base", "adapter", "fusion") identifies its training stage.
//! Structure types hold [`ParamId`]s into the store, so there is exactly one
//! copy of each parameter and optimizer state can key off store order.

use alloc::string::String;
use alloc::vec::Vec;

use crate::checksum::{Checksum, Hasher};
use crate::error::{CoreError, CoreResult};
use crate::numerics::real::Real;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: String, tensor: Tensor<F>) -> ParamId {
        self.entries.push((name, tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].1
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    /// Total scalar count over parameters whose name starts with `prefix`.
    pub fn count_params(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Checksum over the byte representation of all parameters under a
    /// prefix, in store order.
    pub fn checksum_group(&self, prefix: &str) -> Checksum {
        let mut h = Hasher::new();
        for (name, t) in &self.entries {
            if name.starts_with(prefix) {
                h.update(name.as_bytes());
                h.update_tensor(t);
            }
        }
        h.finish()
    }

    /// Mounts every parameter on a tape in store order. `trainable` decides
    /// gradient participation per name.
    pub fn mount(&self, tape: &mut Tape<F>, trainable: &dyn Fn(&str) -> bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(name, t)| tape.leaf_with(t, trainable(name)))
            .collect()
    }

    /// Replaces a parameter's contents, keeping shape.
    pub fn set_tensor(&mut self, id: ParamId, tensor: Tensor<F>) -> CoreResult<()> {
        if tensor.shape() != self.entries[id.0].1.shape() {
            return Err(CoreError::shape(alloc::format!(
                "set_tensor {}: {:?} vs {:?}",
                self.entries[id.0].0,
                tensor.shape(),
                self.entries[id.0].1.shape()
            )));
        }
        self.entries[id.0].1 = tensor;
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }
}

// ── Structural handles ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct LinearP {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormP {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnP {
    pub q: LinearP,
    pub k: LinearP,
    pub v: LinearP,
    pub o: LinearP,
}

#[derive(Debug, Clone, Copy)]
pub struct EncLayerP {
    pub ln1: LayerNormP,
    pub attn: AttnP,
    pub ln2: LayerNormP,
    pub ff1: LinearP,
    pub ff2: LinearP,
}

#[derive(Debug, Clone, Copy)]
pub struct DecLayerP {
    pub ln1: LayerNormP,
    pub self_attn: AttnP,
    pub ln2: LayerNormP,
    pub cross_attn: AttnP,
    pub ln3: LayerNormP,
    pub ff1: LinearP,
    pub ff2: LinearP,
}

#[derive(Debug, Clone)]
pub struct BaseP {
    pub tok_embed: ParamId,
    pub pos_embed: ParamId,
    pub enc: Vec<EncLayerP>,
    pub enc_ln: LayerNormP,
    pub dec: Vec<DecLayerP>,
    pub dec_ln: LayerNormP,
}

/// Bottleneck adapter: residual down/up projection pair.
#[derive(Debug, Clone, Copy)]
pub struct AdapterP {
    pub down: LinearP,
    pub up: LinearP,
}

/// Per-layer attention fusion: three square matrices, no biases.
#[derive(Debug, Clone, Copy)]
pub struct FusionP {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
}

const INIT_STD: f64 = 0.02;

pub(crate) struct Builder<'a, F> {
    pub store: &'a mut ParamStore<F>,
    pub rng: &'a mut Rng,
}

impl<'a, F: Real> Builder<'a, F> {
    fn tensor(&mut self, name: String, t: Tensor<F>) -> ParamId {
        self.store.add(name, t)
    }

    fn randn(&mut self, name: String, shape: Vec<usize>) -> ParamId {
        let t = Tensor::randn(shape, INIT_STD, self.rng);
        self.tensor(name, t)
    }

    fn zeros(&mut self, name: String, shape: Vec<usize>) -> ParamId {
        self.tensor(name, Tensor::zeros(shape))
    }

    fn ones(&mut self, name: String, shape: Vec<usize>) -> ParamId {
        let numel: usize = shape.iter().product();
        self.tensor(
            name,
            Tensor::from_vec(shape, alloc::vec![F::one(); numel]).expect("ones"),
        )
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> LinearP {
        LinearP {
            w: self.randn(alloc::format!("{name}.w"), alloc::vec![d_in, d_out]),
            b: self.zeros(alloc::format!("{name}.b"), alloc::vec![d_out]),
        }
    }

    /// Linear whose weight and bias start at zero (adapter up-projections,
    /// which must leave the residual stream untouched at initialization).
    pub fn linear_zero(&mut self, name: &str, d_in: usize, d_out: usize) -> LinearP {
        LinearP {
            w: self.zeros(alloc::format!("{name}.w"), alloc::vec![d_in, d_out]),
            b: self.zeros(alloc::format!("{name}.b"), alloc::vec![d_out]),
        }
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> LayerNormP {
        LayerNormP {
            gamma: self.ones(alloc::format!("{name}.gamma"), alloc::vec![d]),
            beta: self.zeros(alloc::format!("{name}.beta"), alloc::vec![d]),
        }
    }

    pub fn attention(&mut self, name: &str, d: usize) -> AttnP {
        AttnP {
            q: self.linear(&alloc::format!("{name}.q"), d, d),
            k: self.linear(&alloc::format!("{name}.k"), d, d),
            v: self.linear(&alloc::format!("{name}.v"), d, d),
            o: self.linear(&alloc::format!("{name}.o"), d, d),
        }
    }

    pub fn enc_layer(&mut self, name: &str, d: usize, d_ff: usize) -> EncLayerP {
        EncLayerP {
            ln1: self.layer_norm(&alloc::format!("{name}.ln1"), d),
            attn: self.attention(&alloc::format!("{name}.attn"), d),
            ln2: self.layer_norm(&alloc::format!("{name}.ln2"), d),
            ff1: self.linear(&alloc::format!("{name}.ff1"), d, d_ff),
            ff2: self.linear(&alloc::format!("{name}.ff2"), d_ff, d),
        }
    }

    pub fn dec_layer(&mut self, name: &str, d: usize, d_ff: usize) -> DecLayerP {
        DecLayerP {
            ln1: self.layer_norm(&alloc::format!("{name}.ln1"), d),
            self_attn: self.attention(&alloc::format!("{name}.self_attn"), d),
            ln2: self.layer_norm(&alloc::format!("{name}.ln2"), d),
            cross_attn: self.attention(&alloc::format!("{name}.cross_attn"), d),
            ln3: self.layer_norm(&alloc::format!("{name}.ln3"), d),
            ff1: self.linear(&alloc::format!("{name}.ff1"), d, d_ff),
            ff2: self.linear(&alloc::format!("{name}.ff2"), d_ff, d),
        }
    }

    pub fn adapter(&mut self, name: &str, d: usize, bottleneck: usize) -> AdapterP {
        AdapterP {
            down: self.linear(&alloc::format!("{name}.down"), d, bottleneck),
            up: self.linear_zero(&alloc::format!("{name}.up"), bottleneck, d),
        }
    }

    /// Q and K start small-random; V starts at identity so the fused path
    /// begins as a near-pass-through of the base representation.
    pub fn fusion(&mut self, name: &str, d: usize) -> FusionP {
        FusionP {
            q: self.randn(alloc::format!("{name}.q"), alloc::vec![d, d]),
            k: self.randn(alloc::format!("{name}.k"), alloc::vec![d, d]),
            v: self.tensor(alloc::format!("{name}.v"), Tensor::eye(d)),
        }
    }
}
