//! The fused architecture: frozen base encoder-decoder, frozen bottleneck
//! adapters, and trainable per-layer attention fusion.

pub mod config;
pub mod forward;
pub mod params;

pub use config::{ModelConfig, Variant};
pub use forward::{
    adapter_forward, encode, forward, fusion_attend, pie_embedding, pie_embedding_node,
    pool_span, reconstruction_logits, ForwardOutput, FusedModel,
};
pub use params::{AdapterP, FusionP, ParamId, ParamStore};

/// Parameter-group prefixes, one per training stage.
pub const GROUP_BASE: &str = "base.";
pub const GROUP_ADAPTER: &str = "adapter.";
pub const GROUP_FUSION: &str = "fusion.";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::Tape;
    use crate::numerics::tensor::Tensor;
    use alloc::vec;
    use alloc::vec::Vec;

    fn tiny_tokens() -> Vec<u32> {
        vec![5, 9, 3, 7, 11]
    }

    #[test]
    fn base_forward_shape_and_determinism() {
        let cfg = ModelConfig::tiny(16).with_variant(Variant::BaseOnly);
        let model = FusedModel::<f32>::new(cfg, 1).unwrap();
        let a = forward_states(&model, &tiny_tokens());
        assert_eq!(a.0.len(), model.config.n_enc_layers);
        for s in &a.0 {
            assert_eq!(s.shape(), &[5, model.config.d_model]);
        }
        let b = forward_states(&model, &tiny_tokens());
        assert_eq!(a.0, b.0, "same input twice must be bit-identical");
        assert_eq!(a.1, b.1);
    }

    fn forward_states(
        model: &FusedModel<f32>,
        tokens: &[u32],
    ) -> (Vec<Tensor<f32>>, Tensor<f32>) {
        let mut tape = Tape::new();
        let vars = model.mount_frozen(&mut tape);
        let out = forward(&mut tape, &vars, model, tokens, None).unwrap();
        (
            out.enc_states
                .iter()
                .map(|s| tape.value(*s).clone())
                .collect(),
            tape.value(out.repr).clone(),
        )
    }

    #[test]
    fn contextualization_smoke_test() {
        let cfg = ModelConfig::tiny(16).with_variant(Variant::BaseOnly);
        let model = FusedModel::<f32>::new(cfg, 2).unwrap();
        let a = forward_states(&model, &[5, 9, 3, 7, 11]).1;
        let b = forward_states(&model, &[5, 9, 4, 7, 11]).1;
        assert_ne!(a, b, "changing one token must change encoder outputs");
    }

    #[test]
    fn overlength_and_bad_ids_error() {
        let cfg = ModelConfig::tiny(16);
        let model = FusedModel::<f32>::new(cfg, 1).unwrap();
        let long = vec![3u32; model.config.max_seq_len + 1];
        let mut tape = Tape::new();
        let vars = model.mount_frozen(&mut tape);
        assert!(matches!(
            forward(&mut tape, &vars, &model, &long, None),
            Err(crate::error::CoreError::Overlength { .. })
        ));
        assert!(forward(&mut tape, &vars, &model, &[99], None).is_err());
        assert!(forward(&mut tape, &vars, &model, &[], None).is_err());
    }

    #[test]
    fn adapter_is_identity_at_init() {
        let cfg = ModelConfig::tiny(16).with_variant(Variant::AdapterOnly);
        let adapter_model = FusedModel::<f32>::new(cfg, 3).unwrap();
        let base_model = FusedModel::<f32>::new(
            ModelConfig::tiny(16).with_variant(Variant::BaseOnly),
            3,
        )
        .unwrap();
        // same seed means identical base weights; zero-init up-projections
        // make the adapter path exactly the base path
        let a = forward_states(&adapter_model, &tiny_tokens());
        let b = forward_states(&base_model, &tiny_tokens());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn adapter_output_preserves_shape() {
        let cfg = ModelConfig::tiny(16).with_variant(Variant::AdapterOnly);
        let model = FusedModel::<f32>::new(cfg, 4).unwrap();
        let mut tape = Tape::new();
        let vars = model.mount_frozen(&mut tape);
        let x = tape.constant(Tensor::randn(
            vec![7, model.config.d_model],
            1.0,
            &mut crate::rng::Rng::new(9),
        ));
        let g = adapter_forward(&mut tape, &vars, x, &model.enc_adapters[0]).unwrap();
        assert_eq!(tape.value(g).shape(), &[7, model.config.d_model]);
    }

    #[test]
    fn fusion_identical_candidates_collapse_to_v_projection() {
        let cfg = ModelConfig::tiny(16);
        let model = FusedModel::<f32>::new(cfg, 5).unwrap();
        let mut tape = Tape::new();
        let vars = model.mount_frozen(&mut tape);
        let d = model.config.d_model;
        let x = tape.constant(Tensor::randn(vec![3, d], 1.0, &mut crate::rng::Rng::new(8)));
        let (o, attn) = fusion_attend(&mut tape, &vars, x, x, &model.enc_fusion[0]).unwrap();
        let vproj = tape.matmul(x, vars[model.enc_fusion[0].v.0]).unwrap();
        let ov = tape.value(o).data();
        let vv = tape.value(vproj).data();
        for (a, b) in ov.iter().zip(vv) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        // attention over two identical candidates is exactly (0.5, 0.5)
        for row in 0..3 {
            let w = tape.value(attn).row(row);
            assert!((w[0] - 0.5).abs() < 1e-6 && (w[1] - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn fusion_hand_evaluated_identity_weights() {
        // Q = K = V = I, |b| = 1, g orthogonal to b with |g| = 1:
        // scores = [1, 0], weights = [e/(e+1), 1/(e+1)], o = w0 b + w1 g.
        let mut cfg = ModelConfig::tiny(16);
        cfg.d_model = 4;
        cfg.n_heads = 2;
        cfg.adapter_bottleneck = 2;
        let mut model = FusedModel::<f64>::new(cfg, 6).unwrap();
        let d = 4;
        let eye = Tensor::<f64>::eye(d);
        for name in ["fusion.enc0.q", "fusion.enc0.k", "fusion.enc0.v"] {
            let id = model.store.find(name).unwrap();
            model.store.set_tensor(id, eye.clone()).unwrap();
        }
        let mut tape = Tape::new();
        let vars = model.mount_frozen(&mut tape);
        let b = tape.constant(Tensor::from_vec(vec![1, d], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let g = tape.constant(Tensor::from_vec(vec![1, d], vec![0.0, 1.0, 0.0, 0.0]).unwrap());
        let (o, attn) = fusion_attend(&mut tape, &vars, b, g, &model.enc_fusion[0]).unwrap();
        let e = core::f64::consts::E;
        let w0 = e / (e + 1.0);
        let w1 = 1.0 / (e + 1.0);
        let w = tape.value(attn).row(0);
        assert!((w[0] - w0).abs() < 1e-12 && (w[1] - w1).abs() < 1e-12);
        let out = tape.value(o).data();
        let expect = [w0, w1, 0.0, 0.0];
        for (a, b) in out.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn base_only_variant_matches_standalone_base() {
        // a fusion model at init routes through adapters (identity) and a
        // fusion layer, so only the BaseOnly variant must equal the bare base
        let fused_cfg = ModelConfig::tiny(16);
        let fused = FusedModel::<f32>::new(fused_cfg, 7).unwrap();
        let mut base_variant = fused.clone();
        base_variant.config.variant = Variant::BaseOnly;
        let standalone = FusedModel::<f32>::new(
            ModelConfig::tiny(16).with_variant(Variant::BaseOnly),
            7,
        )
        .unwrap();
        let a = forward_states(&base_variant, &tiny_tokens()).1;
        let b = forward_states(&standalone, &tiny_tokens()).1;
        assert_eq!(a, b);
    }

    #[test]
    fn fusion_parameter_count_is_exact() {
        let cfg = ModelConfig::small(300);
        let model = FusedModel::<f32>::new(cfg, 1).unwrap();
        let d = model.config.d_model;
        let routed = model.config.n_routed_layers();
        assert_eq!(
            model.store.count_params(GROUP_FUSION),
            routed * 3 * d * d,
            "fusion stage trainable parameter count"
        );
    }

    #[test]
    fn fusion_weights_are_probability_distributions() {
        let cfg = ModelConfig::tiny(16);
        let model = FusedModel::<f32>::new(cfg, 11).unwrap();
        let mut rng = crate::rng::Rng::new(17);
        for _ in 0..25 {
            let len = rng.range_inclusive(1, 8);
            let tokens: Vec<u32> = (0..len).map(|_| rng.below(16) as u32).collect();
            let mut tape = Tape::new();
            let vars = model.mount_frozen(&mut tape);
            let out = forward(&mut tape, &vars, &model, &tokens, Some(&tokens)).unwrap();
            assert!(!out.fusion_attn.is_empty());
            for attn in &out.fusion_attn {
                let t = tape.value(*attn);
                let (rows, two) = t.dims2().unwrap();
                assert_eq!(two, 2);
                for r in 0..rows {
                    let w = t.row(r);
                    assert!(w[0] >= 0.0 && w[1] >= 0.0);
                    assert!((w[0] + w[1] - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn pie_embedding_matches_manual_recomputation() {
        let cfg = ModelConfig::tiny(16);
        let model = FusedModel::<f32>::new(cfg, 12).unwrap();
        let tokens = tiny_tokens();
        let span = (1, 3);
        let emb = pie_embedding(&model, &tokens, span).unwrap();
        assert_eq!(emb.len(), model.config.d_model);
        let (_, enc_final) = forward_states(&model, &tokens);
        let rows: Vec<&[f32]> = (span.0..span.1).map(|r| enc_final.row(r)).collect();
        let manual = crate::numerics::mean_pool(&rows).unwrap();
        assert_eq!(emb, manual);
        // single-token span equals that row exactly
        let single = pie_embedding(&model, &tokens, (2, 3)).unwrap();
        assert_eq!(single.as_slice(), enc_final.row(2));
        // invalid spans error
        assert!(pie_embedding(&model, &tokens, (3, 3)).is_err());
        assert!(pie_embedding(&model, &tokens, (4, 9)).is_err());
    }

    #[test]
    fn adopt_group_copies_and_checks() {
        let base = FusedModel::<f32>::new(
            ModelConfig::tiny(16).with_variant(Variant::BaseOnly),
            21,
        )
        .unwrap();
        let mut fused = FusedModel::<f32>::new(ModelConfig::tiny(16), 22).unwrap();
        assert_ne!(
            fused.store.checksum_group(GROUP_BASE),
            base.store.checksum_group(GROUP_BASE)
        );
        fused.adopt_group(&base.store, GROUP_BASE).unwrap();
        assert_eq!(
            fused.store.checksum_group(GROUP_BASE),
            base.store.checksum_group(GROUP_BASE)
        );
        // the source lacks adapter params entirely
        assert!(fused.adopt_group(&base.store, GROUP_ADAPTER).is_err());
    }
}
