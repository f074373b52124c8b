// Calibration probe: similarity-loss formulations on a reduced corpus.
use pier_core::corpus::{Corpus, CorpusParams};
use pier_core::evaluation::{evaluate, EvalConfig};
use pier_core::model::Variant;
use pier_core::training::{
    init_stage_model, train_stage, ObjectiveConfig, PromptMode, Stage, TrainConfig,
};
use pier::config::ModelSection;
use pier::run::derive_seed;
use std::time::Instant;

fn main() {
    let seed = 1u64;
    let corpus = Corpus::generate(&CorpusParams {
        n_train: 2400,
        n_test: 600,
        ..CorpusParams::default()
    })
    .unwrap();
    let ms = ModelSection {
        d_model: 48,
        d_ff: 96,
        adapter_bottleneck: 12,
        ..ModelSection::default()
    };
    let vocab = corpus.manifest.vocab_size;
    let base_cfg = ms.to_model_config(vocab, Variant::BaseOnly);
    let fusion_cfg = ms.to_model_config(vocab, Variant::Fusion);

    let t = Instant::now();
    let base = init_stage_model::<f32>(Stage::Base, &base_cfg, None, derive_seed(seed, "base-init")).unwrap();
    let base = train_stage(
        Stage::Base,
        base,
        &corpus,
        &TrainConfig { epochs: 8, batch_size: 8, lr: 1e-3, seed: derive_seed(seed, "base-train"), max_train_sentences: None, objectives: Stage::Base.default_objectives() },
    )
    .map_err(|f| f.error.to_string())
    .unwrap();
    eprintln!("base: {:.0}s ce {:.4} -> {:.4}", t.elapsed().as_secs_f64(),
        base.log.first().unwrap().mean.total, base.log.last().unwrap().mean.total);

    let mut ec = EvalConfig::with_seed(derive_seed(seed, "eval"));
    ec.probe_train_limit = Some(2000);
    ec.sense_probe.epochs = 40;
    ec.span_probe.epochs = 25;
    let r = evaluate(&base.model, &corpus, &ec).unwrap();
    eprintln!("base-only   : h={:.3} cosdist={:.3} diffsim={:.3} sense={:.3} sa={:.3} recon={:.3}",
        r.h_score, r.inter_group_cos_dist, r.inter_type_cos_sim, r.senseclf_acc, r.spandet_seq_acc, r.reconstruction_acc);

    // experiments: (label, sim_weight, sim_margin, adapter_lr, fusion_lr)
    let experiments: Vec<(&str, f64, Option<f64>, f64, f64)> = vec![
        ("w1-spec", 1.0, None, 2e-3, 1e-3),
        ("w8-spec", 8.0, None, 2e-3, 1e-3),
        ("w1-trip", 1.0, Some(1.0), 2e-3, 1e-3),
        ("w4-trip", 4.0, Some(1.0), 2e-3, 1e-3),
    ];
    for (label, w, margin, ad_lr, fu_lr) in experiments {
        let t = Instant::now();
        let mut ad_obj = ObjectiveConfig::adapter_stage();
        ad_obj.sim_weight = w;
        ad_obj.sim_margin = margin;
        let adapter = init_stage_model::<f32>(Stage::Adapter, &base_cfg, Some(&base.model.store), derive_seed(seed, "adapter-init")).unwrap();
        let adapter = train_stage(
            Stage::Adapter,
            adapter,
            &corpus,
            &TrainConfig { epochs: 6, batch_size: 8, lr: ad_lr, seed: derive_seed(seed, "adapter-train"), max_train_sentences: None, objectives: ad_obj },
        )
        .map_err(|f| f.error.to_string())
        .unwrap();
        let al = &adapter.log;
        eprintln!("[{label}] adapter: pos {:.3}->{:.3} neg {:.3}->{:.3} ce {:.3}->{:.3} ({:.0}s)",
            al.first().unwrap().mean.sim_positive, al.last().unwrap().mean.sim_positive,
            al.first().unwrap().mean.sim_negative, al.last().unwrap().mean.sim_negative,
            al.first().unwrap().mean.reconstruction_ce, al.last().unwrap().mean.reconstruction_ce,
            t.elapsed().as_secs_f64());

        let mut pp_obj = ObjectiveConfig::full(true);
        pp_obj.sim_weight = w;
        pp_obj.sim_margin = margin;
        let pp = init_stage_model::<f32>(Stage::Fusion, &fusion_cfg, Some(&adapter.model.store), derive_seed(seed, "fusion-init")).unwrap();
        let pp = train_stage(
            Stage::Fusion,
            pp,
            &corpus,
            &TrainConfig { epochs: 5, batch_size: 8, lr: fu_lr, seed: derive_seed(seed, "fusion-train"), max_train_sentences: None, objectives: pp_obj },
        )
        .map_err(|f| f.error.to_string())
        .unwrap();
        let fl = &pp.log;
        eprintln!("[{label}] fusion : pos {:.3}->{:.3} neg {:.3}->{:.3} ce {:.3}->{:.3} ({:.0}s)",
            fl.first().unwrap().mean.sim_positive, fl.last().unwrap().mean.sim_positive,
            fl.first().unwrap().mean.sim_negative, fl.last().unwrap().mean.sim_negative,
            fl.first().unwrap().mean.reconstruction_ce, fl.last().unwrap().mean.reconstruction_ce,
            t.elapsed().as_secs_f64());

        for (name, model) in [("adapter-only", &adapter.model), ("pier-plus", &pp.model)] {
            let r = evaluate(model, &corpus, &ec).unwrap();
            eprintln!("[{label}] {name:<12}: h={:.3} cosdist={:.3} diffsim={:.3} sense={:.3} sa={:.3} recon={:.3} skew=({:.2},{:.2})",
                r.h_score, r.inter_group_cos_dist, r.inter_type_cos_sim, r.senseclf_acc, r.spandet_seq_acc, r.reconstruction_acc,
                r.skew.map(|s| s.skewed_mean_sim).unwrap_or(f64::NAN),
                r.skew.map(|s| s.balanced_mean_sim).unwrap_or(f64::NAN));
        }
    }
}
