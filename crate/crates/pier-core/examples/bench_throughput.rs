// Rough throughput measurement for schedule sizing.
use pier_core::corpus::{Corpus, CorpusParams};
use pier_core::model::{FusedModel, ModelConfig};
use pier_core::numerics::tape::Tape;
use pier_core::training::{assign_prompts, example_loss, ObjectiveConfig, PromptMode, SimTargets};
use pier_core::rng::Rng;
use std::time::Instant;

fn main() {
    let corpus = Corpus::generate(&CorpusParams::default()).unwrap();
    let mc = ModelConfig::small(corpus.layout.vocab_size());
    let model = FusedModel::<f32>::new(mc.clone(), 1).unwrap();
    let mut base = model.clone();
    base.config.variant = pier_core::model::Variant::BaseOnly;

    let n = 200usize;
    let t0 = Instant::now();
    let targets = SimTargets::compute(&base, &corpus.lexicon, &corpus.train[..n]).unwrap();
    println!("sim-target precompute: {:.2} ms/sentence", t0.elapsed().as_secs_f64()*1000.0/n as f64);

    let mut rng = Rng::new(5);
    let objectives = ObjectiveConfig::full(true);
    let examples = assign_prompts(&corpus.layout, &corpus.lexicon, &corpus.train[..n], PromptMode::full(true), &mut rng).unwrap();

    // forward+backward, batch of 8 accumulated on one tape
    let t0 = Instant::now();
    let mut steps = 0;
    for chunk in examples.chunks(8) {
        let mut tape = Tape::new();
        let vars = model.mount(&mut tape, &|n| n.starts_with("fusion."));
        let mut totals = Vec::new();
        for ex in chunk {
            let l = example_loss(&mut tape, &vars, &model, ex, Some(&targets), &objectives).unwrap();
            totals.push(l.total);
        }
        let bl = tape.mean_of(&totals).unwrap();
        tape.backward(bl).unwrap();
        steps += chunk.len();
    }
    let per = t0.elapsed().as_secs_f64()*1000.0/steps as f64;
    println!("fusion train step: {per:.3} ms/sentence -> {:.1} s per 6000-sentence epoch", per*6.0);

    // inference forward (eval path)
    let t0 = Instant::now();
    for r in corpus.train[..n].iter() {
        let _ = pier_core::model::encode(&model, &r.tokens).unwrap();
    }
    let per = t0.elapsed().as_secs_f64()*1000.0/n as f64;
    println!("encode: {per:.3} ms/sentence -> {:.1} s per 7200-sentence eval extraction", per*7.2);

    // base-stage step (base-only model, copy objective)
    let base_model = FusedModel::<f32>::new(mc.with_variant(pier_core::model::Variant::BaseOnly), 1).unwrap();
    let copy_obj = ObjectiveConfig::copy_only();
    let plain = assign_prompts(&corpus.layout, &corpus.lexicon, &corpus.train[..n], PromptMode::disabled(), &mut rng).unwrap();
    let t0 = Instant::now();
    for chunk in plain.chunks(8) {
        let mut tape = Tape::new();
        let vars = base_model.mount(&mut tape, &|n| n.starts_with("base."));
        let mut totals = Vec::new();
        for ex in chunk {
            let l = example_loss(&mut tape, &vars, &base_model, ex, None, &copy_obj).unwrap();
            totals.push(l.total);
        }
        let bl = tape.mean_of(&totals).unwrap();
        tape.backward(bl).unwrap();
    }
    let per = t0.elapsed().as_secs_f64()*1000.0/n as f64;
    println!("base train step: {per:.3} ms/sentence -> {:.1} s per 6000-sentence epoch", per*6.0);
}
