//! Frozen-representation probes: a linear sense classifier over PIE
//! embeddings and a two-layer ReLU MLP for token-level span detection.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{CoreError, CoreResult};
use crate::numerics::real::Real;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::rng::Rng;
use crate::training::optimizer::Adam;
use crate::model::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn sense_default(seed: u64) -> Self {
        ProbeConfig {
            epochs: 55,
            batch_size: 32,
            lr: 5e-3,
            seed,
        }
    }

    pub fn span_default(seed: u64) -> Self {
        ProbeConfig {
            epochs: 40,
            batch_size: 16,
            lr: 5e-3,
            seed,
        }
    }
}

/// Linear + softmax binary classifier over a fixed embedding.
#[derive(Debug, Clone)]
pub struct SenseProbe<F> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
}

/// Two-layer ReLU MLP (hidden dims halved per layer) + linear readout,
/// applied per token.
#[derive(Debug, Clone)]
pub struct SpanProbe<F> {
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
    pub w3: Tensor<F>,
    pub b3: Tensor<F>,
}

fn check_two_classes(labels: impl Iterator<Item = bool>) -> CoreResult<()> {
    let mut seen = [false, false];
    for l in labels {
        seen[l as usize] = true;
    }
    if seen[0] && seen[1] {
        Ok(())
    } else {
        Err(CoreError::DegenerateProbe)
    }
}

fn batch_matrix<F: Real>(rows: &[&[F]]) -> Tensor<F> {
    let d = rows[0].len();
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        data.extend_from_slice(r);
    }
    Tensor::from_vec(alloc::vec![rows.len(), d], data).expect("batch shape")
}

/// Generic supervised trainer for the probes: a closure builds logits from
/// the mounted parameter handles and a feature batch.
fn train_classifier<F: Real>(
    store: &mut ParamStore<F>,
    features: &[Vec<F>],
    labels: &[bool],
    cfg: &ProbeConfig,
    logits_of: impl Fn(&mut Tape<F>, &[Var], Var) -> CoreResult<Var>,
) -> CoreResult<()> {
    check_two_classes(labels.iter().copied())?;
    let mut rng = Rng::new(cfg.seed).fork("probe");
    let mut adam = Adam::new(cfg.lr, store.len());
    let mut order: Vec<usize> = (0..features.len()).collect();
    let ids: Vec<_> = store.ids().collect();

    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[F]> = chunk.iter().map(|i| features[*i].as_slice()).collect();
            let targets: Vec<usize> = chunk.iter().map(|i| labels[*i] as usize).collect();
            let mask = alloc::vec![true; targets.len()];
            let mut tape = Tape::new();
            let vars = store.mount(&mut tape, &|_| true);
            let x = tape.constant(batch_matrix(&rows));
            let logits = logits_of(&mut tape, &vars, x)?;
            let loss = tape.cross_entropy(logits, &targets, &mask)?;
            tape.backward(loss)?;
            let grads: Vec<_> = ids
                .iter()
                .map(|id| (*id, tape.grad(vars[id.0]).expect("probe grad").to_vec()))
                .collect();
            adam.step(store, &grads);
        }
    }
    Ok(())
}

/// Trains the sense probe on (PIE embedding, is-idiomatic) pairs. The
/// underlying language model is never touched.
pub fn train_sense_probe<F: Real>(
    data: &[(Vec<F>, bool)],
    cfg: &ProbeConfig,
) -> CoreResult<SenseProbe<F>> {
    if data.is_empty() {
        return Err(CoreError::invalid("sense probe: empty training data"));
    }
    check_two_classes(data.iter().map(|(_, l)| *l))?;
    let d = data[0].0.len();
    let mut store = ParamStore::new();
    let mut rng = Rng::new(cfg.seed).fork("sense-init");
    let w = store.add(
        alloc::string::String::from("w"),
        Tensor::randn(alloc::vec![d, 2], 0.02, &mut rng),
    );
    let b = store.add(alloc::string::String::from("b"), Tensor::zeros(alloc::vec![2]));

    let features: Vec<Vec<F>> = data.iter().map(|(e, _)| e.clone()).collect();
    let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
    train_classifier(&mut store, &features, &labels, cfg, |tape, vars, x| {
        let y = tape.matmul(x, vars[w.0])?;
        tape.add_bias(y, vars[b.0])
    })?;

    Ok(SenseProbe {
        w: store.tensor(w).clone(),
        b: store.tensor(b).clone(),
    })
}

impl<F: Real> SenseProbe<F> {
    /// Positive means idiomatic. Argmax of the two logits; softmax is
    /// monotone so it never changes the decision.
    pub fn predict(&self, embedding: &[F]) -> bool {
        let d = embedding.len();
        let mut logits = [F::zero(); 2];
        for c in 0..2 {
            let mut s = self.b.data()[c];
            for i in 0..d {
                s = s + embedding[i] * self.w.data()[i * 2 + c];
            }
            logits[c] = s;
        }
        logits[1] > logits[0]
    }
}

/// Trains the span probe on (token embedding, is-idiomatic-span-token)
/// pairs pooled across all training sentences.
pub fn train_span_probe<F: Real>(
    data: &[(Vec<F>, bool)],
    cfg: &ProbeConfig,
) -> CoreResult<SpanProbe<F>> {
    if data.is_empty() {
        return Err(CoreError::invalid("span probe: empty training data"));
    }
    check_two_classes(data.iter().map(|(_, l)| *l))?;
    let d = data[0].0.len();
    let (h1, h2) = (d / 2, d / 4);
    if h2 == 0 {
        return Err(CoreError::invalid("span probe: d_model too small to halve twice"));
    }
    let mut store = ParamStore::new();
    let mut rng = Rng::new(cfg.seed).fork("span-init");
    // He-scaled init; tiny weights under Adam kill every ReLU unit within
    // a few steps and freeze the probe
    let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
    let w1 = store.add(
        alloc::string::String::from("w1"),
        Tensor::randn(alloc::vec![d, h1], he(d), &mut rng),
    );
    let b1 = store.add(alloc::string::String::from("b1"), Tensor::zeros(alloc::vec![h1]));
    let w2 = store.add(
        alloc::string::String::from("w2"),
        Tensor::randn(alloc::vec![h1, h2], he(h1), &mut rng),
    );
    let b2 = store.add(alloc::string::String::from("b2"), Tensor::zeros(alloc::vec![h2]));
    let w3 = store.add(
        alloc::string::String::from("w3"),
        Tensor::randn(alloc::vec![h2, 2], he(h2), &mut rng),
    );
    let b3 = store.add(alloc::string::String::from("b3"), Tensor::zeros(alloc::vec![2]));

    let features: Vec<Vec<F>> = data.iter().map(|(e, _)| e.clone()).collect();
    let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
    train_classifier(&mut store, &features, &labels, cfg, |tape, vars, x| {
        let h = tape.matmul(x, vars[w1.0])?;
        let h = tape.add_bias(h, vars[b1.0])?;
        let h = tape.relu(h);
        let h = tape.matmul(h, vars[w2.0])?;
        let h = tape.add_bias(h, vars[b2.0])?;
        let h = tape.relu(h);
        let h = tape.matmul(h, vars[w3.0])?;
        tape.add_bias(h, vars[b3.0])
    })?;

    Ok(SpanProbe {
        w1: store.tensor(w1).clone(),
        b1: store.tensor(b1).clone(),
        w2: store.tensor(w2).clone(),
        b2: store.tensor(b2).clone(),
        w3: store.tensor(w3).clone(),
        b3: store.tensor(b3).clone(),
    })
}

impl<F: Real> SpanProbe<F> {
    /// Per-token idiomatic/literal decisions for one sentence's token
    /// embedding matrix.
    pub fn predict(&self, tokens: &Tensor<F>) -> Vec<bool> {
        let (t, _) = tokens.dims2().expect("token matrix");
        let mut tape = Tape::<F>::new();
        let x = tape.constant(tokens.clone());
        let w1 = tape.constant(self.w1.clone());
        let b1 = tape.constant(self.b1.clone());
        let w2 = tape.constant(self.w2.clone());
        let b2 = tape.constant(self.b2.clone());
        let w3 = tape.constant(self.w3.clone());
        let b3 = tape.constant(self.b3.clone());
        let h = tape.matmul(x, w1).unwrap();
        let h = tape.add_bias(h, b1).unwrap();
        let h = tape.relu(h);
        let h = tape.matmul(h, w2).unwrap();
        let h = tape.add_bias(h, b2).unwrap();
        let h = tape.relu(h);
        let h = tape.matmul(h, w3).unwrap();
        let logits = tape.add_bias(h, b3).unwrap();
        let out = tape.value(logits);
        (0..t).map(|r| out.row(r)[1] > out.row(r)[0]).collect()
    }
}

/// Accuracy and positive-class F1 from aligned binary predictions.
pub fn binary_f1_acc(pred: &[bool], gold: &[bool]) -> CoreResult<(f64, f64)> {
    if pred.len() != gold.len() || pred.is_empty() {
        return Err(CoreError::invalid("f1: empty or mismatched inputs"));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fng = 0usize;
    let mut correct = 0usize;
    for (p, g) in pred.iter().zip(gold) {
        if p == g {
            correct += 1;
        }
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fng += 1,
            _ => {}
        }
    }
    let acc = correct as f64 / pred.len() as f64;
    let f1 = if 2 * tp + fp + fng == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fng) as f64
    };
    Ok((f1, acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable_data(n: usize, d: usize, seed: u64) -> Vec<(Vec<f32>, bool)> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let positive = i % 2 == 0;
                let center = if positive { 1.0 } else { -1.0 };
                let emb: Vec<f32> = (0..d)
                    .map(|j| {
                        let base = if j == 0 { center } else { 0.0 };
                        (base + rng.normal() * 0.1) as f32
                    })
                    .collect();
                (emb, positive)
            })
            .collect()
    }

    #[test]
    fn sense_probe_solves_separable_data() {
        let data = separable_data(200, 8, 3);
        let cfg = ProbeConfig {
            epochs: 30,
            batch_size: 16,
            lr: 5e-3,
            seed: 1,
        };
        let probe = train_sense_probe(&data, &cfg).unwrap();
        let correct = data
            .iter()
            .filter(|(e, l)| probe.predict(e) == *l)
            .count();
        let acc = correct as f64 / data.len() as f64;
        assert!(acc >= 0.99, "separable accuracy {acc}");
    }

    #[test]
    fn single_class_data_is_degenerate() {
        let data: Vec<(Vec<f32>, bool)> =
            (0..10).map(|_| (alloc::vec![1.0f32, 2.0], true)).collect();
        let cfg = ProbeConfig::sense_default(1);
        assert!(matches!(
            train_sense_probe(&data, &cfg),
            Err(CoreError::DegenerateProbe)
        ));
        assert!(matches!(
            train_span_probe(&data, &cfg),
            Err(CoreError::DegenerateProbe)
        ));
    }

    #[test]
    fn majority_baseline_closed_form() {
        // all-positive predictor on a 77%-positive set: acc = 0.77,
        // F1 = 2*0.77 / (1 + 0.77)
        let gold: Vec<bool> = (0..100).map(|i| i < 77).collect();
        let pred = alloc::vec![true; 100];
        let (f1, acc) = binary_f1_acc(&pred, &gold).unwrap();
        assert!((acc - 0.77).abs() < 1e-12);
        assert!((f1 - 2.0 * 0.77 / 1.77).abs() < 1e-12);
    }

    #[test]
    fn f1_acc_match_confusion_matrix_oracle() {
        let mut rng = Rng::new(9);
        let gold: Vec<bool> = (0..250).map(|_| rng.chance(0.6)).collect();
        let pred: Vec<bool> = gold
            .iter()
            .map(|g| if rng.chance(0.8) { *g } else { !*g })
            .collect();
        let (f1, acc) = binary_f1_acc(&pred, &gold).unwrap();
        // independent recount
        let tp = pred.iter().zip(&gold).filter(|(p, g)| **p && **g).count() as f64;
        let fp = pred.iter().zip(&gold).filter(|(p, g)| **p && !**g).count() as f64;
        let fng = pred.iter().zip(&gold).filter(|(p, g)| !**p && **g).count() as f64;
        let prec = tp / (tp + fp);
        let rec = tp / (tp + fng);
        let f1_oracle = 2.0 * prec * rec / (prec + rec);
        let acc_oracle = pred.iter().zip(&gold).filter(|(p, g)| p == g).count() as f64 / 250.0;
        assert!((f1 - f1_oracle).abs() < 1e-12);
        assert!((acc - acc_oracle).abs() < 1e-12);
    }

    #[test]
    fn span_probe_learns_a_separable_token_rule() {
        let data = separable_data(300, 16, 5);
        let cfg = ProbeConfig {
            epochs: 30,
            batch_size: 16,
            lr: 5e-3,
            seed: 2,
        };
        let probe = train_span_probe(&data, &cfg).unwrap();
        // pack tokens back into sentence matrices of 5 tokens
        let mut correct = 0usize;
        let mut total = 0usize;
        for chunk in data.chunks(5) {
            let rows: Vec<&[f32]> = chunk.iter().map(|(e, _)| e.as_slice()).collect();
            let m = batch_matrix(&rows);
            let pred = probe.predict(&m);
            for (p, (_, g)) in pred.iter().zip(chunk) {
                total += 1;
                if p == g {
                    correct += 1;
                }
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc >= 0.98, "span token accuracy {acc}");
    }
}
