//! Randomized finite-difference suites over every differentiable kernel and
//! over full-model losses. Shared by the crate's own tests and by the
//! workspace acceptance suite.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreResult;
use crate::numerics::gradcheck::{self, CheckInput, GraphSpec};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::numerics::Real;
use crate::rng::Rng;

/// Outcome of one kernel's randomized check: worst error over all instances
/// at each precision.
#[derive(Debug, Clone)]
pub struct KernelReport {
    pub name: String,
    pub instances: usize,
    pub err64: f64,
    pub err32: f64,
}

impl KernelReport {
    pub fn passed(&self) -> bool {
        self.err64 <= gradcheck::TOL_F64 && self.err32 <= gradcheck::TOL_F32
    }
}

fn rand_values(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Values kept away from zero so kinked activations are differentiable at
/// every sample point.
fn rand_values_off_kink(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.normal();
            if v.abs() < 0.05 {
                v + 0.2 * v.signum() + if v == 0.0 { 0.2 } else { 0.0 }
            } else {
                v
            }
        })
        .collect()
}

/// Reduces any output to a scalar against a fixed random probe so gradient
/// errors cannot cancel across elements.
fn probe_loss<F: Real>(
    tape: &mut Tape<F>,
    x: Var,
    weights: &[f64],
) -> CoreResult<Var> {
    let w: Vec<F> = weights.iter().map(|v| F::from_f64(*v)).collect();
    let shape = tape.value(x).shape().to_vec();
    let wt = tape.constant(Tensor::from_vec(shape, w)?);
    let prod = tape.mul(x, wt)?;
    Ok(tape.sum_all(prod))
}

// ── Kernel specs ────────────────────────────────────────────────────────

struct SoftmaxSpec {
    probe: Vec<f64>,
}
impl GraphSpec for SoftmaxSpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var> {
        let y = tape.softmax_rows(inputs[0])?;
        probe_loss(tape, y, &self.probe)
    }
}

struct CosineSpec;
impl GraphSpec for CosineSpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var> {
        tape.cosine_sim(inputs[0], inputs[1])
    }
}

struct CrossEntropySpec {
    targets: Vec<usize>,
    mask: Vec<bool>,
}
impl GraphSpec for CrossEntropySpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var> {
        tape.cross_entropy(inputs[0], &self.targets, &self.mask)
    }
}

struct MatmulSpec {
    probe: Vec<f64>,
    transposed: bool,
}
impl GraphSpec for MatmulSpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var> {
        let y = if self.transposed {
            tape.matmul_nt(inputs[0], inputs[1])?
        } else {
            tape.matmul(inputs[0], inputs[1])?
        };
        probe_loss(tape, y, &self.probe)
    }
}

struct LayerNormSpec {
    probe: Vec<f64>,
}
impl GraphSpec for LayerNormSpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var> {
        let y = tape.layer_norm(inputs[0], inputs[1], inputs[2])?;
        probe_loss(tape, y, &self.probe)
    }
}

enum Pointwise {
    Relu,
    Gelu,
    Tanh,
}
struct PointwiseSpec {
    which: Pointwise,
    probe: Vec<f64>,
}
impl GraphSpec for PointwiseSpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var> {
        let y = match self.which {
            Pointwise::Relu => tape.relu(inputs[0]),
            Pointwise::Gelu => tape.gelu(inputs[0]),
            Pointwise::Tanh => tape.tanh(inputs[0]),
        };
        probe_loss(tape, y, &self.probe)
    }
}

struct EmbeddingSpec {
    ids: Vec<usize>,
    probe: Vec<f64>,
}
impl GraphSpec for EmbeddingSpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var> {
        let y = tape.embedding(inputs[0], &self.ids)?;
        probe_loss(tape, y, &self.probe)
    }
}

struct MeanPoolSpec {
    span: Vec<usize>,
    probe: Vec<f64>,
}
impl GraphSpec for MeanPoolSpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var> {
        let picked = tape.select_rows(inputs[0], &self.span)?;
        let pooled = tape.mean_rows(picked)?;
        probe_loss(tape, pooled, &self.probe)
    }
}

/// Stacking, column concat/slice, bias add, and affine, chained so one check
/// covers the whole family of shape-shuffling kernels.
struct StackingSpec {
    probe: Vec<f64>,
}
impl GraphSpec for StackingSpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var> {
        let stacked = tape.concat_rows(&[inputs[0], inputs[1]])?;
        let wide = tape.concat_cols(&[stacked, stacked])?;
        let (_, n) = tape.value(inputs[0]).dims2()?;
        let sliced = tape.slice_cols(wide, 1, n)?;
        let biased = tape.add_bias(sliced, inputs[2])?;
        let scaled = tape.affine(biased, 1.5, -0.25);
        probe_loss(tape, scaled, &self.probe)
    }
}

struct AddMulSpec {
    probe: Vec<f64>,
}
impl GraphSpec for AddMulSpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var> {
        let s = tape.add(inputs[0], inputs[1])?;
        let p = tape.mul(s, inputs[0])?;
        probe_loss(tape, p, &self.probe)
    }
}

// ── Suite driver ────────────────────────────────────────────────────────

fn worst_errors<S: GraphSpec>(
    name: &str,
    instances: &[(S, Vec<CheckInput>)],
) -> CoreResult<KernelReport> {
    let mut err64 = 0.0f64;
    let mut err32 = 0.0f64;
    for (spec, inputs) in instances {
        err64 = err64.max(gradcheck::max_rel_error::<f64, S>(spec, inputs)?);
        err32 = err32.max(gradcheck::max_rel_error::<f32, S>(spec, inputs)?);
    }
    Ok(KernelReport {
        name: String::from(name),
        instances: instances.len(),
        err64,
        err32,
    })
}

/// Randomized finite-difference checks for every tape kernel.
pub fn run_kernel_suite(instances: usize, seed: u64) -> CoreResult<Vec<KernelReport>> {
    let mut rng = Rng::new(seed);
    let mut reports = Vec::new();

    // softmax over rows
    let mut cases = Vec::new();
    for _ in 0..instances {
        let (m, n) = (rng.range_inclusive(1, 4), rng.range_inclusive(2, 6));
        cases.push((
            SoftmaxSpec {
                probe: rand_values(&mut rng, m * n),
            },
            vec![CheckInput::new(vec![m, n], rand_values(&mut rng, m * n))],
        ));
    }
    reports.push(worst_errors("softmax", &cases)?);

    // cosine similarity; keep vectors clearly non-degenerate
    let mut cases = Vec::new();
    for _ in 0..instances {
        let n = rng.range_inclusive(2, 8);
        let mut u = rand_values(&mut rng, n);
        let mut v = rand_values(&mut rng, n);
        u[0] += 1.0f64.copysign(u[0]);
        v[0] += 1.0f64.copysign(v[0]);
        cases.push((
            CosineSpec,
            vec![
                CheckInput::new(vec![n], u),
                CheckInput::new(vec![n], v),
            ],
        ));
    }
    reports.push(worst_errors("cosine_similarity", &cases)?);

    // cross-entropy with random masks (at least one active row)
    let mut cases = Vec::new();
    for _ in 0..instances {
        let (rows, vocab) = (rng.range_inclusive(1, 4), rng.range_inclusive(2, 6));
        let targets: Vec<usize> = (0..rows).map(|_| rng.below(vocab)).collect();
        let mut mask: Vec<bool> = (0..rows).map(|_| rng.chance(0.8)).collect();
        if mask.iter().all(|m| !m) {
            mask[0] = true;
        }
        cases.push((
            CrossEntropySpec { targets, mask },
            vec![CheckInput::new(
                vec![rows, vocab],
                rand_values(&mut rng, rows * vocab),
            )],
        ));
    }
    reports.push(worst_errors("cross_entropy", &cases)?);

    // plain and transposed matmul
    for transposed in [false, true] {
        let mut cases = Vec::new();
        for _ in 0..instances {
            let (m, k, n) = (
                rng.range_inclusive(1, 4),
                rng.range_inclusive(1, 5),
                rng.range_inclusive(1, 4),
            );
            let b_shape = if transposed { vec![n, k] } else { vec![k, n] };
            cases.push((
                MatmulSpec {
                    probe: rand_values(&mut rng, m * n),
                    transposed,
                },
                vec![
                    CheckInput::new(vec![m, k], rand_values(&mut rng, m * k)),
                    CheckInput::new(b_shape, rand_values(&mut rng, k * n)),
                ],
            ));
        }
        reports.push(worst_errors(
            if transposed { "matmul_nt" } else { "matmul" },
            &cases,
        )?);
    }

    // layer norm over rows; rows get a guaranteed spread so the f32 check
    // measures the kernel, not cancellation on a near-constant row
    let mut cases = Vec::new();
    for _ in 0..instances {
        let (m, n) = (rng.range_inclusive(1, 4), rng.range_inclusive(3, 6));
        let mut x = rand_values(&mut rng, m * n);
        for r in 0..m {
            for j in 0..n {
                x[r * n + j] += (j as f64 - n as f64 / 2.0) * 0.8;
            }
        }
        cases.push((
            LayerNormSpec {
                probe: rand_values(&mut rng, m * n),
            },
            vec![
                CheckInput::new(vec![m, n], x),
                CheckInput::new(vec![n], rand_values(&mut rng, n)),
                CheckInput::new(vec![n], rand_values(&mut rng, n)),
            ],
        ));
    }
    reports.push(worst_errors("layer_norm", &cases)?);

    // pointwise nonlinearities
    for (name, which) in [
        ("relu", Pointwise::Relu),
        ("gelu", Pointwise::Gelu),
        ("tanh", Pointwise::Tanh),
    ] {
        let off_kink = matches!(which, Pointwise::Relu);
        let mut cases = Vec::new();
        for _ in 0..instances {
            let n = rng.range_inclusive(2, 10);
            let values = if off_kink {
                rand_values_off_kink(&mut rng, n)
            } else {
                rand_values(&mut rng, n)
            };
            cases.push((
                PointwiseSpec {
                    which: match which {
                        Pointwise::Relu => Pointwise::Relu,
                        Pointwise::Gelu => Pointwise::Gelu,
                        Pointwise::Tanh => Pointwise::Tanh,
                    },
                    probe: rand_values(&mut rng, n),
                },
                vec![CheckInput::new(vec![n], values)],
            ));
        }
        reports.push(worst_errors(name, &cases)?);
    }

    // embedding lookup (with repeated ids to exercise scatter-accumulate)
    let mut cases = Vec::new();
    for _ in 0..instances {
        let (vocab, d) = (rng.range_inclusive(3, 6), rng.range_inclusive(2, 4));
        let len = rng.range_inclusive(1, 6);
        let ids: Vec<usize> = (0..len).map(|_| rng.below(vocab)).collect();
        cases.push((
            EmbeddingSpec {
                ids,
                probe: rand_values(&mut rng, len * d),
            },
            vec![CheckInput::new(vec![vocab, d], rand_values(&mut rng, vocab * d))],
        ));
    }
    reports.push(worst_errors("embedding", &cases)?);

    // span mean pooling
    let mut cases = Vec::new();
    for _ in 0..instances {
        let (m, d) = (rng.range_inclusive(2, 6), rng.range_inclusive(2, 4));
        let start = rng.below(m - 1);
        let end = rng.range_inclusive(start + 1, m);
        let span: Vec<usize> = (start..end).collect();
        cases.push((
            MeanPoolSpec {
                span,
                probe: rand_values(&mut rng, d),
            },
            vec![CheckInput::new(vec![m, d], rand_values(&mut rng, m * d))],
        ));
    }
    reports.push(worst_errors("mean_pool", &cases)?);

    // stacking / concat / slice / bias / affine chain
    let mut cases = Vec::new();
    for _ in 0..instances {
        let (m, n) = (rng.range_inclusive(1, 3), rng.range_inclusive(2, 4));
        cases.push((
            StackingSpec {
                probe: rand_values(&mut rng, 2 * m * n),
            },
            vec![
                CheckInput::new(vec![m, n], rand_values(&mut rng, m * n)),
                CheckInput::new(vec![m, n], rand_values(&mut rng, m * n)),
                CheckInput::new(vec![n], rand_values(&mut rng, n)),
            ],
        ));
    }
    reports.push(worst_errors("stacking", &cases)?);

    // add + mul fan-out
    let mut cases = Vec::new();
    for _ in 0..instances {
        let n = rng.range_inclusive(2, 8);
        cases.push((
            AddMulSpec {
                probe: rand_values(&mut rng, n),
            },
            vec![
                CheckInput::new(vec![n], rand_values(&mut rng, n)),
                CheckInput::new(vec![n], rand_values(&mut rng, n)),
            ],
        ));
    }
    reports.push(worst_errors("add_mul", &cases)?);

    Ok(reports)
}

/// Formats a one-line summary per kernel, used by test binaries.
pub fn format_report(r: &KernelReport) -> String {
    format!(
        "{:<22} instances={:<3} err64={:.3e} err32={:.3e} {}",
        r.name,
        r.instances,
        r.err64,
        r.err32,
        if r.passed() { "ok" } else { "FAIL" }
    )
}

// ── Model-level specs ───────────────────────────────────────────────────

use crate::corpus::{Sense, SentenceRecord, Split};
use crate::model::params::ParamId;
use crate::model::{FusedModel, ModelConfig};
use crate::training::objectives::{example_loss, ObjectiveConfig, SimTargets};
use crate::training::prompts::{PromptKind, TrainingExample};

/// Rebuilds a model graph at precision `F` with a chosen subset of
/// parameters replaced by the checker's differentiable inputs; everything
/// else mounts frozen from the stored 64-bit model.
struct ModelLossSpec {
    model64: FusedModel<f64>,
    checked: Vec<ParamId>,
    example: TrainingExample,
    targets_idio: Vec<f64>,
    targets_lit: Vec<f64>,
    objectives: ObjectiveConfig,
}

impl ModelLossSpec {
    fn mount_mixed<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> (FusedModel<F>, Vec<Var>) {
        let model: FusedModel<F> = self.model64.cast();
        let vars: Vec<Var> = model
            .store
            .ids()
            .map(|id| match self.checked.iter().position(|c| *c == id) {
                Some(k) => inputs[k],
                None => tape.leaf_with(model.store.tensor(id), false),
            })
            .collect();
        (model, vars)
    }

    fn check_inputs(&self) -> Vec<CheckInput> {
        self.checked
            .iter()
            .map(|id| {
                let t = self.model64.store.tensor(*id);
                CheckInput::new(t.shape().to_vec(), t.data().to_vec())
            })
            .collect()
    }
}

impl GraphSpec for ModelLossSpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var> {
        let (model, vars) = self.mount_mixed(tape, inputs);
        let targets = SimTargets {
            literal: [(
                self.example.record.sentence_id,
                self.targets_lit.iter().map(|v| F::from_f64(*v)).collect(),
            )]
            .into_iter()
            .collect(),
            idiomatic: [(
                self.example.record.pie_id,
                self.targets_idio.iter().map(|v| F::from_f64(*v)).collect(),
            )]
            .into_iter()
            .collect(),
        };
        let loss = example_loss(tape, &vars, &model, &self.example, Some(&targets), &self.objectives)?;
        Ok(loss.total)
    }
}

fn random_example(rng: &mut Rng, vocab: usize) -> TrainingExample {
    let sent_len = rng.range_inclusive(4, 7);
    let tokens: Vec<u32> = (0..sent_len).map(|_| rng.below(vocab) as u32).collect();
    let start = rng.below(sent_len - 1);
    let end = rng.range_inclusive(start + 1, sent_len.min(start + 3));
    let sense = if rng.chance(0.5) {
        Sense::Idiomatic
    } else {
        Sense::Literal
    };
    // prompted shapes without a corpus: append a few tokens to both sides
    let prompted = rng.chance(0.6);
    let (input_tokens, target_sequence, kind) = if prompted {
        let extra = rng.range_inclusive(2, 4);
        let mut input = tokens.clone();
        let mut target = tokens.clone();
        for _ in 0..extra {
            input.push(rng.below(vocab) as u32);
        }
        for _ in 0..rng.range_inclusive(2, 5) {
            target.push(rng.below(vocab) as u32);
        }
        (input, target, PromptKind::TypeCls)
    } else {
        (tokens.clone(), tokens.clone(), PromptKind::None)
    };
    TrainingExample {
        record: SentenceRecord {
            sentence_id: rng.next_u64() % 1000,
            tokens,
            pie_id: 0,
            span: (start, end),
            sense,
            split: Split::Train,
        },
        prompt_kind: kind,
        template_index: 0,
        input_tokens,
        target_sequence,
    }
}

/// Finite-difference checks over composed model graphs: the bottleneck
/// adapter, the attention-fusion layer, and the full fused-model total loss
/// with every parameter group differentiated at once.
pub fn run_model_suite(instances: usize, seed: u64) -> CoreResult<Vec<KernelReport>> {
    let mut rng = Rng::new(seed);
    let vocab = 16usize;
    let mut reports = Vec::new();

    let fresh_model = |rng: &mut Rng, small: bool| -> CoreResult<FusedModel<f64>> {
        let mut cfg = ModelConfig::tiny(vocab);
        if small {
            cfg.n_enc_layers = 1;
            cfg.n_dec_layers = 1;
        }
        let mut model = FusedModel::<f64>::new(cfg, rng.next_u64())?;
        // nudge adapters and fusion off their identity initialization so
        // their gradients are generic, not the special case
        let ids: Vec<ParamId> = model.store.ids().collect();
        for id in ids {
            let name = alloc::string::String::from(model.store.name(id));
            if name.starts_with("adapter.") && name.ends_with("up.w")
                || name.starts_with("fusion.")
            {
                let t = model.store.tensor(id).clone();
                let noise = Tensor::randn(t.shape().to_vec(), 0.08, rng);
                let mixed: Vec<f64> = t
                    .data()
                    .iter()
                    .zip(noise.data())
                    .map(|(a, b)| a + b)
                    .collect();
                model
                    .store
                    .set_tensor(id, Tensor::from_vec(t.shape().to_vec(), mixed)?)?;
            }
        }
        Ok(model)
    };

    let checked_group = |model: &FusedModel<f64>, prefix: &str| -> Vec<ParamId> {
        model
            .store
            .ids()
            .filter(|id| model.store.name(*id).starts_with(prefix))
            .collect()
    };

    // scalar probe of the adapter output w.r.t. adapter weights
    let mut cases = Vec::new();
    for _ in 0..instances {
        let model = fresh_model(&mut rng, false)?;
        let example = random_example(&mut rng, vocab);
        let spec = ModelLossSpec {
            checked: checked_group(&model, "adapter.enc0"),
            example,
            targets_idio: (0..8).map(|_| rng.normal()).collect(),
            targets_lit: (0..8).map(|_| rng.normal()).collect(),
            objectives: ObjectiveConfig::copy_only(),
            model64: model,
        };
        let inputs = spec.check_inputs();
        cases.push((spec, inputs));
    }
    reports.push(worst_errors("adapter_forward", &cases)?);

    // fusion Q/K/V gradients through the routed loss
    let mut cases = Vec::new();
    for _ in 0..instances {
        let model = fresh_model(&mut rng, false)?;
        let example = random_example(&mut rng, vocab);
        let spec = ModelLossSpec {
            checked: checked_group(&model, "fusion."),
            example,
            targets_idio: (0..8).map(|_| rng.normal()).collect(),
            targets_lit: (0..8).map(|_| rng.normal()).collect(),
            objectives: ObjectiveConfig::copy_only(),
            model64: model,
        };
        let inputs = spec.check_inputs();
        cases.push((spec, inputs));
    }
    reports.push(worst_errors("fusion_attend", &cases)?);

    // full total loss (reconstruction + similarity) w.r.t. every parameter;
    // instances with the hinge near its kink are re-drawn
    let mut cases = Vec::new();
    let mut attempts = 0;
    while cases.len() < instances && attempts < instances * 20 {
        attempts += 1;
        let model = fresh_model(&mut rng, true)?;
        let example = random_example(&mut rng, vocab);
        let targets_idio: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let targets_lit: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let spec = ModelLossSpec {
            checked: model.store.ids().collect(),
            example,
            targets_idio,
            targets_lit,
            objectives: ObjectiveConfig::full(true),
            model64: model,
        };
        // hinge kink guard: evaluate cos_neg at f64 and re-draw if close to 0
        let mut tape = Tape::<f64>::new();
        let vars = spec.model64.mount_frozen(&mut tape);
        let targets = SimTargets {
            literal: [(
                spec.example.record.sentence_id,
                spec.targets_lit.clone(),
            )]
            .into_iter()
            .collect(),
            idiomatic: [(spec.example.record.pie_id, spec.targets_idio.clone())]
                .into_iter()
                .collect(),
        };
        let loss = example_loss(
            &mut tape,
            &vars,
            &spec.model64,
            &spec.example,
            Some(&targets),
            &spec.objectives,
        )?;
        let (_, cos_neg) = loss.sim.expect("similarity enabled");
        if tape.value(cos_neg).item()?.abs() < 2e-2 {
            continue;
        }
        let inputs = spec.check_inputs();
        cases.push((spec, inputs));
    }
    reports.push(worst_errors("fused_total_loss", &cases)?);

    Ok(reports)
}
