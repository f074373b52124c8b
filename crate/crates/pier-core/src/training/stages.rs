//! The staged trainer: stage 0 pre-trains the base from scratch, stage 1
//! trains adapters into the non-compositional expert, stage 2 trains the
//! fusion layers. A full-fine-tune stage covers the all-parameters ablation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::Corpus;
use crate::error::{CoreError, CoreResult};
use crate::model::params::{ParamId, ParamStore};
use crate::model::{FusedModel, ModelConfig, Variant, GROUP_ADAPTER, GROUP_BASE, GROUP_FUSION};
use crate::numerics::real::Real;
use crate::numerics::tape::Tape;
use crate::rng::Rng;
use crate::training::objectives::{
    breakdown_of, example_loss, LossBreakdown, ObjectiveConfig, SimTargets,
};
use crate::training::optimizer::Adam;
use crate::training::prompts::assign_prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Base,
    Adapter,
    Fusion,
    /// Everything-trainable ablation run (no adapters, no fusion).
    FullFineTune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::Adapter => "adapter",
            Stage::Fusion => "fusion",
            Stage::FullFineTune => "full-finetune",
        }
    }

    pub fn parse(s: &str) -> CoreResult<Self> {
        match s {
            "base" => Ok(Stage::Base),
            "adapter" => Ok(Stage::Adapter),
            "fusion" => Ok(Stage::Fusion),
            "full-finetune" => Ok(Stage::FullFineTune),
            other => Err(CoreError::InvalidConfig(alloc::format!(
                "unknown stage '{other}'"
            ))),
        }
    }

    pub fn required_variant(self) -> Variant {
        match self {
            Stage::Base | Stage::FullFineTune => Variant::BaseOnly,
            Stage::Adapter => Variant::AdapterOnly,
            Stage::Fusion => Variant::Fusion,
        }
    }

    /// Name prefix of the parameters this stage updates; everything else
    /// stays frozen and checksum-verified.
    pub fn trainable_prefix(self) -> &'static str {
        match self {
            Stage::Base | Stage::FullFineTune => GROUP_BASE,
            Stage::Adapter => GROUP_ADAPTER,
            Stage::Fusion => GROUP_FUSION,
        }
    }

    pub fn default_objectives(self) -> ObjectiveConfig {
        match self {
            Stage::Base => ObjectiveConfig::copy_only(),
            Stage::Adapter => ObjectiveConfig::adapter_stage(),
            Stage::Fusion | Stage::FullFineTune => ObjectiveConfig::full(true),
        }
    }
}

/// Builds the model a stage starts from. Later stages adopt the frozen
/// groups of the prior stage's parameter store and freshly initialize only
/// their own group.
pub fn init_stage_model<F: Real>(
    stage: Stage,
    config: &ModelConfig,
    prior: Option<&ParamStore<F>>,
    seed: u64,
) -> CoreResult<FusedModel<F>> {
    let cfg = config.clone().with_variant(stage.required_variant());
    let mut model = FusedModel::new(cfg, seed)?;
    let need = |what: &str| {
        CoreError::MissingDependency(alloc::format!(
            "stage '{}' requires a prior checkpoint carrying {what} parameters",
            stage.as_str()
        ))
    };
    match stage {
        Stage::Base => {}
        Stage::Adapter | Stage::FullFineTune => {
            let prior = prior.ok_or_else(|| need("base"))?;
            model
                .adopt_group(prior, GROUP_BASE)
                .map_err(|_| need("base"))?;
        }
        Stage::Fusion => {
            let prior = prior.ok_or_else(|| need("base and adapter"))?;
            model
                .adopt_group(prior, GROUP_BASE)
                .map_err(|_| need("base"))?;
            model
                .adopt_group(prior, GROUP_ADAPTER)
                .map_err(|_| need("adapter"))?;
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Deterministic subsample of the train split, for budgeted runs.
    pub max_train_sentences: Option<usize>,
    pub objectives: ObjectiveConfig,
}

impl TrainConfig {
    /// The default schedule: 35 epochs, batch size 8, Adam at its default
    /// learning rate.
    pub fn for_stage(stage: Stage, seed: u64) -> Self {
        TrainConfig {
            epochs: 35,
            batch_size: 8,
            lr: 1e-3,
            seed,
            max_train_sentences: None,
            objectives: stage.default_objectives(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub model: FusedModel<F>,
    pub log: Vec<EpochStats>,
}

/// Divergence and hard errors, with the last finished-epoch state retained
/// when one exists.
#[derive(Debug)]
pub struct TrainFailure<F> {
    pub error: CoreError,
    pub last_good: Option<TrainOutcome<F>>,
}

impl<F> TrainFailure<F> {
    fn hard(error: CoreError) -> Self {
        TrainFailure {
            error,
            last_good: None,
        }
    }
}

/// Trains one stage. Only parameters under the stage's prefix change; all
/// other groups are checksum-verified untouched. Deterministic for a fixed
/// seed: batch order, prompt assignment, and arithmetic order are all fixed.
pub fn train_stage<F: Real>(
    stage: Stage,
    mut model: FusedModel<F>,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>, TrainFailure<F>> {
    if model.config.variant != stage.required_variant() {
        return Err(TrainFailure::hard(CoreError::InvalidConfig(alloc::format!(
            "stage '{}' needs variant '{}', got '{}'",
            stage.as_str(),
            stage.required_variant().as_str(),
            model.config.variant.as_str()
        ))));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(TrainFailure::hard(CoreError::InvalidConfig(String::from(
            "epochs and batch_size must be positive",
        ))));
    }
    let prefix = stage.trainable_prefix();
    let trainable_ids: Vec<ParamId> = model
        .store
        .ids()
        .filter(|id| model.store.name(*id).starts_with(prefix))
        .collect();
    if trainable_ids.is_empty() {
        return Err(TrainFailure::hard(CoreError::InvalidConfig(alloc::format!(
            "stage '{}' has nothing to train in this configuration",
            stage.as_str()
        ))));
    }
    let frozen_prefixes: Vec<&str> = [GROUP_BASE, GROUP_ADAPTER, GROUP_FUSION]
        .into_iter()
        .filter(|p| *p != prefix)
        .collect();
    let frozen_before: Vec<_> = frozen_prefixes
        .iter()
        .map(|p| model.store.checksum_group(p))
        .collect();

    let mut master = Rng::new(cfg.seed);
    let mut subsample_rng = master.fork("subsample");
    let mut order_rng = master.fork("order");
    let mut prompt_rng = master.fork("prompts");

    let mut indices: Vec<usize> = (0..corpus.train.len()).collect();
    if let Some(limit) = cfg.max_train_sentences {
        if limit < corpus.train.len() {
            let mut picked = subsample_rng.sample_distinct(corpus.train.len(), limit);
            picked.sort_unstable();
            indices = picked;
        }
    }
    if indices.is_empty() {
        return Err(TrainFailure::hard(CoreError::InvalidConfig(String::from(
            "empty training set",
        ))));
    }

    // frozen stage-0 base view of the current parameters, for similarity
    // targets; snapshot semantics make full fine-tuning well-defined
    let targets = if cfg.objectives.similarity {
        let mut reference = model.clone();
        reference.config.variant = Variant::BaseOnly;
        let records: Vec<_> = indices.iter().map(|i| corpus.train[*i].clone()).collect();
        match SimTargets::compute(&reference, &corpus.lexicon, &records) {
            Ok(t) => Some(t),
            Err(e) => return Err(TrainFailure::hard(e)),
        }
    } else {
        None
    };

    let mut adam = Adam::new(cfg.lr, model.store.len());
    let mut log: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    let mut snapshot = model.store.clone();
    let mut snapshot_epoch = 0usize;

    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut indices);
        let mut sums = LossBreakdown {
            reconstruction_ce: 0.0,
            sim_positive: 0.0,
            sim_negative: 0.0,
            total: 0.0,
        };
        let mut seen = 0usize;
        let mut step = 0usize;

        for batch_ids in indices.chunks(cfg.batch_size) {
            let diverged = |model: &FusedModel<F>,
                            snapshot: &ParamStore<F>,
                            log: &Vec<EpochStats>,
                            step: usize| {
                let mut rolled = model.clone();
                rolled.store = snapshot.clone();
                TrainFailure {
                    error: CoreError::Diverged {
                        epoch,
                        step,
                        last_good_epoch: snapshot_epoch,
                    },
                    last_good: Some(TrainOutcome {
                        model: rolled,
                        log: log.clone(),
                    }),
                }
            };
            let records: Vec<_> = batch_ids.iter().map(|i| corpus.train[*i].clone()).collect();
            let examples = match assign_prompts(
                &corpus.layout,
                &corpus.lexicon,
                &records,
                cfg.objectives.prompts,
                &mut prompt_rng,
            ) {
                Ok(e) => e,
                Err(e) => return Err(TrainFailure::hard(e)),
            };

            let mut tape = Tape::new();
            let vars = model.mount(&mut tape, &|name| name.starts_with(prefix));
            let mut totals = Vec::with_capacity(examples.len());
            for ex in &examples {
                let loss = match example_loss(
                    &mut tape,
                    &vars,
                    &model,
                    ex,
                    targets.as_ref(),
                    &cfg.objectives,
                ) {
                    Ok(l) => l,
                    // non-finite activations are the blow-up itself, not a
                    // caller mistake
                    Err(CoreError::NonFinite(_)) => {
                        return Err(diverged(&model, &snapshot, &log, step));
                    }
                    Err(e) => return Err(TrainFailure::hard(e)),
                };
                let b = breakdown_of(&tape, &loss);
                sums.reconstruction_ce += b.reconstruction_ce;
                sums.sim_positive += b.sim_positive;
                sums.sim_negative += b.sim_negative;
                sums.total += b.total;
                seen += 1;
                totals.push(loss.total);
            }
            let batch_loss = match tape.mean_of(&totals) {
                Ok(l) => l,
                Err(e) => return Err(TrainFailure::hard(e)),
            };
            let loss_value = tape.value(batch_loss).item().expect("scalar").as_f64();
            if !loss_value.is_finite() {
                return Err(diverged(&model, &snapshot, &log, step));
            }
            if let Err(e) = tape.backward(batch_loss) {
                return Err(TrainFailure::hard(e));
            }
            let grads: Vec<(ParamId, Vec<F>)> = trainable_ids
                .iter()
                .map(|id| {
                    let g = tape
                        .grad(vars[id.0])
                        .expect("trainable parameter received a gradient");
                    (*id, g.to_vec())
                })
                .collect();
            adam.step(&mut model.store, &grads);
            step += 1;
        }

        let n = seen as f64;
        log.push(EpochStats {
            epoch,
            mean: LossBreakdown {
                reconstruction_ce: sums.reconstruction_ce / n,
                sim_positive: sums.sim_positive / n,
                sim_negative: sums.sim_negative / n,
                total: sums.total / n,
            },
        });
        snapshot = model.store.clone();
        snapshot_epoch = epoch + 1;
    }

    for (p, before) in frozen_prefixes.iter().zip(frozen_before.iter()) {
        let after = model.store.checksum_group(p);
        if after != *before {
            return Err(TrainFailure::hard(CoreError::InvalidInput(alloc::format!(
                "frozen parameter group '{p}' changed during stage '{}'",
                stage.as_str()
            ))));
        }
    }

    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusParams;
    use crate::model::GROUP_FUSION;

    fn tiny_corpus() -> Corpus {
        Corpus::generate(&CorpusParams {
            seed: 31,
            n_pies: 8,
            n_groups: 4,
            n_train: 120,
            n_test: 40,
            idiomatic_fraction: 0.7,
        })
        .unwrap()
    }

    fn tiny_config(corpus: &Corpus) -> ModelConfig {
        ModelConfig::tiny(corpus.layout.vocab_size())
    }

    #[test]
    fn stage_order_and_frozen_invariance() {
        let corpus = tiny_corpus();
        let mc = tiny_config(&corpus);

        let base = init_stage_model::<f32>(Stage::Base, &mc, None, 1).unwrap();
        let mut cfg = TrainConfig::for_stage(Stage::Base, 7);
        cfg.epochs = 2;
        let base_out = train_stage(Stage::Base, base, &corpus, &cfg).unwrap();

        let adapter =
            init_stage_model(Stage::Adapter, &mc, Some(&base_out.model.store), 2).unwrap();
        let base_ck = adapter.store.checksum_group(GROUP_BASE);
        let adapter_ck = adapter.store.checksum_group(GROUP_ADAPTER);
        let mut cfg = TrainConfig::for_stage(Stage::Adapter, 8);
        cfg.epochs = 1;
        let adapter_out = train_stage(Stage::Adapter, adapter, &corpus, &cfg).unwrap();
        assert_eq!(
            adapter_out.model.store.checksum_group(GROUP_BASE),
            base_ck,
            "base must stay frozen in the adapter stage"
        );
        assert_ne!(
            adapter_out.model.store.checksum_group(GROUP_ADAPTER),
            adapter_ck,
            "adapters must actually train"
        );

        let fusion =
            init_stage_model(Stage::Fusion, &mc, Some(&adapter_out.model.store), 3).unwrap();
        let base_ck = fusion.store.checksum_group(GROUP_BASE);
        let ad_ck = fusion.store.checksum_group(GROUP_ADAPTER);
        let fu_ck = fusion.store.checksum_group(GROUP_FUSION);
        let mut cfg = TrainConfig::for_stage(Stage::Fusion, 9);
        cfg.epochs = 1;
        let fusion_out = train_stage(Stage::Fusion, fusion, &corpus, &cfg).unwrap();
        assert_eq!(fusion_out.model.store.checksum_group(GROUP_BASE), base_ck);
        assert_eq!(fusion_out.model.store.checksum_group(GROUP_ADAPTER), ad_ck);
        assert_ne!(fusion_out.model.store.checksum_group(GROUP_FUSION), fu_ck);
        assert_eq!(fusion_out.log.len(), 1);
    }

    #[test]
    fn missing_prior_stage_is_a_dependency_error() {
        let corpus = tiny_corpus();
        let mc = tiny_config(&corpus);
        assert!(matches!(
            init_stage_model::<f32>(Stage::Fusion, &mc, None, 1),
            Err(CoreError::MissingDependency(_))
        ));
        let base = FusedModel::<f32>::new(mc.clone().with_variant(Variant::BaseOnly), 1).unwrap();
        // base-only store lacks adapter parameters
        assert!(matches!(
            init_stage_model::<f32>(Stage::Fusion, &mc, Some(&base.store), 1),
            Err(CoreError::MissingDependency(_))
        ));
    }

    #[test]
    fn wrong_variant_is_rejected() {
        let corpus = tiny_corpus();
        let mc = tiny_config(&corpus).with_variant(Variant::BaseOnly);
        let model = FusedModel::<f32>::new(mc, 1).unwrap();
        let cfg = TrainConfig::for_stage(Stage::Fusion, 1);
        let err = train_stage(Stage::Fusion, model, &corpus, &cfg).unwrap_err();
        assert!(matches!(err.error, CoreError::InvalidConfig(_)));
    }

    #[test]
    fn same_seed_bit_identical_checkpoints() {
        let corpus = tiny_corpus();
        let mc = tiny_config(&corpus);
        let run = || {
            let base = init_stage_model::<f32>(Stage::Base, &mc, None, 5).unwrap();
            let mut cfg = TrainConfig::for_stage(Stage::Base, 17);
            cfg.epochs = 1;
            train_stage(Stage::Base, base, &corpus, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.model.store.checksum_group(""),
            b.model.store.checksum_group("")
        );
        assert_eq!(a.log, b.log);
        // a different training seed moves the parameters
        let base = init_stage_model::<f32>(Stage::Base, &mc, None, 5).unwrap();
        let mut cfg = TrainConfig::for_stage(Stage::Base, 18);
        cfg.epochs = 1;
        let c = train_stage(Stage::Base, base, &corpus, &cfg).unwrap();
        assert_ne!(
            a.model.store.checksum_group(""),
            c.model.store.checksum_group("")
        );
    }

    #[test]
    fn base_loss_decreases() {
        let corpus = tiny_corpus();
        let mc = tiny_config(&corpus);
        let base = init_stage_model::<f32>(Stage::Base, &mc, None, 11).unwrap();
        let mut cfg = TrainConfig::for_stage(Stage::Base, 12);
        cfg.epochs = 4;
        let out = train_stage(Stage::Base, base, &corpus, &cfg).unwrap();
        let first = out.log.first().unwrap().mean.total;
        let last = out.log.last().unwrap().mean.total;
        assert!(
            last < first,
            "final epoch loss {last} should undercut first {first}"
        );
    }

    #[test]
    fn divergence_rolls_back_and_reports() {
        let corpus = tiny_corpus();
        let mc = tiny_config(&corpus);
        let base = init_stage_model::<f32>(Stage::Base, &mc, None, 13).unwrap();
        let mut cfg = TrainConfig::for_stage(Stage::Base, 14);
        cfg.epochs = 3;
        cfg.lr = 1e18; // guaranteed blow-up
        match train_stage(Stage::Base, base, &corpus, &cfg) {
            Err(TrainFailure {
                error: CoreError::Diverged { .. },
                last_good: Some(outcome),
            }) => {
                // rolled-back parameters must be finite
                for (_, t) in outcome.model.store.iter() {
                    assert!(t.is_finite());
                }
            }
            other => panic!("expected divergence failure, got {other:?}"),
        }
    }
}
