//! Command implementations: corpus generation, staged training, evaluation,
//! and the full ablation matrix. Every command is a pure function of
//! (config, seed, input artifacts); outputs carry no timestamps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context};
use pier_core::corpus::{Corpus, CorpusParams};
use pier_core::evaluation::{evaluate, EvalConfig, MetricsReport};
use pier_core::model::{FusedModel, Variant};
use pier_core::rng::Rng;
use pier_core::training::{
    init_stage_model, train_stage, ObjectiveConfig, PromptMode, Stage, TrainConfig, TrainOutcome,
};

use crate::canonical::{fmt_float, per_pie_csv, report_to_json, Json};
use crate::checkpoint;
use crate::config::{
    save_echo, AblateConfig, EvalCliConfig, GenConfig, ModelSection, TrainCliConfig,
};
use crate::jsonl;

/// Derives a labeled sub-seed; stable across runs and platforms.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    Rng::new(base).fork(label).next_u64()
}

/// Refuses to write into a directory that already holds run outputs unless
/// forced.
pub fn prepare_out_dir(out: &Path, force: bool) -> anyhow::Result<()> {
    let marker = out.join("config.toml");
    let corpus_marker = out.join(jsonl::MANIFEST_FILE);
    if (marker.exists() || corpus_marker.exists()) && !force {
        bail!(
            "output directory {} already holds run artifacts; pass --force to overwrite",
            out.display()
        );
    }
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    Ok(())
}

// ── gen ─────────────────────────────────────────────────────────────────

pub fn cmd_gen(cfg: &GenConfig, out: &Path, force: bool) -> anyhow::Result<()> {
    prepare_out_dir(out, force)?;
    let params = CorpusParams {
        seed: cfg.seed,
        n_pies: cfg.n_pies,
        n_groups: cfg.n_groups,
        n_train: cfg.n_train,
        n_test: cfg.n_test,
        idiomatic_fraction: cfg.idiomatic_fraction,
    };
    let corpus = Corpus::generate(&params).map_err(|e| anyhow!("{e}"))?;
    jsonl::save_corpus(&corpus, out)?;
    save_echo(cfg, out)?;
    eprintln!(
        "gen: {} train / {} test sentences, {} PIEs in {} groups, idiomatic fraction {:.4}",
        corpus.train.len(),
        corpus.test.len(),
        corpus.lexicon.len(),
        corpus.manifest.n_groups,
        corpus.manifest.idiomatic_fraction_achieved
    );
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────

fn expected_prior(stage: Stage) -> Option<Stage> {
    match stage {
        Stage::Base => None,
        Stage::Adapter => Some(Stage::Base),
        Stage::Fusion => Some(Stage::Adapter),
        Stage::FullFineTune => Some(Stage::Base),
    }
}

fn loss_log_csv(outcome: &TrainOutcome<f32>) -> String {
    let mut csv = String::from("epoch,reconstruction_ce,sim_positive,sim_negative,total\n");
    for e in &outcome.log {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch,
            fmt_float(e.mean.reconstruction_ce),
            fmt_float(e.mean.sim_positive),
            fmt_float(e.mean.sim_negative),
            fmt_float(e.mean.total)
        ));
    }
    csv
}

pub fn cmd_train(cfg: &TrainCliConfig, out: &Path, force: bool) -> anyhow::Result<()> {
    prepare_out_dir(out, force)?;
    let stage = cfg.stage()?;
    let corpus = jsonl::load_corpus(&cfg.corpus)?;

    let prior = match (expected_prior(stage), &cfg.prior) {
        (None, None) => None,
        (None, Some(_)) => bail!("stage 'base' starts from scratch and takes no prior checkpoint"),
        (Some(want), None) => bail!(
            "stage '{}' requires a prior {}-stage checkpoint (set `prior` in the config)",
            stage.as_str(),
            want.as_str()
        ),
        (Some(want), Some(path)) => {
            let (model, prior_stage) = checkpoint::load(path)?;
            if prior_stage != want {
                bail!(
                    "stage '{}' requires a {}-stage checkpoint, but {} was produced by stage '{}'",
                    stage.as_str(),
                    want.as_str(),
                    path.display(),
                    prior_stage.as_str()
                );
            }
            if model.config.vocab_size != corpus.manifest.vocab_size {
                bail!(
                    "checkpoint vocabulary ({}) does not match the corpus ({})",
                    model.config.vocab_size,
                    corpus.manifest.vocab_size
                );
            }
            Some(model)
        }
    };

    // architecture comes from the prior checkpoint when one exists; an
    // explicitly different [model] section is an error, not a silent override
    let vocab = corpus.manifest.vocab_size;
    let section_config = cfg
        .model
        .to_model_config(vocab, stage.required_variant());
    let model_config = match &prior {
        None => section_config,
        Some(p) => {
            let mut from_prior = p.config.clone().with_variant(stage.required_variant());
            from_prior.fusion_in_decoder = p.config.fusion_in_decoder;
            let section_is_default = cfg.model == ModelSection::default();
            if !section_is_default && section_config != from_prior {
                bail!(
                    "the [model] section disagrees with the prior checkpoint's architecture; drop it or make them match"
                );
            }
            from_prior
        }
    };

    let objectives = match &cfg.objectives {
        Some(section) => section.to_objectives(stage == Stage::Adapter)?,
        None => stage.default_objectives(),
    };
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: derive_seed(cfg.seed, "train"),
        max_train_sentences: cfg.max_train_sentences,
        objectives,
    };
    let model = init_stage_model::<f32>(
        stage,
        &model_config,
        prior.as_ref().map(|p| &p.store),
        derive_seed(cfg.seed, "init"),
    )
    .map_err(|e| anyhow!("{e}"))?;

    eprintln!(
        "train: stage {} for {} epochs on {} sentences",
        stage.as_str(),
        cfg.epochs,
        cfg.max_train_sentences
            .unwrap_or(corpus.train.len())
            .min(corpus.train.len())
    );
    match train_stage(stage, model, &corpus, &train_cfg) {
        Ok(outcome) => {
            checkpoint::save(&outcome.model, stage, &out.join("checkpoint.bin"))?;
            std::fs::write(out.join("loss_log.csv"), loss_log_csv(&outcome))?;
            save_echo(cfg, out)?;
            let first = outcome.log.first().map(|e| e.mean.total).unwrap_or(f64::NAN);
            let last = outcome.log.last().map(|e| e.mean.total).unwrap_or(f64::NAN);
            eprintln!("train: mean total loss {first:.4} -> {last:.4}");
            Ok(())
        }
        Err(failure) => {
            if let Some(last_good) = &failure.last_good {
                checkpoint::save(&last_good.model, stage, &out.join("checkpoint.bin"))?;
                std::fs::write(out.join("loss_log.csv"), loss_log_csv(last_good))?;
                save_echo(cfg, out)?;
                eprintln!("train: diverged; last good checkpoint retained in {}", out.display());
            }
            Err(anyhow!("{}", failure.error))
        }
    }
}

// ── eval ────────────────────────────────────────────────────────────────

pub fn write_report(report: &MetricsReport, out: &Path) -> anyhow::Result<()> {
    std::fs::write(
        out.join("report.json"),
        report_to_json(report).to_string_canonical(),
    )?;
    std::fs::write(out.join("per_pie.csv"), per_pie_csv(&report.per_pie))?;
    Ok(())
}

pub fn cmd_eval(cfg: &EvalCliConfig, out: &Path, force: bool) -> anyhow::Result<()> {
    prepare_out_dir(out, force)?;
    let corpus = jsonl::load_corpus(&cfg.corpus)?;
    let (model, _stage) = checkpoint::load(&cfg.checkpoint)?;
    if model.config.vocab_size != corpus.manifest.vocab_size {
        bail!(
            "checkpoint vocabulary ({}) does not match the corpus ({})",
            model.config.vocab_size,
            corpus.manifest.vocab_size
        );
    }
    let eval_cfg = cfg.to_eval_config();
    let report = evaluate(&model, &corpus, &eval_cfg).map_err(|e| anyhow!("{e}"))?;
    write_report(&report, out)?;
    save_echo(cfg, out)?;
    eprintln!(
        "eval: h={:.4} diffsim={:.4} sense_acc={:.4} span_sa={:.4} recon={:.4}",
        report.h_score,
        report.inter_type_cos_sim,
        report.senseclf_acc,
        report.spandet_seq_acc,
        report.reconstruction_acc
    );
    Ok(())
}

// ── ablate ──────────────────────────────────────────────────────────────

/// The ten model variants, in table order.
pub const VARIANTS: [&str; 10] = [
    "base-only",
    "adapter-only",
    "bart-ft",
    "fusion-attn",
    "fusion-sim",
    "fusion-prompt",
    "p-cls",
    "p-defn",
    "pier",
    "pier-plus",
];

fn fusion_variant_objectives(name: &str) -> Option<ObjectiveConfig> {
    let base = ObjectiveConfig {
        reconstruction: true,
        similarity: false,
        prompts: PromptMode::disabled(),
        treat_all_idiomatic: false,
        ce_weight: 1.0,
        sim_weight: 1.0,
        sim_margin: None,
    };
    match name {
        "fusion-attn" => Some(base),
        "fusion-sim" => Some(ObjectiveConfig {
            similarity: true,
            ..base
        }),
        "fusion-prompt" => Some(ObjectiveConfig {
            prompts: PromptMode::full(true),
            ..base
        }),
        "p-cls" => Some(ObjectiveConfig {
            similarity: true,
            prompts: PromptMode {
                type_cls: true,
                defn_gen: false,
                multi_template: true,
            },
            ..base
        }),
        "p-defn" => Some(ObjectiveConfig {
            similarity: true,
            prompts: PromptMode {
                type_cls: false,
                defn_gen: true,
                multi_template: true,
            },
            ..base
        }),
        "pier" => Some(ObjectiveConfig {
            similarity: true,
            prompts: PromptMode::full(false),
            ..base
        }),
        "pier-plus" => Some(ObjectiveConfig {
            similarity: true,
            prompts: PromptMode::full(true),
            ..base
        }),
        _ => None,
    }
}

fn thread_budget() -> usize {
    std::env::var("PIER_NUM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or(1)
}

fn train_or_fail(
    stage: Stage,
    model: FusedModel<f32>,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> anyhow::Result<TrainOutcome<f32>> {
    train_stage(stage, model, corpus, cfg).map_err(|f| anyhow!("{}", f.error))
}

/// Everything one seed produces: a model per variant, evaluated.
fn run_seed(
    corpus: &Corpus,
    cfg: &AblateConfig,
    seed: u64,
) -> BTreeMap<String, anyhow::Result<MetricsReport>> {
    let vocab = corpus.manifest.vocab_size;
    let schedule = &cfg.schedule;
    let mut results: BTreeMap<String, anyhow::Result<MetricsReport>> = BTreeMap::new();

    let eval_cfg = {
        let mut e = EvalConfig::with_seed(derive_seed(seed, "eval"));
        e.sense_probe.epochs = cfg.eval.sense_probe_epochs;
        e.span_probe.epochs = cfg.eval.span_probe_epochs;
        e.probe_train_limit = cfg.eval.probe_train_limit;
        e.n_reconstruction_sentences = cfg.eval.n_reconstruction_sentences;
        e
    };
    let train_cfg = |stage: Stage, label: &str, epochs: usize, limit: Option<usize>| TrainConfig {
        epochs,
        batch_size: schedule.batch_size,
        lr: match stage {
            Stage::Base => schedule.base_lr,
            Stage::Adapter => schedule.adapter_lr,
            Stage::Fusion | Stage::FullFineTune => schedule.fusion_lr,
        },
        seed: derive_seed(seed, label),
        max_train_sentences: limit,
        objectives: stage.default_objectives(),
    };

    // shared stages
    let base_cfg = cfg.model.to_model_config(vocab, Variant::BaseOnly);
    let base_model = match init_stage_model::<f32>(
        Stage::Base,
        &base_cfg,
        None,
        derive_seed(seed, "base-init"),
    ) {
        Ok(m) => m,
        Err(e) => {
            for v in VARIANTS {
                results.insert(v.to_string(), Err(anyhow!("base init failed: {e}")));
            }
            return results;
        }
    };
    eprintln!("[seed {seed}] training base stage ({} epochs)", schedule.base_epochs);
    let base = match train_or_fail(
        Stage::Base,
        base_model,
        corpus,
        &train_cfg(Stage::Base, "base-train", schedule.base_epochs, None),
    ) {
        Ok(o) => o,
        Err(e) => {
            for v in VARIANTS {
                results.insert(v.to_string(), Err(anyhow!("base stage failed: {e}")));
            }
            return results;
        }
    };

    eprintln!("[seed {seed}] training adapter stage ({} epochs)", schedule.adapter_epochs);
    let adapter = init_stage_model::<f32>(
        Stage::Adapter,
        &base_cfg,
        Some(&base.model.store),
        derive_seed(seed, "adapter-init"),
    )
    .map_err(|e| anyhow!("{e}"))
    .and_then(|m| {
        train_or_fail(
            Stage::Adapter,
            m,
            corpus,
            &train_cfg(
                Stage::Adapter,
                "adapter-train",
                schedule.adapter_epochs,
                schedule.adapter_train_limit,
            ),
        )
    });

    // evaluation jobs: (variant, model) pairs produced lazily per variant
    enum Job {
        Ready(FusedModel<f32>),
        Failed(String),
    }
    let mut jobs: Vec<(String, Job)> = Vec::new();
    jobs.push(("base-only".into(), Job::Ready(base.model.clone())));
    match &adapter {
        Ok(a) => jobs.push(("adapter-only".into(), Job::Ready(a.model.clone()))),
        Err(e) => jobs.push(("adapter-only".into(), Job::Failed(format!("adapter stage failed: {e}")))),
    }

    // bart-ft: everything trainable from the pre-trained base
    let ft = init_stage_model::<f32>(
        Stage::FullFineTune,
        &base_cfg,
        Some(&base.model.store),
        derive_seed(seed, "ft-init"),
    )
    .map_err(|e| anyhow!("{e}"))
    .and_then(|m| {
        let mut c = train_cfg(
            Stage::FullFineTune,
            "ft-train",
            schedule.finetune_epochs,
            schedule.fusion_train_limit,
        );
        c.objectives = ObjectiveConfig::full(true);
        train_or_fail(Stage::FullFineTune, m, corpus, &c)
    });
    match ft {
        Ok(o) => jobs.push(("bart-ft".into(), Job::Ready(o.model))),
        Err(e) => jobs.push(("bart-ft".into(), Job::Failed(format!("fine-tune failed: {e}")))),
    }

    // fusion variants share the adapter checkpoint and initialization
    let fusion_cfg = cfg.model.to_model_config(vocab, Variant::Fusion);
    for name in VARIANTS {
        let Some(objectives) = fusion_variant_objectives(name) else {
            continue;
        };
        let job = match &adapter {
            Err(e) => Job::Failed(format!("adapter stage failed: {e}")),
            Ok(a) => {
                let trained = init_stage_model::<f32>(
                    Stage::Fusion,
                    &fusion_cfg,
                    Some(&a.model.store),
                    derive_seed(seed, "fusion-init"),
                )
                .map_err(|e| anyhow!("{e}"))
                .and_then(|m| {
                    let mut c = train_cfg(
                        Stage::Fusion,
                        &format!("fusion-train-{name}"),
                        schedule.fusion_epochs,
                        schedule.fusion_train_limit,
                    );
                    c.objectives = objectives;
                    eprintln!(
                        "[seed {seed}] training fusion variant {name} ({} epochs)",
                        schedule.fusion_epochs
                    );
                    train_or_fail(Stage::Fusion, m, corpus, &c)
                });
                match trained {
                    Ok(o) => Job::Ready(o.model),
                    Err(e) => Job::Failed(format!("fusion stage failed: {e}")),
                }
            }
        };
        jobs.push((name.to_string(), job));
    }

    // evaluate, optionally in parallel; results keyed by variant name so
    // scheduling order never shows in the output
    let threads = thread_budget().min(jobs.len().max(1));
    let queue: Mutex<Vec<(String, Job)>> = Mutex::new(jobs);
    let collected: Mutex<Vec<(String, anyhow::Result<MetricsReport>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let item = queue.lock().unwrap().pop();
                let Some((name, job)) = item else { break };
                let outcome = match job {
                    Job::Failed(msg) => Err(anyhow!("{msg}")),
                    Job::Ready(model) => {
                        eprintln!("[seed {seed}] evaluating {name}");
                        evaluate(&model, corpus, &eval_cfg).map_err(|e| anyhow!("{e}"))
                    }
                };
                collected.lock().unwrap().push((name, outcome));
            });
        }
    });
    for (name, outcome) in collected.into_inner().unwrap() {
        results.insert(name, outcome);
    }
    results
}

/// A metric aggregated over seeds.
#[derive(Debug, Clone)]
pub struct Agg {
    pub mean: f64,
    pub spread: f64,
    pub values: Vec<f64>,
}

fn agg(values: Vec<f64>) -> Agg {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let spread = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Agg {
        mean,
        spread,
        values,
    }
}

pub const METRICS: [&str; 8] = [
    "h_score",
    "cos_dist",
    "diff_sim",
    "senseclf_f1",
    "senseclf_acc",
    "spandet_sa",
    "spandet_tr",
    "recon_acc",
];

fn metric_of(report: &MetricsReport, name: &str) -> f64 {
    match name {
        "h_score" => report.h_score,
        "cos_dist" => report.inter_group_cos_dist,
        "diff_sim" => report.inter_type_cos_sim,
        "senseclf_f1" => report.senseclf_f1,
        "senseclf_acc" => report.senseclf_acc,
        "spandet_sa" => report.spandet_seq_acc,
        "spandet_tr" => report.spandet_token_recall,
        "recon_acc" => report.reconstruction_acc,
        _ => f64::NAN,
    }
}

#[derive(Debug, Clone)]
pub struct OrderingCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug)]
pub struct AblationOutcome {
    /// variant -> metric -> aggregate over seeds
    pub table: BTreeMap<String, BTreeMap<String, Agg>>,
    pub orderings: Vec<OrderingCheck>,
    /// variant -> error message, for runs that failed
    pub failures: BTreeMap<String, String>,
    /// pier-plus skew analysis sides, mean over seeds
    pub skew_sides: Option<(f64, f64)>,
}

impl AblationOutcome {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty() && self.orderings.iter().all(|o| o.passed)
    }
}

fn evaluate_orderings(
    table: &BTreeMap<String, BTreeMap<String, Agg>>,
    skew_sides: Option<(f64, f64)>,
) -> Vec<OrderingCheck> {
    let get = |variant: &str, metric: &str| -> Option<f64> {
        table.get(variant).and_then(|m| m.get(metric)).map(|a| a.mean)
    };
    let mut checks = Vec::new();
    let mut push = |name: &str, cmp: Option<(f64, f64, bool)>, describe: &str| {
        match cmp {
            Some((lhs, rhs, passed)) => checks.push(OrderingCheck {
                name: name.into(),
                passed,
                detail: format!("{describe}: {} vs {}", fmt_float(lhs), fmt_float(rhs)),
            }),
            None => checks.push(OrderingCheck {
                name: name.into(),
                passed: false,
                detail: format!("{describe}: missing variant results"),
            }),
        }
    };

    push(
        "diffsim_pier_plus_undercuts_adapter_only_by_margin",
        get("pier-plus", "diff_sim")
            .zip(get("adapter-only", "diff_sim"))
            .map(|(a, b)| (a, b - 0.10, a < b - 0.10)),
        "inter-type similarity, pier-plus vs adapter-only - 0.10",
    );
    push(
        "hscore_pier_plus_above_base_only",
        get("pier-plus", "h_score")
            .zip(get("base-only", "h_score"))
            .map(|(a, b)| (a, b, a > b)),
        "clustering homogeneity, pier-plus vs base-only",
    );
    push(
        "senseclf_pier_plus_at_least_base_only",
        get("pier-plus", "senseclf_acc")
            .zip(get("base-only", "senseclf_acc"))
            .map(|(a, b)| (a, b, a >= b)),
        "sense accuracy, pier-plus vs base-only",
    );
    push(
        "senseclf_pier_plus_at_least_adapter_only",
        get("pier-plus", "senseclf_acc")
            .zip(get("adapter-only", "senseclf_acc"))
            .map(|(a, b)| (a, b, a >= b)),
        "sense accuracy, pier-plus vs adapter-only",
    );
    push(
        "spandet_sa_pier_plus_beats_base_only_by_margin",
        get("pier-plus", "spandet_sa")
            .zip(get("base-only", "spandet_sa"))
            .map(|(a, b)| (a, b + 0.05, a >= b + 0.05)),
        "span sequence accuracy, pier-plus vs base-only + 0.05",
    );
    push(
        "spandet_sa_fusion_attn_below_pier_plus",
        get("fusion-attn", "spandet_sa")
            .zip(get("pier-plus", "spandet_sa"))
            .map(|(a, b)| (a, b, a < b)),
        "span sequence accuracy, fusion-attn vs pier-plus",
    );
    push(
        "reconstruction_within_band_of_base_only",
        get("pier-plus", "recon_acc")
            .zip(get("base-only", "recon_acc"))
            .map(|(a, b)| (a, b, (a - b).abs() <= 0.02)),
        "reconstruction accuracy, pier-plus vs base-only (band 0.02)",
    );
    match skew_sides {
        Some((skewed, balanced)) => checks.push(OrderingCheck {
            name: "skewed_pies_less_differentiated_than_balanced".into(),
            passed: skewed > balanced,
            detail: format!(
                "mean inter-type similarity, skewed vs balanced: {} vs {}",
                fmt_float(skewed),
                fmt_float(balanced)
            ),
        }),
        None => checks.push(OrderingCheck {
            name: "skewed_pies_less_differentiated_than_balanced".into(),
            passed: false,
            detail: "pier-plus reports carried no skew analysis".into(),
        }),
    }
    checks
}

fn ablation_json(outcome: &AblationOutcome) -> Json {
    let mut variants = Vec::new();
    for (variant, metrics) in &outcome.table {
        let mut fields: Vec<(String, Json)> = vec![("variant".into(), Json::Str(variant.clone()))];
        for (metric, a) in metrics {
            fields.push((
                format!("{metric}_mean"),
                Json::Float(a.mean),
            ));
            fields.push((format!("{metric}_spread"), Json::Float(a.spread)));
            fields.push((
                format!("{metric}_values"),
                Json::Arr(a.values.iter().map(|v| Json::Float(*v)).collect()),
            ));
        }
        variants.push(Json::Obj(fields));
    }
    let orderings = outcome
        .orderings
        .iter()
        .map(|o| {
            Json::Obj(vec![
                ("name".into(), Json::Str(o.name.clone())),
                ("passed".into(), Json::Bool(o.passed)),
                ("detail".into(), Json::Str(o.detail.clone())),
            ])
        })
        .collect();
    let failures = outcome
        .failures
        .iter()
        .map(|(k, v)| (k.clone(), Json::Str(v.clone())))
        .collect();
    Json::Obj(vec![
        ("variants".into(), Json::Arr(variants)),
        ("orderings".into(), Json::Arr(orderings)),
        ("failures".into(), Json::Obj(failures)),
        (
            "skew_sides".into(),
            match outcome.skew_sides {
                Some((s, b)) => Json::Obj(vec![
                    ("skewed_mean_sim".into(), Json::Float(s)),
                    ("balanced_mean_sim".into(), Json::Float(b)),
                ]),
                None => Json::Null,
            },
        ),
    ])
}

fn ablation_csv(outcome: &AblationOutcome) -> String {
    let mut csv = String::from("variant");
    for m in METRICS {
        csv.push_str(&format!(",{m}_mean,{m}_spread"));
    }
    csv.push('\n');
    for variant in VARIANTS {
        let Some(metrics) = outcome.table.get(variant) else {
            csv.push_str(&format!("{variant},failed\n"));
            continue;
        };
        csv.push_str(variant);
        for m in METRICS {
            match metrics.get(m) {
                Some(a) => csv.push_str(&format!(",{},{}", fmt_float(a.mean), fmt_float(a.spread))),
                None => csv.push_str(",,"),
            }
        }
        csv.push('\n');
    }
    csv
}

/// Runs the full ten-variant matrix over all seeds and evaluates the
/// ordering checks on seed means.
pub fn run_ablation(cfg: &AblateConfig, out: Option<&Path>) -> anyhow::Result<AblationOutcome> {
    if cfg.seeds.is_empty() {
        bail!("ablation needs at least one seed");
    }
    let corpus = jsonl::load_corpus(&cfg.corpus)?;
    let mut per_seed: Vec<BTreeMap<String, anyhow::Result<MetricsReport>>> = Vec::new();
    for &seed in &cfg.seeds {
        let results = run_seed(&corpus, cfg, seed);
        if let Some(out) = out {
            let seed_dir = out.join(format!("seed{seed}"));
            std::fs::create_dir_all(&seed_dir)?;
            for (variant, res) in &results {
                if let Ok(report) = res {
                    let vdir = seed_dir.join(variant);
                    std::fs::create_dir_all(&vdir)?;
                    write_report(report, &vdir)?;
                }
            }
        }
        per_seed.push(results);
    }

    let mut failures: BTreeMap<String, String> = BTreeMap::new();
    let mut table: BTreeMap<String, BTreeMap<String, Agg>> = BTreeMap::new();
    for variant in VARIANTS {
        let mut ok_reports = Vec::new();
        for (i, seed_results) in per_seed.iter().enumerate() {
            match seed_results.get(variant) {
                Some(Ok(r)) => ok_reports.push(r),
                Some(Err(e)) => {
                    failures.insert(
                        variant.to_string(),
                        format!("seed {}: {e}", cfg.seeds[i]),
                    );
                }
                None => {
                    failures.insert(variant.to_string(), "missing result".into());
                }
            }
        }
        if ok_reports.len() == per_seed.len() {
            let mut metrics = BTreeMap::new();
            for m in METRICS {
                metrics.insert(
                    m.to_string(),
                    agg(ok_reports.iter().map(|r| metric_of(r, m)).collect()),
                );
            }
            table.insert(variant.to_string(), metrics);
        }
    }

    // skew sides from pier-plus reports
    let mut skew_pairs: Vec<(f64, f64)> = Vec::new();
    for seed_results in &per_seed {
        if let Some(Ok(r)) = seed_results.get("pier-plus") {
            if let Some(s) = &r.skew {
                skew_pairs.push((s.skewed_mean_sim, s.balanced_mean_sim));
            }
        }
    }
    let skew_sides = if skew_pairs.len() == per_seed.len() {
        let n = skew_pairs.len() as f64;
        Some((
            skew_pairs.iter().map(|(s, _)| s).sum::<f64>() / n,
            skew_pairs.iter().map(|(_, b)| b).sum::<f64>() / n,
        ))
    } else {
        None
    };

    let orderings = evaluate_orderings(&table, skew_sides);
    let outcome = AblationOutcome {
        table,
        orderings,
        failures,
        skew_sides,
    };
    if let Some(out) = out {
        std::fs::write(
            out.join("ablation.json"),
            ablation_json(&outcome).to_string_canonical(),
        )?;
        std::fs::write(out.join("ablation.csv"), ablation_csv(&outcome))?;
    }
    Ok(outcome)
}

pub fn cmd_ablate(cfg: &AblateConfig, out: &Path, force: bool) -> anyhow::Result<AblationOutcome> {
    prepare_out_dir(out, force)?;
    save_echo(cfg, out)?;
    let outcome = run_ablation(cfg, Some(out))?;
    for check in &outcome.orderings {
        eprintln!(
            "ordering {}: {} ({})",
            check.name,
            if check.passed { "pass" } else { "FAIL" },
            check.detail
        );
    }
    for (variant, error) in &outcome.failures {
        eprintln!("variant {variant} FAILED: {error}");
    }
    Ok(outcome)
}

/// Where a trained stage checkpoint lands inside a pipeline directory.
pub fn stage_dir(root: &Path, stage: Stage) -> PathBuf {
    root.join(stage.as_str())
}
