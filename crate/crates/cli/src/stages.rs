//! The pipeline stages behind each subcommand. Every stage reads its inputs
//! from the artifact directory, writes its outputs back there under fixed
//! names, and reports missing upstream artifacts by path with a hint about
//! which stage produces them.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use reclab_core::augment::{
    assemble_mix, quantile_filter, read_scores, score_users, write_scores, Embedder,
    HashEmbedder, RemoteEmbedder,
};
use reclab_core::datagen::{
    build_cot_records, load_records, sanitize, save_records, score_quality, CoTRecord,
    GenParams, GenerationClient, RemoteClient, StubClient, RUBRIC_DIMS,
};
use reclab_core::eval::{evaluate, read_eval, write_eval};
use reclab_core::policy::PolicyModel;
use reclab_core::prompting::{build_samples, save_samples, RenderedSample};
use reclab_core::sequences::{load_sequences, save_sequences, split_sequences, Split};
use reclab_core::synth::{generate_cots, generate_world};
use reclab_core::train::{read_metrics, train_grpo, train_sft, write_metrics};
use reclab_core::{Catalog, Error, InteractionSequence, Vocabulary};

use crate::appcfg::{AppConfig, DatagenConfig, EmbedConfig};
use crate::report;
use crate::Failure;

pub const CATALOG: &str = "catalog.jsonl";
pub const SEQUENCES: &str = "sequences.jsonl";
pub const LABELS: &str = "labels.jsonl";
pub const RECORDS: &str = "records.jsonl";
pub const RUBRIC: &str = "rubric.csv";
pub const SCORES: &str = "scores.csv";
pub const SAMPLES: &str = "samples.jsonl";
pub const VOCAB: &str = "vocab.txt";
pub const MODEL_SFT: &str = "model_sft.ckpt";
pub const MODEL_GRPO: &str = "model_grpo.ckpt";
pub const SFT_METRICS: &str = "sft_metrics.csv";
pub const GRPO_METRICS: &str = "grpo_metrics.csv";
pub const EVAL: &str = "eval.csv";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const REPORT: &str = "report.md";
pub const REWARD_CURVE: &str = "reward_curve.svg";

/// An input artifact must already exist; name it and say which stage makes it.
fn require(path: PathBuf, hint: &str) -> Result<PathBuf, Failure> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure::Missing {
            path,
            hint: hint.into(),
        })
    }
}

fn load_world_inputs(out: &Path) -> Result<(Catalog, Vec<InteractionSequence>), Failure> {
    let catalog = Catalog::load(&require(out.join(CATALOG), "run `reclab synth` first")?)?;
    let sequences = load_sequences(
        &require(out.join(SEQUENCES), "run `reclab synth` first")?,
        &catalog,
    )?;
    Ok((catalog, sequences))
}

fn load_records_artifact(out: &Path) -> Result<Vec<CoTRecord>, Failure> {
    let path = require(
        out.join(RECORDS),
        "run `reclab synth` or `reclab build-cot` first",
    )?;
    Ok(load_records(&path)?)
}

/// Scrub each record against its own user's held-out target title (plus the
/// tag grammar, which the scrubber always masks).
fn scrub_targets(
    catalog: &Catalog,
    sequences: &[InteractionSequence],
    history_len: usize,
    records: &mut [CoTRecord],
) -> Result<(), Failure> {
    let target_title: HashMap<u32, String> = sequences
        .iter()
        .map(|seq| {
            let (_, target) = seq.history_and_target(history_len)?;
            Ok((
                seq.user_id,
                catalog.require(target, "leakage scrub")?.title.clone(),
            ))
        })
        .collect::<Result<_, Error>>()?;
    for record in records.iter_mut() {
        match target_title.get(&record.user_id) {
            Some(title) => sanitize(record, &[title.as_str()]),
            None => sanitize(record, &[]),
        }
    }
    Ok(())
}

fn make_client(cfg: &DatagenConfig) -> Box<dyn GenerationClient> {
    match cfg.backend.as_str() {
        "remote" => Box::new(RemoteClient::new(&cfg.base_url, &cfg.model, &cfg.api_key_env)),
        // Validation already restricted the value to stub|remote.
        _ => Box::new(StubClient::new()),
    }
}

/// Embedding backend with enough concreteness left to flush the remote cache.
enum EmbedBackend {
    Hash(HashEmbedder),
    Remote(RemoteEmbedder),
}

impl EmbedBackend {
    fn build(cfg: &EmbedConfig) -> Result<EmbedBackend, Failure> {
        match cfg.backend.as_str() {
            "remote" => Ok(EmbedBackend::Remote(RemoteEmbedder::new(
                &cfg.base_url,
                &cfg.model,
                &cfg.api_key_env,
                cfg.dim,
                cfg.cache.as_deref(),
            )?)),
            _ => Ok(EmbedBackend::Hash(HashEmbedder::new(cfg.dim))),
        }
    }

    fn as_embedder(&self) -> &dyn Embedder {
        match self {
            EmbedBackend::Hash(h) => h,
            EmbedBackend::Remote(r) => r,
        }
    }

    fn finish(&self) -> Result<(), Error> {
        match self {
            EmbedBackend::Hash(_) => Ok(()),
            EmbedBackend::Remote(r) => r.save_cache(),
        }
    }
}

/// `synth`: materialize a synthetic world and its fabricated reasoning
/// records, the fully offline stand-in for `build-cot`.
pub fn synth(cfg: &AppConfig, out: &Path) -> Result<(), Failure> {
    let world = generate_world(&cfg.world, cfg.run.seed)?;
    world.catalog.save(&out.join(CATALOG))?;
    save_sequences(&world.sequences, &out.join(SEQUENCES))?;
    world.save_labels(&out.join(LABELS))?;
    let mut records = generate_cots(&world, &cfg.world, cfg.run.history_len, cfg.run.seed)?;
    if cfg.datagen.sanitize {
        scrub_targets(
            &world.catalog,
            &world.sequences,
            cfg.run.history_len,
            &mut records,
        )?;
    }
    save_records(&records, &out.join(RECORDS))?;
    log::info!(
        "synth: {} items, {} users, {} reasoning records -> {}",
        world.catalog.len(),
        world.sequences.len(),
        records.len(),
        out.display()
    );
    Ok(())
}

/// `build-cot`: construct reasoning records through the configured
/// text-generation backend, optionally grading each against the rubric.
pub fn build_cot(cfg: &AppConfig, out: &Path, grade: bool) -> Result<(), Failure> {
    let (catalog, sequences) = load_world_inputs(out)?;
    let client = make_client(&cfg.datagen);
    let params = GenParams {
        temperature: cfg.datagen.temperature,
        max_tokens: cfg.datagen.max_tokens,
    };
    let mut records =
        build_cot_records(client.as_ref(), &catalog, &sequences, cfg.run.history_len, &params)?;
    if cfg.datagen.sanitize {
        scrub_targets(&catalog, &sequences, cfg.run.history_len, &mut records)?;
    }
    save_records(&records, &out.join(RECORDS))?;
    if grade {
        let by_user: HashMap<u32, &InteractionSequence> =
            sequences.iter().map(|s| (s.user_id, s)).collect();
        let mut csv = format!("user_id,{},mean\n", RUBRIC_DIMS.join(","));
        for record in &records {
            let seq = by_user
                .get(&record.user_id)
                .ok_or(Error::MissingRecord { user_id: record.user_id })?;
            let (history, _) = seq.history_and_target(cfg.run.history_len)?;
            let titles: Vec<String> = history
                .iter()
                .map(|&id| Ok(catalog.require(id, "rubric grading")?.title.clone()))
                .collect::<Result<_, Error>>()?;
            let scores = score_quality(client.as_ref(), &titles, record, &params)?;
            csv.push_str(&record.user_id.to_string());
            for dim in RUBRIC_DIMS {
                csv.push_str(&format!(",{}", scores.dims[dim].score));
            }
            csv.push_str(&format!(",{:.1}\n", scores.mean()));
        }
        fs::write(out.join(RUBRIC), csv)?;
    }
    log::info!(
        "build-cot: {} records via {} backend{}",
        records.len(),
        cfg.datagen.backend,
        if grade { ", graded" } else { "" }
    );
    Ok(())
}

/// `filter`: score record/history consistency, mark the retained fraction,
/// and export the mixed dataset (reasoning attached only to retained users).
pub fn filter(cfg: &AppConfig, out: &Path, p_flag: Option<f64>) -> Result<(), Failure> {
    let (catalog, sequences) = load_world_inputs(out)?;
    let records = load_records_artifact(out)?;
    let backend = EmbedBackend::build(&cfg.embed)?;
    let mut scores = score_users(
        backend.as_embedder(),
        &catalog,
        &sequences,
        &records,
        cfg.run.history_len,
    )?;
    backend.finish()?;
    let p = p_flag.unwrap_or(cfg.run.retention_sft);
    let tau = quantile_filter(&mut scores, p)?;
    write_scores(&scores, &out.join(SCORES))?;
    let mix = assemble_mix(&records, &scores, cfg.datagen.sanitize)?;
    let samples = build_samples(&catalog, &sequences, &cfg.run, &mix)?;
    save_samples(&samples, &out.join(SAMPLES))?;
    let kept = scores.iter().filter(|s| s.retained).count();
    log::info!(
        "filter: kept {kept}/{} users at p={p} (threshold {tau:.4}); {} samples carry reasoning",
        scores.len(),
        samples.iter().filter(|s| s.has_cot).count()
    );
    Ok(())
}

/// The training-side dataset assembly shared by `sft` and `grpo`: re-mark
/// the stored scores at the stage's own retention, attach reasoning to the
/// retained users, and render per-split samples.
fn assemble_splits(
    cfg: &AppConfig,
    out: &Path,
    retention: f64,
) -> Result<(Catalog, Split, Vec<RenderedSample>, Vec<RenderedSample>, Vec<RenderedSample>), Failure>
{
    let (catalog, sequences) = load_world_inputs(out)?;
    let records = load_records_artifact(out)?;
    let mut scores = read_scores(&require(out.join(SCORES), "run `reclab filter` first")?)?;
    quantile_filter(&mut scores, retention)?;
    let mix = assemble_mix(&records, &scores, cfg.datagen.sanitize)?;
    let split = split_sequences(&sequences, &cfg.run.split, cfg.run.seed)?;
    let train = build_samples(&catalog, &split.train, &cfg.run, &mix)?;
    let valid = build_samples(&catalog, &split.valid, &cfg.run, &mix)?;
    let test = build_samples(&catalog, &split.test, &cfg.run, &mix)?;
    Ok((catalog, split, train, valid, test))
}

/// Vocabulary over everything the model may ever see or emit in this run:
/// catalog text plus every split's rendered prompts and targets.
fn build_vocab(
    catalog: &Catalog,
    sample_sets: [&[RenderedSample]; 3],
) -> Vocabulary {
    let mut corpus: Vec<&str> = Vec::new();
    for item in catalog.items() {
        corpus.push(&item.title);
        if let Some(caption) = &item.caption {
            corpus.push(caption);
        }
    }
    for set in sample_sets {
        for sample in set {
            corpus.push(&sample.prompt);
            corpus.push(&sample.target);
        }
    }
    Vocabulary::build(catalog, corpus)
}

/// `sft`: supervised fine-tuning from a fresh initialization.
pub fn sft(cfg: &AppConfig, out: &Path) -> Result<(), Failure> {
    let (catalog, _, train, valid, test) = assemble_splits(cfg, out, cfg.run.retention_sft)?;
    let vocab = build_vocab(&catalog, [&train, &valid, &test]);
    let mut model = PolicyModel::new(cfg.model, vocab.len(), cfg.run.seed)?;
    let rows = train_sft(&mut model, &train, &vocab, &cfg.run, &cfg.sft)?;
    model.save(&out.join(MODEL_SFT))?;
    vocab.save(&out.join(VOCAB))?;
    write_metrics(&rows, &out.join(SFT_METRICS))?;
    log::info!(
        "sft: {} samples ({} with reasoning), vocab {}, final loss {:.4}",
        train.len(),
        train.iter().filter(|s| s.has_cot).count(),
        vocab.len(),
        rows.last().map(|r| r.loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

/// `grpo`: policy optimization starting from the fine-tuned checkpoint.
pub fn grpo(cfg: &AppConfig, out: &Path) -> Result<(), Failure> {
    let (catalog, _, train, _, _) = assemble_splits(cfg, out, cfg.run.retention_grpo)?;
    let vocab = Vocabulary::load(&require(out.join(VOCAB), "run `reclab sft` first")?)?;
    let mut model = PolicyModel::load(&require(out.join(MODEL_SFT), "run `reclab sft` first")?)?;
    let rows = train_grpo(&mut model, &train, &vocab, &catalog, &cfg.run, &cfg.grpo)?;
    model.save(&out.join(MODEL_GRPO))?;
    write_metrics(&rows, &out.join(GRPO_METRICS))?;
    let last = rows.last();
    log::info!(
        "grpo: {} prompts in pool, final reward {:.4}, final hit rate {:.4}",
        train.len(),
        last.and_then(|r| r.mean_reward).unwrap_or(f64::NAN),
        last.and_then(|r| r.hit_rate).unwrap_or(f64::NAN)
    );
    Ok(())
}

/// `eval`: leave-one-out ranking of the chosen checkpoint on one split.
pub fn eval(cfg: &AppConfig, out: &Path, which: &str) -> Result<(), Failure> {
    let (catalog, sequences) = load_world_inputs(out)?;
    let vocab = Vocabulary::load(&require(out.join(VOCAB), "run `reclab sft` first")?)?;
    let ckpt = match which {
        "sft" => require(out.join(MODEL_SFT), "run `reclab sft` first")?,
        "grpo" => require(out.join(MODEL_GRPO), "run `reclab grpo` first")?,
        "auto" => {
            let grpo_ckpt = out.join(MODEL_GRPO);
            if grpo_ckpt.is_file() {
                grpo_ckpt
            } else {
                require(out.join(MODEL_SFT), "run `reclab sft` or `reclab grpo` first")?
            }
        }
        other => {
            return Err(Failure::Config(vec![format!(
                "--model must be \"sft\", \"grpo\", or \"auto\", got {other:?}"
            )]))
        }
    };
    let model = PolicyModel::load(&ckpt)?;
    let split = split_sequences(&sequences, &cfg.run.split, cfg.run.seed)?;
    let part = match cfg.eval.split.as_str() {
        "train" => &split.train,
        "valid" => &split.valid,
        // Validation restricted the value to train|valid|test.
        _ => &split.test,
    };
    let rows = evaluate(
        &model,
        &vocab,
        &catalog,
        part,
        &cfg.run,
        &cfg.eval.split,
        &cfg.eval.ks,
    )?;
    write_eval(&rows, &out.join(EVAL))?;
    println!(
        "checkpoint: {}",
        ckpt.file_name().unwrap_or_default().to_string_lossy()
    );
    println!("{:<6} {:>4} {:>8} {:>8} {:>6}", "split", "k", "HR", "NDCG", "users");
    for r in &rows {
        println!(
            "{:<6} {:>4} {:>8.4} {:>8.4} {:>6}",
            r.split, r.k, r.hr, r.ndcg, r.n_users
        );
    }
    Ok(())
}

/// `report`: summarize whatever metrics and evaluation artifacts exist.
pub fn report(_cfg: &AppConfig, out: &Path) -> Result<(), Failure> {
    let sft_rows = {
        let path = out.join(SFT_METRICS);
        if path.is_file() { Some(read_metrics(&path)?) } else { None }
    };
    let grpo_rows = {
        let path = out.join(GRPO_METRICS);
        if path.is_file() { Some(read_metrics(&path)?) } else { None }
    };
    let eval_rows = {
        let path = out.join(EVAL);
        if path.is_file() { Some(read_eval(&path)?) } else { None }
    };
    if sft_rows.is_none() && grpo_rows.is_none() {
        return Err(Failure::Missing {
            path: out.join(SFT_METRICS),
            hint: "run `reclab sft` or `reclab grpo` first".into(),
        });
    }
    let svg = match &grpo_rows {
        Some(rows) => {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| r.mean_reward.map(|m| (r.step as f64, m)))
                .collect();
            report::render_curve(&points, "round", "mean reward", "Training reward")
        }
        None => {
            let rows = sft_rows.as_ref().expect("checked above");
            let points: Vec<(f64, f64)> =
                rows.iter().map(|r| (r.step as f64, r.loss)).collect();
            report::render_curve(&points, "step", "loss", "Supervised loss")
        }
    };
    fs::write(out.join(REWARD_CURVE), svg)?;
    let md = report::render_report(
        sft_rows.as_deref(),
        grpo_rows.as_deref(),
        eval_rows.as_deref(),
        REWARD_CURVE,
    );
    fs::write(out.join(REPORT), md)?;
    log::info!("report: wrote {} and {}", REPORT, REWARD_CURVE);
    Ok(())
}
