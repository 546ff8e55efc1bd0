//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use molfrag::analysis::{
    ablate, attribute, bootstrap_gap, circular_fingerprint_atoms, cluster_and_nmi, fidelity_report,
    mean_average_precision, mean_mae, mean_rmse, mean_roc_auc, token_space_stats, token_states, TaskMean,
};
use molfrag::dataset::{read_corpus, read_labeled, split_dataset, Corpus, Labeled, Skipped};
use molfrag::model::{
    encode_batch, finetune, predict, pretrain, Model, MolInput, Regime, RunConfig, TaskData, TaskKind,
};
use molfrag::par::Exec;
use molfrag::tensor::{read_checkpoint, write_checkpoint};
use molfrag::tokenizer::{build_vocab, stats_csv, StatsRow, Tokenizer, Vocab};
use molfrag::wlhash::digest64;

use crate::error::CliError;
use crate::output::{emit, read_bytes, read_text, write_bytes, Provenance};
use crate::{parse_fractions, Analysis, Cli, Command, ConfigArgs, LabeledArgs, Task};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match &cli.command {
        Command::BuildVocab { corpus, size, out } => build_vocab_cmd(corpus, *size, out),
        Command::Tokenize {
            vocab,
            corpus,
            stats,
            out,
        } => tokenize_cmd(vocab, corpus, *stats, out.as_deref(), exec),
        Command::Stats { vocab, corpus, out } => stats_cmd(vocab, corpus, out.as_deref(), exec),
        Command::Pretrain {
            vocab,
            corpus,
            config,
            out,
            log,
        } => pretrain_cmd(vocab, corpus, config, out, log.as_deref(), exec),
        Command::Finetune {
            vocab,
            checkpoint,
            data,
            config,
            out,
            report,
            log,
        } => finetune_cmd(
            vocab,
            checkpoint,
            data,
            config,
            out,
            report.as_deref(),
            log.as_deref(),
            exec,
        ),
        Command::Attribute {
            vocab,
            checkpoint,
            corpus,
            out,
        } => attribute_cmd(vocab, checkpoint, corpus, out.as_deref(), exec),
        Command::Analyze { analysis } => match analysis {
            Analysis::TokenSpace {
                vocab,
                checkpoint,
                corpus,
                out,
            } => token_space_cmd(vocab, checkpoint, corpus, out.as_deref(), exec),
            Analysis::Nmi {
                vocab,
                checkpoint,
                corpus,
                k,
                seed,
                max_items,
                out,
                embeddings,
            } => nmi_cmd(
                vocab,
                checkpoint,
                corpus,
                (*k, *seed, *max_items),
                out.as_deref(),
                embeddings.as_deref(),
                exec,
            ),
            Analysis::Fidelity {
                vocab,
                checkpoint,
                data,
                k,
                bootstrap,
                seed,
                out,
            } => fidelity_cmd(vocab, checkpoint, data, (*k, *bootstrap, *seed), out.as_deref(), exec),
        },
    }
}

/// Canonical `key = value` text of the settings a command depends on.
fn settings(pairs: &[(&str, String)]) -> String {
    pairs.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "{k} = {v}");
        s
    })
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    Ok(format!("{:016x}", digest64(&read_bytes(path)?)))
}

fn report_skipped(path: &Path, skipped: &[Skipped]) {
    for s in skipped {
        warn!("{}: line {} skipped: {}", path.display(), s.line, s.error);
    }
}

fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    let corpus = read_corpus(&read_text(path)?).map_err(|e| CliError::from(e).in_file(path))?;
    report_skipped(path, &corpus.skipped);
    Ok(corpus)
}

fn load_labeled(path: &Path) -> Result<Labeled, CliError> {
    let data = read_labeled(&read_text(path)?).map_err(|e| CliError::from(e).in_file(path))?;
    report_skipped(path, &data.skipped);
    Ok(data)
}

fn load_tokenizer(path: &Path) -> Result<Tokenizer, CliError> {
    let (vocab, history) = Vocab::read(&read_text(path)?).map_err(|e| CliError::from(e).in_file(path))?;
    Ok(Tokenizer::new(vocab, history))
}

/// Applies a config file and `--set` overrides on top of `base`, and fills
/// in the vocabulary size.
fn resolve_config(base: RunConfig, args: &ConfigArgs, vocab_len: usize) -> Result<RunConfig, CliError> {
    let mut cfg = base;
    if let Some(path) = &args.config {
        let text = read_text(path)?;
        for (k, v) in molfrag::model::parse_kv(&text).map_err(|e| CliError::from(e).in_file(path))? {
            cfg.set(&k, &v).map_err(|e| CliError::from(e).in_file(path))?;
        }
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if cfg.model.vocab_size == 0 {
        cfg.model.vocab_size = vocab_len;
    }
    if cfg.model.vocab_size != vocab_len {
        return Err(CliError::Config(format!(
            "vocab_size {} does not match the vocabulary ({vocab_len} entries)",
            cfg.model.vocab_size
        )));
    }
    cfg.model.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path, tok: &Tokenizer) -> Result<(Model, RunConfig), CliError> {
    let ck = read_checkpoint(&read_bytes(path)?).map_err(|e| CliError::from(e).in_file(path))?;
    let cfg = RunConfig::from_text(&ck.config).map_err(|e| CliError::from(e).in_file(path))?;
    if cfg.model.vocab_size != tok.vocab().len() {
        return Err(CliError::Data(format!(
            "{}: model expects {} vocabulary entries, vocabulary has {}",
            path.display(),
            cfg.model.vocab_size,
            tok.vocab().len()
        )));
    }
    let model = Model::from_params(cfg.model.clone(), &ck.params)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((model, cfg))
}

fn save_model(path: &Path, prov: &Provenance, cfg: &RunConfig, model: &Model) -> Result<(), CliError> {
    let text = format!("{}{}", prov.comment_header(), cfg.to_text());
    write_bytes(path, &write_checkpoint(&text, &model.params))
}

fn build_vocab_cmd(corpus_path: &Path, size: usize, out: &Path) -> Result<(), CliError> {
    let corpus = load_corpus(corpus_path)?;
    let mols = corpus.mols();
    let cfg = settings(&[
        ("corpus_fingerprint", molfrag::tokenizer::bpe::corpus_fingerprint(&mols)),
        ("size", size.to_string()),
    ]);
    let prov = Provenance::new("build-vocab", &cfg, 0);
    info!("building a {size}-entry vocabulary from {} molecules", mols.len());
    let (mut vocab, history) = build_vocab(&mols, size)?;
    vocab.meta.provenance = prov.pairs();
    if vocab.meta.truncated {
        warn!(
            "corpus exhausted before reaching {size} entries; vocabulary has {}",
            vocab.len()
        );
    }
    write_bytes(out, vocab.write(&history).as_bytes())
}

fn stats_row(name: &str, tok: &Tokenizer, corpus: &Corpus, exec: Exec) -> Result<StatsRow, CliError> {
    let seqs = tok.tokenize_batch(&corpus.mols(), exec);
    Ok(StatsRow::from_seqs(name, &seqs)?)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn tokenize_cmd(vocab: &Path, corpus_path: &Path, stats: bool, out: Option<&Path>, exec: Exec) -> Result<(), CliError> {
    let tok = load_tokenizer(vocab)?;
    let corpus = load_corpus(corpus_path)?;
    let cfg = settings(&[("vocab", file_digest(vocab)?), ("stats", stats.to_string())]);
    let prov = Provenance::new("tokenize", &cfg, 0);
    let mut body = format!("# skipped_lines: {}\n", corpus.skipped.len());
    if stats {
        body.push_str(&stats_csv(&[stats_row(
            &dataset_name(corpus_path),
            &tok,
            &corpus,
            exec,
        )?]));
    } else {
        let seqs = tok.tokenize_batch(&corpus.mols(), exec);
        body.push_str("line\tsmiles\ttoken_ids\tfallback\n");
        for (r, s) in corpus.records.iter().zip(&seqs) {
            let ids: Vec<String> = s.token_ids.iter().map(u32::to_string).collect();
            let flags: String = s.fallback_flags.iter().map(|&f| if f { '1' } else { '0' }).collect();
            let _ = writeln!(body, "{}\t{}\t{}\t{flags}", r.line, r.smiles, ids.join(" "));
        }
    }
    emit(out, &prov, &body)
}

fn stats_cmd(vocab: &Path, corpora: &[std::path::PathBuf], out: Option<&Path>, exec: Exec) -> Result<(), CliError> {
    let tok = load_tokenizer(vocab)?;
    let mut pairs = vec![("vocab", file_digest(vocab)?)];
    let mut rows = Vec::new();
    let mut notes = String::new();
    for path in corpora {
        pairs.push(("corpus", file_digest(path)?));
        let corpus = load_corpus(path)?;
        let name = dataset_name(path);
        let _ = writeln!(notes, "# skipped_lines {name}: {}", corpus.skipped.len());
        rows.push(stats_row(&name, &tok, &corpus, exec)?);
    }
    let v = tok.vocab();
    let _ = writeln!(
        notes,
        "# vocabulary: {} entries, {} fragments, {} valid",
        v.len(),
        v.n_fragment_entries(),
        v.n_valid()
    );
    let prov = Provenance::new("stats", &settings(&pairs), 0);
    emit(out, &prov, &format!("{notes}{}", stats_csv(&rows)))
}

fn pretrain_cmd(
    vocab: &Path,
    corpus_path: &Path,
    args: &ConfigArgs,
    out: &Path,
    log: Option<&Path>,
    exec: Exec,
) -> Result<(), CliError> {
    let tok = load_tokenizer(vocab)?;
    let corpus = load_corpus(corpus_path)?;
    let cfg = resolve_config(RunConfig::default(), args, tok.vocab().len())?;
    let prov = Provenance::new("pretrain", &cfg.to_text(), cfg.train.seed);
    let inputs = encode_batch(&corpus.mols(), &tok, cfg.model.regime, exec);
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    info!(
        "pretraining on {} molecules, {} parameters",
        inputs.len(),
        model.params.n_scalars()
    );
    let steps = pretrain(&mut model, &inputs, tok.vocab(), &cfg.train, exec, |s| {
        info!(
            "step {} loss {:.4} masked accuracy {:.3}",
            s.step, s.loss, s.masked_accuracy
        );
    })?;
    save_model(out, &prov, &cfg, &model)?;
    if let Some(path) = log {
        let mut body = String::from("step,loss,masked_accuracy\n");
        for s in &steps {
            let _ = writeln!(body, "{},{:.6},{:.6}", s.step, s.loss, s.masked_accuracy);
        }
        emit(Some(path), &prov, &body)?;
    }
    Ok(())
}

fn task_kind(task: Task) -> TaskKind {
    match task {
        Task::Binary => TaskKind::Binary,
        Task::Regression => TaskKind::Regression,
    }
}

/// Labeled inputs and their deterministic split.
fn labeled_data(
    args: &LabeledArgs,
    tok: &Tokenizer,
    regime: Regime,
    exec: Exec,
) -> Result<(Labeled, TaskData, molfrag::dataset::Split), CliError> {
    let fractions = parse_fractions(&args.fractions)?;
    let labeled = load_labeled(&args.labels)?;
    let mols: Vec<_> = labeled.records.iter().map(|r| r.mol.clone()).collect();
    let data = TaskData {
        inputs: encode_batch(&mols, tok, regime, exec),
        labels: labeled.labels.clone(),
        valid: labeled.valid.clone(),
    };
    let split = split_dataset(mols.len(), fractions, args.split_seed)?;
    Ok((labeled, data, split))
}

fn labeled_settings(args: &LabeledArgs) -> Result<Vec<(&'static str, String)>, CliError> {
    Ok(vec![
        ("labels", file_digest(&args.labels)?),
        ("task", format!("{:?}", args.task)),
        ("split_seed", args.split_seed.to_string()),
        ("fractions", args.fractions.clone()),
    ])
}

fn metric_row(
    out: &mut String,
    split: &str,
    n: usize,
    metric: &str,
    m: Result<TaskMean, molfrag::analysis::AnalysisError>,
) {
    match m {
        Ok(TaskMean {
            mean: Some(v),
            n_used,
            n_excluded,
        }) => {
            let _ = writeln!(out, "{split},{n},{metric},{v:.6},{n_used},{n_excluded}");
        }
        Ok(t) => {
            let _ = writeln!(out, "{split},{n},{metric},,0,{}", t.n_excluded);
        }
        Err(e) => warn!("{split} {metric}: {e}"),
    }
}

#[allow(clippy::too_many_arguments)]
fn finetune_cmd(
    vocab: &Path,
    checkpoint: &Path,
    data_args: &LabeledArgs,
    args: &ConfigArgs,
    out: &Path,
    report: Option<&Path>,
    log: Option<&Path>,
    exec: Exec,
) -> Result<(), CliError> {
    let tok = load_tokenizer(vocab)?;
    let (pretrained, base) = load_model(checkpoint, &tok)?;
    let cfg = resolve_config(base, args, tok.vocab().len())?;
    let mut model = Model::from_params(cfg.model.clone(), &pretrained.params)
        .map_err(|e| CliError::Config(format!("settings incompatible with {}: {e}", checkpoint.display())))?;
    let (_, data, split) = labeled_data(data_args, &tok, cfg.model.regime, exec)?;
    let kind = task_kind(data_args.task);

    let mut digest_text = cfg.to_text();
    digest_text.push_str(&settings(&labeled_settings(data_args)?));
    digest_text.push_str(&settings(&[("checkpoint", file_digest(checkpoint)?)]));
    let prov = Provenance::new("finetune", &digest_text, cfg.train.seed);

    let train = data.subset(&split.train);
    info!(
        "fine-tuning on {} molecules, {} tasks",
        train.inputs.len(),
        data.n_tasks()
    );
    let ft = finetune(&mut model, &train, kind, &cfg.train, exec)?;
    save_model(out, &prov, &cfg, &model)?;

    if let Some(path) = report {
        let mut body = String::from("split,n,metric,value,n_tasks_used,n_tasks_excluded\n");
        for (name, idx) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
            if idx.is_empty() {
                continue;
            }
            let part = data.subset(idx);
            let scores = predict(&model, &part.inputs, exec)?;
            match kind {
                TaskKind::Binary => {
                    metric_row(
                        &mut body,
                        name,
                        idx.len(),
                        "roc_auc",
                        mean_roc_auc(&part.labels, &part.valid, &scores),
                    );
                    metric_row(
                        &mut body,
                        name,
                        idx.len(),
                        "average_precision",
                        mean_average_precision(&part.labels, &part.valid, &scores),
                    );
                }
                TaskKind::Regression => {
                    metric_row(
                        &mut body,
                        name,
                        idx.len(),
                        "rmse",
                        mean_rmse(&part.labels, &part.valid, &scores),
                    );
                    metric_row(
                        &mut body,
                        name,
                        idx.len(),
                        "mae",
                        mean_mae(&part.labels, &part.valid, &scores),
                    );
                }
            }
        }
        emit(Some(path), &prov, &body)?;
    }
    if let Some(path) = log {
        let mut body = String::from("stage,epoch,loss\n");
        for (e, l) in ft.head_losses.iter().enumerate() {
            let _ = writeln!(body, "head,{},{l:.6}", e + 1);
        }
        for (e, l) in ft.joint_losses.iter().enumerate() {
            let _ = writeln!(body, "joint,{},{l:.6}", e + 1);
        }
        emit(Some(path), &prov, &body)?;
    }
    Ok(())
}

/// Atom indices of each token, from the atom → token map.
fn token_blocks(input: &MolInput) -> Vec<Vec<usize>> {
    let mut blocks = vec![Vec::new(); input.n_tokens()];
    for (a, &t) in input.owner.iter().enumerate() {
        blocks[t].push(a);
    }
    blocks
}

fn model_inputs(
    vocab: &Path,
    checkpoint: &Path,
    corpus_path: &Path,
    exec: Exec,
) -> Result<(Model, RunConfig, Corpus, Vec<MolInput>, String), CliError> {
    let tok = load_tokenizer(vocab)?;
    let (model, cfg) = load_model(checkpoint, &tok)?;
    let corpus = load_corpus(corpus_path)?;
    let inputs = encode_batch(&corpus.mols(), &tok, cfg.model.regime, exec);
    let digest = settings(&[
        ("vocab", file_digest(vocab)?),
        ("checkpoint", file_digest(checkpoint)?),
        ("corpus", file_digest(corpus_path)?),
    ]);
    Ok((model, cfg, corpus, inputs, digest))
}

fn attribute_cmd(
    vocab: &Path,
    checkpoint: &Path,
    corpus_path: &Path,
    out: Option<&Path>,
    exec: Exec,
) -> Result<(), CliError> {
    let (model, cfg, corpus, inputs, digest) = model_inputs(vocab, checkpoint, corpus_path, exec)?;
    let prov = Provenance::new("attribute", &digest, cfg.train.seed);
    let scores = exec.map(&inputs, |x| attribute(&model, x));
    let mut body = String::from("molecule,line,token_index,token_id,score,atoms\n");
    for (m, ((input, record), s)) in inputs.iter().zip(&corpus.records).zip(scores).enumerate() {
        let s = s?;
        for (t, block) in token_blocks(input).iter().enumerate() {
            let atoms: Vec<String> = block.iter().map(usize::to_string).collect();
            let _ = writeln!(
                body,
                "{m},{},{t},{},{:.8},{}",
                record.line,
                input.token_ids[t],
                s.scores[t],
                atoms.join(" ")
            );
        }
    }
    emit(out, &prov, &body)
}

fn token_space_cmd(
    vocab: &Path,
    checkpoint: &Path,
    corpus_path: &Path,
    out: Option<&Path>,
    exec: Exec,
) -> Result<(), CliError> {
    let (model, cfg, _, inputs, digest) = model_inputs(vocab, checkpoint, corpus_path, exec)?;
    let prov = Provenance::new("analyze token-space", &digest, cfg.train.seed);
    let stats = token_space_stats(&token_states(&model, &inputs, exec)?)?;
    let regime = match cfg.model.regime {
        Regime::Fragment => "fragment",
        Regime::Molecule => "molecule",
    };
    let body = format!(
        "regime,within_spread,centroid_separation,n_tokens,n_repeated\n{regime},{:.6},{:.6},{},{}\n",
        stats.within_spread, stats.centroid_separation, stats.n_tokens, stats.n_repeated
    );
    emit(out, &prov, &body)
}

fn nmi_cmd(
    vocab: &Path,
    checkpoint: &Path,
    corpus_path: &Path,
    (k, seed, max_items): (usize, u64, Option<usize>),
    out: Option<&Path>,
    embeddings: Option<&Path>,
    exec: Exec,
) -> Result<(), CliError> {
    let (model, _, corpus, inputs, mut digest) = model_inputs(vocab, checkpoint, corpus_path, exec)?;
    digest.push_str(&settings(&[
        ("k", k.to_string()),
        ("max_items", format!("{max_items:?}")),
    ]));
    let prov = Provenance::new("analyze nmi", &digest, seed);

    let states = token_states(&model, &inputs, exec)?;
    let mut ids = Vec::new();
    let mut fps = Vec::new();
    for (m, (input, record)) in inputs.iter().zip(&corpus.records).enumerate() {
        for (t, block) in token_blocks(input).iter().enumerate() {
            ids.push(format!("{m}:{t}"));
            fps.push(circular_fingerprint_atoms(&record.mol, block, 2, 1024));
        }
    }
    let n = max_items.unwrap_or(usize::MAX).min(states.len());
    let emb: Vec<Vec<f64>> = states[..n].iter().map(|(_, v)| v.clone()).collect();
    let report = cluster_and_nmi(&emb, &fps[..n], k, seed)?;
    if report.degenerate {
        warn!("a clustering used fewer than {k} clusters");
    }
    let body = format!(
        "n_items,k,nmi,degenerate\n{n},{k},{:.6},{}\n",
        report.nmi, report.degenerate
    );
    emit(out, &prov, &body)?;

    if let Some(path) = embeddings {
        let d = emb.first().map_or(0, Vec::len);
        let mut body = String::from("id,token");
        (0..d).for_each(|i| {
            let _ = write!(body, ",d{i}");
        });
        body.push_str(",embedding_cluster,fingerprint_cluster\n");
        for i in 0..n {
            let _ = write!(body, "{},{}", ids[i], states[i].0);
            for x in &emb[i] {
                let _ = write!(body, ",{x:.6}");
            }
            let _ = writeln!(
                body,
                ",{},{}",
                report.embedding_clusters[i], report.fingerprint_clusters[i]
            );
        }
        emit(Some(path), &prov, &body)?;
    }
    Ok(())
}

fn fidelity_cmd(
    vocab: &Path,
    checkpoint: &Path,
    data_args: &LabeledArgs,
    (k, resamples, seed): (usize, usize, u64),
    out: Option<&Path>,
    exec: Exec,
) -> Result<(), CliError> {
    let tok = load_tokenizer(vocab)?;
    let (model, cfg) = load_model(checkpoint, &tok)?;
    if model.n_tasks().is_none() {
        return Err(CliError::Data(format!(
            "{}: checkpoint has no task head; run finetune first",
            checkpoint.display()
        )));
    }
    let (_, data, split) = labeled_data(data_args, &tok, cfg.model.regime, exec)?;
    let kind = task_kind(data_args.task);
    let mut pairs = labeled_settings(data_args)?;
    pairs.extend([
        ("vocab", file_digest(vocab)?),
        ("checkpoint", file_digest(checkpoint)?),
        ("k", k.to_string()),
        ("bootstrap", resamples.to_string()),
    ]);
    let prov = Provenance::new("analyze fidelity", &settings(&pairs), seed);

    let test = data.subset(&split.test);
    let ablation = ablate(&model, &test, k, exec)?;
    let r = fidelity_report(&ablation, &test, kind)?;
    let boot = bootstrap_gap(&ablation, &test, kind, resamples, seed);
    info!(
        "gap {:.3} ({} of {} molecules skipped)",
        r.gap,
        r.n_skipped,
        test.inputs.len()
    );
    let rel = r.relative_drop.map_or_else(String::new, |v| format!("{v:.4}"));
    let body = format!(
        "k,original,delta_top,delta_bottom,gap,relative_drop,n_evaluated,n_skipped,bootstrap_resamples,bootstrap_undefined,bootstrap_positive_fraction\n\
         {},{:.6},{:.6},{:.6},{:.6},{rel},{},{},{},{},{:.4}\n",
        r.k,
        r.original,
        r.delta_top,
        r.delta_bottom,
        r.gap,
        r.n_evaluated,
        r.n_skipped,
        boot.resamples,
        boot.undefined,
        boot.fraction()
    );
    emit(out, &prov, &body)
}
