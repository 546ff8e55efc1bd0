use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use molfrag::chem::parse_smiles;
use molfrag::par::Exec;
use molfrag::synth::{choose_motif, generate_corpus, motif_labels};
use molfrag::tokenizer::{Tokenizer, Vocab};
use tempfile::TempDir;

fn molfrag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molfrag"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = molfrag(args);
    assert!(
        out.status.success(),
        "molfrag {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_corpus(dir: &Path, name: &str, smiles: &[String]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, smiles.join("\n") + "\n").unwrap();
    path
}

/// Rows of a CSV after the `#` header, as field vectors (header row first).
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = rows[0]
        .iter()
        .position(|c| c == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[i].clone()).collect()
}

#[test]
fn build_vocab_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let corpus = write_corpus(dir.path(), "c.smi", &generate_corpus(150, 3));
    let (a, b) = (dir.path().join("a.vocab"), dir.path().join("b.vocab"));
    ok(&["build-vocab", "--corpus", p(&corpus), "--size", "60", "--out", p(&a)]);
    ok(&[
        "build-vocab",
        "--corpus",
        p(&corpus),
        "--size",
        "60",
        "--out",
        p(&b),
        "--sequential",
    ]);
    let (ta, tb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    assert!(text.contains("tool\tmolfrag "));
    assert!(text.contains("command\tbuild-vocab"));
    assert!(text.contains("config_digest\t"));
    Vocab::read(&text).unwrap();
}

#[test]
fn tokenize_stats_reports_zero_fallback() {
    let dir = TempDir::new().unwrap();
    // Chains of one element merge without ever producing an invalid
    // fragment, so no token comes from fallback.
    let smiles: Vec<String> = (1..12).map(|n| "C".repeat(n)).collect();
    let corpus = write_corpus(dir.path(), "chains.smi", &smiles);
    let vocab = dir.path().join("v.vocab");
    ok(&["build-vocab", "--corpus", p(&corpus), "--size", "8", "--out", p(&vocab)]);
    let out = ok(&["tokenize", "--vocab", p(&vocab), "--corpus", p(&corpus), "--stats"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# tool: molfrag "), "{text}");
    let rows = csv_rows(&text);
    assert_eq!(
        rows[0],
        ["dataset", "n_molecules", "n_tokens", "fallback_rate", "unk_rate"]
    );
    assert_eq!(column(&rows, "dataset"), ["chains"]);
    assert_eq!(column(&rows, "fallback_rate")[0].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn tokenize_writes_sequences_and_stats_counts_skipped_lines() {
    let dir = TempDir::new().unwrap();
    let mut smiles = generate_corpus(40, 8);
    smiles.insert(3, "C1CC".to_string());
    let corpus = write_corpus(dir.path(), "mixed.smi", &smiles);
    let vocab = dir.path().join("v.vocab");
    ok(&[
        "build-vocab",
        "--corpus",
        p(&corpus),
        "--size",
        "40",
        "--out",
        p(&vocab),
    ]);
    let seqs = dir.path().join("seqs.tsv");
    ok(&[
        "tokenize",
        "--vocab",
        p(&vocab),
        "--corpus",
        p(&corpus),
        "--out",
        p(&seqs),
    ]);
    let text = fs::read_to_string(&seqs).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "line\tsmiles\ttoken_ids\tfallback");
    assert_eq!(body.len(), 41);
    assert!(text.contains("# skipped_lines: 1"));

    let out = ok(&[
        "stats",
        "--vocab",
        p(&vocab),
        "--corpus",
        p(&corpus),
        "--corpus",
        p(&corpus),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# skipped_lines mixed: 1"));
    let rows = csv_rows(&text);
    assert_eq!(column(&rows, "n_molecules"), ["40", "40"]);
}

#[test]
fn exit_codes_and_error_lines() {
    let dir = TempDir::new().unwrap();
    let out = molfrag(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = molfrag(&["build-vocab", "--corpus", "/nonexistent/x.smi", "--out", "/tmp/y"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[io]: /nonexistent/x.smi"), "{err}");
    assert_eq!(err.lines().count(), 1);

    let bad = dir.path().join("bad.vocab");
    fs::write(&bad, "not a vocabulary\n").unwrap();
    let corpus = write_corpus(dir.path(), "c.smi", &generate_corpus(5, 1));
    let out = molfrag(&["tokenize", "--vocab", p(&bad), "--corpus", p(&corpus)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[data]:"));

    let vocab = dir.path().join("v.vocab");
    ok(&[
        "build-vocab",
        "--corpus",
        p(&corpus),
        "--size",
        "20",
        "--out",
        p(&vocab),
    ]);
    let ck = dir.path().join("m.ckpt");
    let out = molfrag(&[
        "pretrain",
        "--vocab",
        p(&vocab),
        "--corpus",
        p(&corpus),
        "--out",
        p(&ck),
        "--set",
        "heads=3",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[config]:"));
    let out = molfrag(&[
        "pretrain",
        "--vocab",
        p(&vocab),
        "--corpus",
        p(&corpus),
        "--out",
        p(&ck),
        "--set",
        "epochs",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

/// Small model settings shared by the training tests.
const SMALL: &[&str] = &[
    "--set",
    "hidden_dim=32",
    "--set",
    "gin_layers=2",
    "--set",
    "transformer_layers=2",
    "--set",
    "heads=4",
    "--set",
    "ffn_dim=64",
    "--set",
    "dropout=0",
    "--set",
    "lr=0.001",
];

#[test]
fn planted_motif_pipeline_has_positive_fidelity_gap() {
    let dir = TempDir::new().unwrap();
    let smiles = generate_corpus(2000, 2024);
    let corpus = write_corpus(dir.path(), "synth.smi", &smiles);
    let vocab = dir.path().join("synth.vocab");
    ok(&[
        "build-vocab",
        "--corpus",
        p(&corpus),
        "--size",
        "200",
        "--out",
        p(&vocab),
    ]);

    let (v, h) = Vocab::read(&fs::read_to_string(&vocab).unwrap()).unwrap();
    let tok = Tokenizer::new(v, h);
    let mols: Vec<_> = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
    let seqs = tok.tokenize_batch(&mols, Exec::Parallel);
    let motif = choose_motif(&seqs, tok.vocab(), 3, 0.3).expect("a motif");
    let labels = motif_labels(&seqs, motif);
    let mut tsv = String::from("smiles\tmotif\n");
    for (s, y) in smiles.iter().zip(&labels) {
        tsv.push_str(&format!("{s}\t{y}\n"));
    }
    let labels_path = dir.path().join("motif.tsv");
    fs::write(&labels_path, tsv).unwrap();

    let pre = dir.path().join("pre.ckpt");
    let log = dir.path().join("pre.csv");
    let mut args = vec![
        "pretrain",
        "--vocab",
        p(&vocab),
        "--corpus",
        p(&corpus),
        "--out",
        p(&pre),
        "--log",
        p(&log),
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "epochs=2", "--seed", "7"]);
    ok(&args);
    let log_rows = csv_rows(&fs::read_to_string(&log).unwrap());
    assert_eq!(log_rows[0], ["step", "loss", "masked_accuracy"]);
    assert_eq!(log_rows.len() - 1, 2 * 2000usize.div_ceil(32));

    let ft = dir.path().join("ft.ckpt");
    let report = dir.path().join("report.csv");
    let split = ["--split-seed", "11", "--fractions", "0.8,0,0.2"];
    let mut args = vec![
        "finetune",
        "--vocab",
        p(&vocab),
        "--checkpoint",
        p(&pre),
        "--labels",
        p(&labels_path),
        "--out",
        p(&ft),
        "--report",
        p(&report),
        "--set",
        "epochs=5",
        "--set",
        "head_epochs=10",
    ];
    args.extend_from_slice(&split);
    ok(&args);
    let rows = csv_rows(&fs::read_to_string(&report).unwrap());
    let test_auc: f64 = rows
        .iter()
        .find(|r| r[0] == "test" && r[2] == "roc_auc")
        .map(|r| r[3].parse().unwrap())
        .expect("test AUC row");
    assert!(test_auc >= 0.95, "test AUC {test_auc}");

    let fid = dir.path().join("fidelity.csv");
    let mut args = vec![
        "analyze",
        "fidelity",
        "--vocab",
        p(&vocab),
        "--checkpoint",
        p(&ft),
        "--labels",
        p(&labels_path),
        "--out",
        p(&fid),
        "--bootstrap",
        "200",
    ];
    args.extend_from_slice(&split);
    ok(&args);
    let text = fs::read_to_string(&fid).unwrap();
    assert!(text.contains("# command: analyze fidelity"));
    let rows = csv_rows(&text);
    let gap: f64 = column(&rows, "gap")[0].parse().unwrap();
    assert!(gap > 0.0, "gap {gap}");

    // Remaining analyses on a slice of the corpus.
    let sample = write_corpus(dir.path(), "sample.smi", &smiles[..150]);
    let attr = dir.path().join("attr.csv");
    ok(&[
        "attribute",
        "--vocab",
        p(&vocab),
        "--checkpoint",
        p(&ft),
        "--corpus",
        p(&sample),
        "--out",
        p(&attr),
    ]);
    let rows = csv_rows(&fs::read_to_string(&attr).unwrap());
    assert_eq!(
        rows[0],
        ["molecule", "line", "token_index", "token_id", "score", "atoms"]
    );
    let n_tokens: usize = seqs[..150].iter().map(|s| s.len()).sum();
    assert_eq!(rows.len() - 1, n_tokens);

    let out = ok(&[
        "analyze",
        "token-space",
        "--vocab",
        p(&vocab),
        "--checkpoint",
        p(&ft),
        "--corpus",
        p(&sample),
    ]);
    let rows = csv_rows(&String::from_utf8(out.stdout).unwrap());
    let spread: f64 = column(&rows, "within_spread")[0].parse().unwrap();
    assert!((0.0..=2.0).contains(&spread));

    let emb = dir.path().join("emb.csv");
    let out = ok(&[
        "analyze",
        "nmi",
        "--vocab",
        p(&vocab),
        "--checkpoint",
        p(&ft),
        "--corpus",
        p(&sample),
        "--k",
        "5",
        "--embeddings",
        p(&emb),
    ]);
    let rows = csv_rows(&String::from_utf8(out.stdout).unwrap());
    let nmi: f64 = column(&rows, "nmi")[0].parse().unwrap();
    assert!((0.0..=1.0).contains(&nmi));
    let rows = csv_rows(&fs::read_to_string(&emb).unwrap());
    assert_eq!(rows[0].len(), 2 + 32 + 2);
    assert_eq!(rows.len() - 1, n_tokens);
}
