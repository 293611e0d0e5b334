#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use las_core::records::to_jsonl;
use las_core::stats::ContingencyTable;
use las_core::synth::agreement_fixture;
use las_core::{PredictionRecord, RecordBatch};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_las-eval")
}

/// Runs the binary with a clean environment for config and logging.
pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("LAS_EVAL_CONFIG")
        .env("RUST_LOG", "off")
        .output()
        .expect("spawn las-eval")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Records with the given example-level effects, leaking ones first.
/// Effect 1 is (full right, input-only wrong), 0 is both right, -1 is the reverse.
pub fn records_from_effects(
    dataset: &str,
    source: &str,
    leaking: &[i8],
    nonleaking: &[i8],
) -> Vec<PredictionRecord> {
    leaking
        .iter()
        .map(|&e| (e, true))
        .chain(nonleaking.iter().map(|&e| (e, false)))
        .enumerate()
        .map(|(i, (e, k))| {
            let (full, input_only) = match e {
                1 => (true, false),
                0 => (true, true),
                -1 => (false, true),
                _ => unreachable!(),
            };
            PredictionRecord::new(
                format!("{dataset}-{source}-{i:04}"),
                source,
                dataset,
                vec!["yes".into(), "no".into(), "maybe".into()],
                i % 3,
            )
            .with_indicators(full, input_only, k)
        })
        .collect()
}

/// Two datasets by two explanation sources, shaped like a model comparison table.
/// Group LAS in percentage points is listed next to each source.
pub fn comparison_fixture() -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    // (dataset, source, leaking effects, nonleaking effects)
    let groups: [(&str, &str, Vec<i8>, Vec<i8>); 4] = [
        // LAS1 = 2/4, LAS0 = 0/6 -> 25.00
        ("CQA", "human", vec![1, 1, 0, 0], vec![1, 0, 0, 0, 0, -1]),
        // LAS1 = -1/5, LAS0 = 2/5 -> 10.00
        ("CQA", "ST-Ra", vec![-1, 0, 0, 0, 0], vec![1, 1, 0, 0, 0]),
        // LAS1 = 1/3, LAS0 = 0/3 -> 16.67
        ("SNLI", "human", vec![1, 0, 0], vec![0, 0, 0]),
        // LAS1 = 0/2, LAS0 = -1/4 -> -12.50
        ("SNLI", "ST-Ra", vec![0, 0], vec![-1, 0, 0, 0]),
    ];
    for (d, src, l, n) in groups {
        out.extend(records_from_effects(d, src, &l, &n));
    }
    out
}

pub fn leakage_table() -> ContingencyTable {
    ContingencyTable::from_counts(vec![0, 1], vec![0, 1], vec![vec![127, 87], vec![45, 341]])
        .unwrap()
}

pub fn las_table() -> ContingencyTable {
    ContingencyTable::from_counts(
        vec![-1, 0, 1],
        vec![-1, 0, 1],
        vec![vec![23, 56, 6], vec![29, 278, 49], vec![5, 104, 50]],
    )
    .unwrap()
}

pub fn agreement_batch() -> RecordBatch {
    agreement_fixture(&leakage_table(), &las_table(), "ST-Ra", "CQA").unwrap()
}

pub fn jsonl(records: &[PredictionRecord]) -> String {
    to_jsonl(records)
}
