mod common;

use common::*;
use las_core::leakage::binary_assignments;
use las_core::synth::{generate_linear, LinearLeakageScenario};
use las_core::{compute_las, PredictionRecord};
use serde_json::Value;
use tempfile::TempDir;

fn json(o: &std::process::Output) -> Value {
    assert!(o.status.success(), "stderr: {}", stderr(o));
    serde_json::from_str(&stdout(o)).unwrap()
}

fn fixture_dir() -> (TempDir, std::path::PathBuf) {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "cmp.jsonl", &jsonl(&comparison_fixture()));
    (dir, p)
}

/// Every value in the TSV rendering equals the JSON value for the same cell.
fn assert_tsv_matches_json(tsv: &str, doc: &Value) {
    let mut table = String::new();
    let mut header: Vec<String> = Vec::new();
    let mut row_idx = 0;
    let mut checked = 0;
    for line in tsv.lines() {
        let cells: Vec<&str> = line.split('\t').collect();
        match cells[0] {
            "#meta" => {
                let want = &doc["meta"][cells[1]];
                compare(cells[2], want);
            }
            "#table" => {
                table = cells[1].to_string();
                header.clear();
                row_idx = 0;
            }
            _ if header.is_empty() => header = cells.iter().map(|c| c.to_string()).collect(),
            _ => {
                let row = &doc["tables"][&table][row_idx];
                for (col, cell) in header.iter().zip(&cells) {
                    compare(cell, &row[col]);
                    checked += 1;
                }
                row_idx += 1;
            }
        }
    }
    assert!(checked > 0);
}

fn compare(tsv: &str, json: &Value) {
    match json {
        Value::Null => assert_eq!(tsv, ""),
        Value::String(s) => assert_eq!(tsv, s),
        Value::Number(n) => {
            let t: f64 = tsv.parse().unwrap();
            assert_eq!(t, n.as_f64().unwrap(), "tsv {tsv} vs json {n}");
        }
        other => panic!("unexpected json cell {other}"),
    }
}

#[test]
fn las_report_passes_through_library_value() {
    let (_dir, p) = fixture_dir();
    let out = run(&["las", "-i", s(&p), "--scale", "unit", "--bootstrap-iters", "200"]);
    let doc = json(&out);
    let rows = doc["tables"]["las"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let records = comparison_fixture();
    for row in rows {
        let group: Vec<PredictionRecord> = records
            .iter()
            .filter(|r| {
                r.dataset_tag == row["dataset"].as_str().unwrap()
                    && r.explanation_source == row["source"].as_str().unwrap()
            })
            .cloned()
            .collect();
        let batch = las_core::RecordBatch::new(group, "t");
        let want = compute_las(&batch, &binary_assignments(&batch).unwrap()).unwrap();
        assert_eq!(row["las"].as_f64().unwrap(), want.las);
        assert_eq!(row["las0"].as_f64().unwrap(), want.las0);
        assert_eq!(row["n1"].as_u64().unwrap(), want.n1);
    }
}

#[test]
fn comparison_table_formatting() {
    let (_dir, p) = fixture_dir();
    let out = run(&["las", "-i", s(&p), "--format", "table", "--bootstrap-iters", "0"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    let header = lines.iter().position(|l| l.trim_start().starts_with("dataset")).unwrap();
    let body: Vec<Vec<&str>> = lines[header + 1..]
        .iter()
        .map(|l| l.split_whitespace().collect())
        .collect();
    let expect = [
        ("CQA", "human", "25.00"),
        ("CQA", "ST-Ra", "10.00"),
        ("SNLI", "human", "16.67"),
        ("SNLI", "ST-Ra", "-12.50"),
    ];
    assert_eq!(body.len(), expect.len());
    for (row, (d, src, las)) in body.iter().zip(expect) {
        assert_eq!((row[0], row[1], row[5]), (d, src, las));
        // no bootstrap: CI cells are blank markers
        assert_eq!(&row[6..9], &["-", "-", "-"]);
    }
    let unit = run(&["las", "-i", s(&p), "--format", "table", "--scale", "unit",
        "--bootstrap-iters", "0"]);
    assert!(stdout(&unit).contains("0.2500"));
}

#[test]
fn json_and_tsv_encode_identical_numbers() {
    let (dir, p) = fixture_dir();
    let linear = generate_linear(&LinearLeakageScenario::reference(3000, 4)).unwrap();
    let lp = write(dir.path(), "lin.jsonl", &jsonl(&linear.records));
    let cases: Vec<Vec<&str>> = vec![
        vec!["las", "-i", s(&p), "--bootstrap-iters", "300", "--seed", "2"],
        vec!["sweep", "-i", s(&lp), "--bins", "2-12"],
        vec!["seeds", "-i", s(&lp)],
    ];
    for args in cases {
        let j = json(&run(&args));
        let mut t = args.clone();
        t.extend(["--format", "tsv"]);
        let tsv = run(&t);
        assert!(tsv.status.success());
        assert_tsv_matches_json(&stdout(&tsv), &j);
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (_dir, p) = fixture_dir();
    let args = ["las", "-i", s(&p), "--bootstrap-iters", "500", "--seed", "11"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["las", "-i", s(&p), "--bootstrap-iters", "500", "--seed", "12"]);
    assert_ne!(a.stdout, c.stdout);
}

fn assert_diagnostic(out: &std::process::Output, code: i32, kind: &str, needle: &str) {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", stderr(out));
    let err = stderr(out);
    let line = err.lines().last().unwrap();
    assert!(
        line.starts_with(&format!("error: kind={kind} code={code} message=\"")),
        "{line}"
    );
    assert!(line.contains(needle), "{line}");
}

#[test]
fn exit_codes_follow_taxonomy() {
    let dir = TempDir::new().unwrap();

    // usage
    assert_diagnostic(&run(&["las"]), 1, "usage", "no input");
    assert_diagnostic(&run(&["las", "--level", "1.5", "-i", "x"]), 1, "usage", "level");
    assert_diagnostic(&run(&["frobnicate"]), 1, "usage", "frobnicate");
    assert_diagnostic(&run(&["presets", "--preset", "nope"]), 1, "usage", "nope");

    // validation
    let missing = dir.path().join("absent.jsonl");
    assert_diagnostic(&run(&["las", "-i", s(&missing)]), 2, "io", "absent.jsonl");
    let mut text = jsonl(&comparison_fixture());
    text.push_str("{\"example_id\":\"bad\",\"explanation_source\":\"x\",\"dataset_tag\":\"CQA\",\"choices\":[\"a\",\"b\"],\"model_output_index\":5}\n");
    let bad = write(dir.path(), "bad.jsonl", &text);
    let v = run(&["validate", "-i", s(&bad)]);
    assert_diagnostic(&v, 2, "validation", "1 invalid record");
    let doc: Value = serde_json::from_str(&stdout(&v)).unwrap();
    assert_eq!(doc["tables"]["errors"][0]["field"], "model_output_index");
    assert_diagnostic(&run(&["las", "-i", s(&bad), "--strict"]), 2, "validation", "line 33");
    // lenient mode skips the bad line
    assert!(run(&["las", "-i", s(&bad), "--bootstrap-iters", "0"]).status.success());

    // statistical
    let one_group = records_from_effects("CQA", "human", &[1, 0, 0], &[]);
    let p = write(dir.path(), "leaky.jsonl", &jsonl(&one_group));
    assert_diagnostic(&run(&["las", "-i", s(&p)]), 3, "statistical", "nonleaking group is empty");
}

#[test]
fn validate_accepts_clean_files_and_flags_cross_file_duplicates() {
    let (dir, p) = fixture_dir();
    assert_eq!(run(&["validate", "-i", s(&p)]).status.code(), Some(0));
    let copy = write(dir.path(), "copy.jsonl", &jsonl(&comparison_fixture()[..2]));
    let out = run(&["validate", "-i", s(&p), "-i", s(&copy)]);
    assert_eq!(out.status.code(), Some(2));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["tables"]["files"][1]["errors"], 2);
}

#[test]
fn sweep_requires_probabilities() {
    let (_dir, p) = fixture_dir();
    let out = run(&["sweep", "-i", s(&p)]);
    assert_diagnostic(&out, 2, "validation", "sim_expl_only_prob nor sim_expl_only_score");
}

#[test]
fn sweep_header_is_frozen() {
    let dir = TempDir::new().unwrap();
    let linear = generate_linear(&LinearLeakageScenario::reference(2000, 9)).unwrap();
    let p = write(dir.path(), "lin.jsonl", &jsonl(&linear.records));
    let out = run(&["sweep", "-i", s(&p), "--bins", "2-4", "--format", "tsv"]);
    assert!(out.status.success());
    let got: Vec<String> = stdout(&out)
        .lines()
        .filter(|l| l.starts_with('#') || l.starts_with("dataset"))
        .map(|l| {
            // meta values vary with input; keep only their keys
            let parts: Vec<&str> = l.split('\t').collect();
            if parts[0] == "#meta" {
                format!("#meta\t{}", parts[1])
            } else {
                l.to_string()
            }
        })
        .collect();
    let golden = include_str!("golden/sweep_header.tsv");
    assert_eq!(got.join("\n"), golden.trim_end());
}

#[test]
fn sweep_reports_small_spread_on_linear_scenario() {
    let dir = TempDir::new().unwrap();
    let linear = generate_linear(&LinearLeakageScenario::reference(50_000, 21)).unwrap();
    let p = write(dir.path(), "lin.jsonl", &jsonl(&linear.records));
    let doc = json(&run(&["sweep", "-i", s(&p)]));
    let summary = &doc["tables"]["summary"][0];
    assert!(summary["spread"].as_f64().unwrap() < 1.0, "{summary}");
    assert_eq!(doc["tables"]["curve"].as_array().unwrap().len(), 99);

    // an external fit set changes the calibration but not the row layout
    let other = generate_linear(&LinearLeakageScenario::reference(5_000, 22)).unwrap();
    let q = write(dir.path(), "fit.jsonl", &jsonl(&other.records));
    let ext = json(&run(&["sweep", "-i", s(&p), "--platt-fit", s(&q), "--bins", "5"]));
    assert_eq!(ext["meta"]["platt_fit_set"], s(&q));
    assert_ne!(ext["tables"]["summary"][0]["platt_a"], summary["platt_a"]);
}

#[test]
fn agreement_fixture_reproduces_tables() {
    let dir = TempDir::new().unwrap();
    let mut batch = agreement_batch();
    // expert labels on 150 records, 108 of them matching gold
    for (i, r) in batch.records.iter_mut().take(150).enumerate() {
        r.gold_label_index = Some(0);
        r.extra.insert(
            "expert_label_index".into(),
            Value::from(if i < 108 { 0 } else { 1 }),
        );
    }
    let p = write(dir.path(), "agree.jsonl", &jsonl(&batch.records));
    let doc = json(&run(&["agree", "-i", s(&p)]));

    let corr = doc["tables"]["correlation"].as_array().unwrap();
    let leak = leakage_table().spearman().unwrap();
    assert_eq!(corr[0]["variable"], "leakage");
    assert_eq!(corr[0]["rho"].as_f64().unwrap(), leak.rho);
    assert_eq!(corr[1]["variable"], "example_las");
    let rho = corr[1]["rho"].as_f64().unwrap();
    assert!((rho - 0.29).abs() <= 0.005, "{rho}");
    assert!(corr[1]["p_value"].as_f64().unwrap() < 1e-12);

    let expected = las_table().row_normalize().unwrap();
    let rows = doc["tables"]["las_normalized"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for (row, want) in rows.iter().zip(&expected) {
        for (col, w) in ["human_-1", "human_0", "human_1"].iter().zip(want) {
            assert_eq!(row[*col].as_f64().unwrap(), *w);
        }
    }
    // first row as printed in the comparison table
    let first: Vec<String> = expected[0].iter().map(|v| format!("{v:.3}")).collect();
    assert_eq!(first, ["0.271", "0.659", "0.071"]);
    assert_eq!(doc["tables"]["leakage_counts"][1]["human_1"], 341);

    let expert = &doc["tables"]["expert_accuracy"][0];
    assert_eq!(expert["n"], 150);
    assert!((expert["accuracy"].as_f64().unwrap() - 72.0).abs() < 1e-9);
    assert!((expert["ci_halfwidth"].as_f64().unwrap() - 7.19).abs() < 0.05);

    let drift = &doc["tables"]["drift"][0];
    let (m, h) = (
        drift["model_acc_full"].as_f64().unwrap(),
        drift["human_acc_full"].as_f64().unwrap(),
    );
    assert!((drift["drift_pp"].as_f64().unwrap() - (m - h).abs()).abs() < 1e-9);
}

#[test]
fn agree_requires_human_fields() {
    let (_dir, p) = fixture_dir();
    assert_diagnostic(&run(&["agree", "-i", s(&p)]), 2, "validation", "human simulation fields");
}

fn rated(ratings: &[(bool, bool, bool, f64)]) -> Vec<PredictionRecord> {
    ratings
        .iter()
        .enumerate()
        .map(|(i, &(f, x, e, rating))| {
            let mut r = PredictionRecord::new(
                format!("r{i}"),
                "human",
                "CQA",
                vec!["a".into(), "b".into()],
                0,
            )
            .with_indicators(f, x, e);
            r.human_rating = Some(rating);
            r
        })
        .collect()
}

#[test]
fn regression_slope_is_difference_of_group_means() {
    let dir = TempDir::new().unwrap();
    let records = rated(&[
        (true, true, true, 4.0),
        (true, false, true, 5.0),
        (true, true, false, 4.0),
        (true, false, true, 3.0),
        (false, true, false, 2.0),
        (false, false, false, 3.0),
        (false, true, true, 1.0),
    ]);
    let p = write(dir.path(), "rated.jsonl", &jsonl(&records));
    let doc = json(&run(&["regress", "-i", s(&p)]));
    let rows = doc["tables"]["regression"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["predictor"].as_str().unwrap()).collect();
    assert_eq!(names, ["full", "input_only", "expl_only"]);
    // full: mean 4 when right, 2 when wrong
    assert!((rows[0]["beta"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(rows[0]["mean_when_1"].as_f64().unwrap(), 4.0);
    // expl_only: ratings {4,5,3,1} vs {4,2,3}
    assert!((rows[2]["beta"].as_f64().unwrap() - (13.0 / 4.0 - 3.0)).abs() < 1e-12);
    assert_eq!(doc["tables"]["rating_by_las"].as_array().unwrap().len(), 6);

    let flat = rated(&[
        (true, true, true, 3.0),
        (false, true, false, 3.0),
        (true, false, true, 3.0),
        (false, false, false, 3.0),
    ]);
    let q = write(dir.path(), "flat.jsonl", &jsonl(&flat));
    assert_diagnostic(&run(&["regress", "-i", s(&q)]), 3, "statistical", "y is constant");
}

#[test]
fn bleu_on_line_aligned_files() {
    let dir = TempDir::new().unwrap();
    let h = write(
        dir.path(),
        "hyp.txt",
        "the cat sat on the red mat\nthere is a dog in the garden today\nhe reads books\n",
    );
    let r = write(
        dir.path(),
        "ref.txt",
        "the cat sat on the mat\na dog is in the garden\nshe reads many books every day\n",
    );
    let doc = json(&run(&["bleu", "--hyp", s(&h), "--ref", s(&r)]));
    let row = &doc["tables"]["bleu"][0];
    assert!((row["bleu"].as_f64().unwrap() - 40.493203472863385).abs() < 1e-6);
    assert_eq!(row["precision_1"].as_f64().unwrap(), 14.0 / 18.0);

    let short = write(dir.path(), "short.txt", "one line\n");
    assert_diagnostic(&run(&["bleu", "--hyp", s(&short), "--ref", s(&r)]), 2, "validation", "hypotheses");
    assert_diagnostic(&run(&["bleu", "--hyp", s(&h)]), 1, "usage", "--ref");
}

#[test]
fn synth_output_round_trips_through_validate_and_las() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("syn.jsonl");
    let out = run(&["synth", "--n", "20000", "--seed", "5", "-o", s(&out_path)]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("analytic_las=0.3"));
    assert_eq!(run(&["validate", "-i", s(&out_path)]).status.code(), Some(0));
    let doc = json(&run(&["las", "-i", s(&out_path), "--scale", "unit", "--bootstrap-iters", "0"]));
    let las = doc["tables"]["las"][0]["las"].as_f64().unwrap();
    assert!((las - 0.3).abs() < 0.03, "{las}");

    let custom = run(&["synth", "--scenario", "custom", "--n", "10", "--p-leak", "0.5"]);
    assert_diagnostic(&custom, 1, "usage", "p_base");
    let linear = run(&["synth", "--scenario", "linear", "--n", "10", "--p-leak", "0.5"]);
    assert_diagnostic(&linear, 1, "usage", "p_leak");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let (dir, p) = fixture_dir();
    let cfg = write(
        dir.path(),
        "run.toml",
        "input = \"cmp.jsonl\"\nformat = \"tsv\"\nbootstrap_iters = 50\nscale = \"unit\"\n",
    );
    let out = std::process::Command::new(bin())
        .args(["las"])
        .env("LAS_EVAL_CONFIG", &cfg)
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("#meta\tbootstrap_iters\t50"));
    assert!(text.contains("#meta\tscale\tunit"));

    let flagged = run(&["las", "--config", s(&cfg), "--format", "json", "-i", s(&p)]);
    let doc = json(&flagged);
    assert_eq!(doc["meta"]["bootstrap_iters"], 50);

    let bad = write(dir.path(), "bad.toml", "seeed = 3\n");
    assert_diagnostic(&run(&["las", "--config", s(&bad)]), 1, "usage", "seeed");
}

#[test]
fn shipped_presets_file_matches_built_in_presets() {
    let text = include_str!("../presets.toml");
    let table: toml::Table = toml::from_str(text).unwrap();
    let names: Vec<&String> = table.keys().collect();
    assert_eq!(names.len(), las_core::objectives::PRESET_NAMES.len());
    for (name, value) in table {
        let mut v = value.as_table().unwrap().clone();
        v.insert("name".into(), toml::Value::String(name.clone()));
        let from_file: las_core::objectives::Preset = v.try_into().unwrap();
        assert_eq!(from_file, las_core::objectives::preset(&name).unwrap());
    }
    let doc = json(&run(&["presets", "--preset", "paper-rl"]));
    assert_eq!(doc["tables"]["presets"][0]["explanation_weight"], 0.95);
}

#[test]
fn seeds_summary_orders_sources_by_mean() {
    let dir = TempDir::new().unwrap();
    let mut records = Vec::new();
    for (seed, effects) in [("1", [1i8, 1, 0]), ("2", [1, 0, 0])] {
        for (src, flip) in [("low", true), ("high", false)] {
            let e: Vec<i8> = effects.iter().map(|&x| if flip { -x } else { x }).collect();
            let mut group = records_from_effects("CQA", &format!("{src}{seed}"), &e, &[0, 0]);
            for r in &mut group {
                r.explanation_source = src.into();
                r.seed_tag = Some(seed.into());
            }
            records.extend(group);
        }
    }
    let p = write(dir.path(), "seeds.jsonl", &jsonl(&records));
    let doc = json(&run(&["seeds", "-i", s(&p), "--scale", "unit"]));
    let summary = doc["tables"]["summary"].as_array().unwrap();
    assert_eq!(summary[0]["source"], "high");
    assert_eq!(summary[0]["seeds"], 2);
    // high: LAS per seed is (2/3)/2 and (1/3)/2
    assert!((summary[0]["mean"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert!((summary[0]["range"].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-12);
    assert_eq!(doc["tables"]["per_seed"].as_array().unwrap().len(), 4);
}
