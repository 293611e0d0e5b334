use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use las_core::las::{example_las, las_from_items, las_items, sensitivity_sweep};
use las_core::leakage::{
    binary_assignments, binary_leakage, calibrated_probs, fit_on, stored_probs, Calibration,
    LeakageError, PlattParams,
};
use las_core::objectives::{preset, PRESET_NAMES};
use las_core::records::{parse_records, to_jsonl, ParseError, RecordBatch, Strictness};
use las_core::stats::{
    aggregate_seeds, bootstrap_las, contingency, mean_ci, ols_simple, pragmatic_drift,
    sort_by_mean, wald_ci, ContingencyTable, SeedReport, StatsError,
};
use las_core::synth::{
    analytic_las, generate, generate_linear, LinearLeakageScenario, SyntheticScenario,
    HUMAN_EXPL_ONLY_FIELD, HUMAN_FULL_FIELD, HUMAN_INPUT_ONLY_FIELD,
};
use las_core::textmetrics::{corpus_bleu, tokenize, MAX_ORDER};
use las_core::{compute_las, PredictionRecord, Scale};
use serde_json::Value;

use crate::config::{BinSpec, RunConfig, ScenarioKind};
use crate::output::{Cell, Document, Table};
use crate::{CliError, Command, Rendered};

/// Extra record field holding the expert's own label for the example.
pub const EXPERT_LABEL_FIELD: &str = "expert_label_index";

pub const DEFAULT_SWEEP_BINS: BinSpec = BinSpec { min: 2, max: 100 };
pub const DEFAULT_SYNTH_N: usize = 1000;

pub const LAS_COLUMNS: [&str; 14] = [
    "dataset",
    "source",
    "n",
    "n0",
    "n1",
    "las",
    "ci_lo",
    "ci_hi",
    "ci_halfwidth",
    "las0",
    "las1",
    "acc_full",
    "acc_input_only",
    "leakage_rate",
];

pub const SWEEP_CURVE_COLUMNS: [&str; 5] = ["dataset", "source", "n_bins", "las", "nonempty_bins"];

pub const SWEEP_SUMMARY_COLUMNS: [&str; 8] = [
    "dataset", "source", "n", "las_min", "las_max", "spread", "platt_a", "platt_b",
];

pub fn dispatch(command: &Command, cfg: &RunConfig) -> Result<Rendered, CliError> {
    if cfg.bins.is_some() && !matches!(command, Command::Sweep { .. }) {
        log::warn!("--bins has no effect on `{}`", command.name());
    }
    let (mut doc, failure) = match command {
        Command::Validate => cmd_validate(cfg)?,
        Command::Las => (cmd_las(cfg)?, None),
        Command::Sweep { .. } => (cmd_sweep(cfg)?, None),
        Command::Agree => (cmd_agree(cfg)?, None),
        Command::Regress => (cmd_regress(cfg)?, None),
        Command::Bleu { .. } => (cmd_bleu(cfg)?, None),
        Command::Seeds => (cmd_seeds(cfg)?, None),
        Command::Presets => (cmd_presets(cfg)?, None),
        Command::Synth { .. } => return cmd_synth(cfg),
    };
    if let Some(name) = &cfg.preset {
        doc.meta("preset", name.as_str());
    }
    Ok(Rendered {
        body: doc.render(cfg.format)?,
        notes: Vec::new(),
        failure,
    })
}

fn value_cell(v: f64, scale: Scale) -> Cell {
    match scale {
        Scale::Unit => Cell::Prob(v),
        Scale::PercentagePoints => Cell::Pp(v),
    }
}

fn scale_name(scale: Scale) -> &'static str {
    match scale {
        Scale::Unit => "unit",
        Scale::PercentagePoints => "pp",
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Reads one record file. Lenient mode drops invalid lines with a warning.
pub fn load_file(path: &Path, strict: bool) -> Result<RecordBatch, CliError> {
    let name = path.display().to_string();
    let strictness = if strict {
        Strictness::Strict
    } else {
        Strictness::Lenient
    };
    let outcome = parse_records(open(path)?, &name, strictness).map_err(|e| match e {
        ParseError::Io(io) => CliError::Io(format!("{name}: {io}")),
        other => CliError::Validation(format!("{name}: {other}")),
    })?;
    for e in &outcome.errors {
        log::warn!("{name}: skipping {e}");
    }
    Ok(outcome.batch)
}

/// Reads and concatenates every configured input.
pub fn load_records(cfg: &RunConfig) -> Result<RecordBatch, CliError> {
    if cfg.inputs.is_empty() {
        return Err(CliError::Usage("no input files (use --input)".into()));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut names = Vec::new();
    for path in &cfg.inputs {
        let batch = load_file(path, cfg.strict)?;
        names.push(batch.provenance.clone());
        for r in batch.records {
            if !seen.insert(r.example_id.clone()) {
                let msg = format!(
                    "{}: example_id `{}` already appeared in an earlier file",
                    path.display(),
                    r.example_id
                );
                if cfg.strict {
                    return Err(CliError::Validation(msg));
                }
                log::warn!("skipping: {msg}");
                continue;
            }
            records.push(r);
        }
    }
    if records.is_empty() {
        return Err(CliError::Validation("no valid records in input".into()));
    }
    Ok(RecordBatch::new(records, names.join(",")))
}

fn run_meta(doc: &mut Document, batch: &RecordBatch, cfg: &RunConfig) {
    doc.meta("records", batch.len());
    doc.meta("scale", scale_name(cfg.scale));
}

fn cmd_validate(cfg: &RunConfig) -> Result<(Document, Option<CliError>), CliError> {
    if cfg.inputs.is_empty() {
        return Err(CliError::Usage("no input files (use --input)".into()));
    }
    let mut files = Table::new("files", &["path", "records", "errors"]);
    let mut errors = Table::new("errors", &["path", "line", "field", "message"]);
    let mut seen = HashSet::new();
    let mut total_errors = 0usize;
    for path in &cfg.inputs {
        let name = path.display().to_string();
        let outcome = parse_records(open(path)?, &name, Strictness::Lenient)
            .map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        let mut rows: Vec<(usize, String, String)> = outcome
            .errors
            .iter()
            .map(|e| (e.line, e.field.clone(), e.message.clone()))
            .collect();
        let mut valid = 0usize;
        for r in &outcome.batch.records {
            if seen.insert(r.example_id.clone()) {
                valid += 1;
            } else {
                rows.push((
                    0,
                    "example_id".into(),
                    format!("`{}` already appeared in an earlier file", r.example_id),
                ));
            }
        }
        total_errors += rows.len();
        files.push(vec![name.as_str().into(), valid.into(), rows.len().into()]);
        for (line, field, message) in rows {
            errors.push(vec![
                name.as_str().into(),
                line.into(),
                field.into(),
                message.into(),
            ]);
        }
    }
    let mut doc = Document::new("validate");
    doc.meta("errors", total_errors);
    doc.tables.push(files);
    doc.tables.push(errors);
    let failure = (total_errors > 0).then(|| {
        CliError::Validation(format!(
            "{total_errors} invalid record(s) across {} file(s)",
            cfg.inputs.len()
        ))
    });
    Ok((doc, failure))
}

/// LAS and accuracies per (dataset, explanation source), with bootstrap CI.
pub fn cmd_las(cfg: &RunConfig) -> Result<Document, CliError> {
    let batch = load_records(cfg)?;
    let factor = cfg.scale.factor();
    let mut doc = Document::new("las");
    run_meta(&mut doc, &batch, cfg);
    doc.meta("bootstrap_iters", cfg.bootstrap.iterations);
    doc.meta("level", Cell::Prob(cfg.bootstrap.level));
    doc.meta("seed", cfg.bootstrap.seed);
    let mut table = Table::new("las", &LAS_COLUMNS);
    for ((dataset, source), group) in batch.group_by_source() {
        let ctx = format!("{dataset}/{source}");
        let wrap = |e: CliError| e.context(&ctx);
        let assignments = binary_assignments(&group).map_err(|e| wrap(e.into()))?;
        let items = las_items(&group, &assignments).map_err(|e| wrap(e.into()))?;
        let report = las_from_items(&items)
            .map_err(|e| wrap(e.into()))?
            .in_scale(cfg.scale);
        let ci = if cfg.bootstrap.iterations > 0 {
            let r = bootstrap_las(&items, &cfg.bootstrap).map_err(|e| wrap(e.into()))?;
            if r.redraws > 0 {
                log::info!("{ctx}: {} bootstrap resamples redrawn", r.redraws);
            }
            Some(r.scaled(factor))
        } else {
            None
        };
        let v = |x: f64| value_cell(x, cfg.scale);
        table.push(vec![
            dataset.as_str().into(),
            source.as_str().into(),
            report.n().into(),
            report.n0.into(),
            report.n1.into(),
            v(report.las),
            ci.map_or(Cell::Empty, |c| v(c.lo)),
            ci.map_or(Cell::Empty, |c| v(c.hi)),
            ci.map_or(Cell::Empty, |c| v(c.halfwidth())),
            v(report.las0),
            v(report.las1),
            v(report.acc_full),
            v(report.acc_input_only),
            v(report.acc_expl_only),
        ]);
    }
    doc.tables.push(table);
    Ok(doc)
}

fn advise_missing_probability(e: LeakageError) -> CliError {
    match e {
        LeakageError::MissingProbability(id) => CliError::Validation(format!(
            "record `{id}` has neither sim_expl_only_prob nor sim_expl_only_score; \
             the sweep needs a leakage probability or score on every record"
        )),
        other => other.into(),
    }
}

/// Binned LAS over a range of bin counts per (dataset, explanation source).
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Document, CliError> {
    let batch = load_records(cfg)?;
    let bins = cfg.bins.unwrap_or(DEFAULT_SWEEP_BINS);
    let external_fit = match (cfg.calibration, &cfg.platt_fit) {
        (Calibration::Platt, Some(path)) => {
            let fit_set = load_file(path, cfg.strict)?;
            log::info!("fitting calibration on {} ({} records)", path.display(), fit_set.len());
            Some(fit_on(&fit_set).map_err(|e| {
                advise_missing_probability(e).context(&path.display().to_string())
            })?)
        }
        (Calibration::None, Some(_)) => {
            log::warn!("--platt-fit is ignored with --calibration none");
            None
        }
        _ => None,
    };
    let mut doc = Document::new("sweep");
    run_meta(&mut doc, &batch, cfg);
    doc.meta("calibration", match cfg.calibration {
        Calibration::Platt => "platt",
        Calibration::None => "none",
    });
    doc.meta(
        "platt_fit_set",
        match &cfg.platt_fit {
            Some(p) if cfg.calibration == Calibration::Platt => p.display().to_string(),
            _ => "evaluated batch".to_string(),
        },
    );
    doc.meta("bins_min", bins.min);
    doc.meta("bins_max", bins.max);
    let mut curve = Table::new("curve", &SWEEP_CURVE_COLUMNS);
    let mut summary = Table::new("summary", &SWEEP_SUMMARY_COLUMNS);
    let v = |x: f64| value_cell(x * cfg.scale.factor(), cfg.scale);
    for ((dataset, source), group) in batch.group_by_source() {
        let ctx = format!("{dataset}/{source}");
        let (probs, params): (Vec<f64>, Option<PlattParams>) = match cfg.calibration {
            Calibration::Platt => {
                let params = match external_fit {
                    Some(p) => p,
                    None => fit_on(&group)
                        .map_err(|e| advise_missing_probability(e).context(&ctx))?,
                };
                let probs = calibrated_probs(&group, &params)
                    .map_err(|e| advise_missing_probability(e).context(&ctx))?;
                (probs, Some(params))
            }
            Calibration::None => (
                stored_probs(&group).map_err(|e| advise_missing_probability(e).context(&ctx))?,
                None,
            ),
        };
        let result = sensitivity_sweep(&group, &probs, bins.range())
            .map_err(|e| CliError::from(e).context(&ctx))?;
        for e in &result.entries {
            curve.push(vec![
                dataset.as_str().into(),
                source.as_str().into(),
                e.n_bins.into(),
                v(e.las_value),
                e.n_nonempty_bins.into(),
            ]);
        }
        let (lo, hi) = result
            .entries
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                (lo.min(e.las_value), hi.max(e.las_value))
            });
        summary.push(vec![
            dataset.as_str().into(),
            source.as_str().into(),
            group.len().into(),
            v(lo),
            v(hi),
            v(result.spread()),
            params.map_or(Cell::Empty, |p| Cell::Prob(p.a)),
            params.map_or(Cell::Empty, |p| Cell::Prob(p.b)),
        ]);
    }
    doc.tables.push(curve);
    doc.tables.push(summary);
    Ok(doc)
}

fn extra_indicator(record: &PredictionRecord, field: &str) -> Result<Option<bool>, CliError> {
    match record.extra.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Bool(b)) => Ok(Some(*b)),
        Some(Value::Number(n)) if n.as_u64() == Some(0) => Ok(Some(false)),
        Some(Value::Number(n)) if n.as_u64() == Some(1) => Ok(Some(true)),
        Some(other) => Err(CliError::Validation(format!(
            "record `{}`: {field} must be 0/1 or a boolean, got {other}",
            record.example_id
        ))),
    }
}

struct Annotated {
    dataset: String,
    source: String,
    model_leak: i64,
    human_leak: i64,
    model_effect: i64,
    human_effect: i64,
    model_full: bool,
    human_full: bool,
}

fn annotate(r: &PredictionRecord) -> Result<Option<Annotated>, CliError> {
    let fields = [HUMAN_FULL_FIELD, HUMAN_INPUT_ONLY_FIELD, HUMAN_EXPL_ONLY_FIELD];
    let values = fields
        .iter()
        .map(|f| extra_indicator(r, f))
        .collect::<Result<Vec<_>, _>>()?;
    match values.as_slice() {
        [None, None, None] => Ok(None),
        [Some(hf), Some(hi), Some(he)] => {
            let ctx = |e: CliError| e.context(&r.example_id);
            Ok(Some(Annotated {
                dataset: r.dataset_tag.clone(),
                source: r.explanation_source.clone(),
                model_leak: i64::from(binary_leakage(r).map_err(|e| ctx(e.into()))?),
                human_leak: i64::from(*he),
                model_effect: i64::from(example_las(r).map_err(|e| ctx(e.into()))?),
                human_effect: i64::from(*hf) - i64::from(*hi),
                model_full: r.full_correct().map_err(|e| ctx(CliError::Validation(e.to_string())))?,
                human_full: *hf,
            }))
        }
        _ => Err(CliError::Validation(format!(
            "record `{}` carries only some of {}",
            r.example_id,
            fields.join(", ")
        ))),
    }
}

fn count_tables(name: &str, t: &ContingencyTable) -> Result<(Table, Table), CliError> {
    let mut cols = vec!["model".to_string()];
    cols.extend(t.col_labels.iter().map(|c| format!("human_{c}")));
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut counts = Table::new(&format!("{name}_counts"), &cols);
    let mut normalized = Table::new(&format!("{name}_normalized"), &cols);
    let rows = t.row_normalize().map_err(|e| match e {
        StatsError::ZeroRow(label) => CliError::Statistical(format!(
            "{name}: model label {label} never occurs; row-normalized table undefined"
        )),
        other => other.into(),
    })?;
    for ((label, row), norm) in t.row_labels.iter().zip(&t.counts).zip(rows) {
        let mut c = vec![Cell::Int(*label)];
        c.extend(row.iter().map(|&k| Cell::from(k)));
        counts.push(c);
        let mut n = vec![Cell::Int(*label)];
        n.extend(norm.into_iter().map(Cell::Prob));
        normalized.push(n);
    }
    Ok((counts, normalized))
}

/// Model-vs-human agreement: contingency tables, Spearman correlations,
/// pragmatic drift and expert accuracy.
pub fn cmd_agree(cfg: &RunConfig) -> Result<Document, CliError> {
    let batch = load_records(cfg)?;
    let annotated: Vec<Annotated> = batch
        .records
        .iter()
        .map(annotate)
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    if annotated.is_empty() {
        return Err(CliError::Validation(format!(
            "no records carry human simulation fields ({HUMAN_FULL_FIELD}, \
             {HUMAN_INPUT_ONLY_FIELD}, {HUMAN_EXPL_ONLY_FIELD})"
        )));
    }
    let col = |f: fn(&Annotated) -> i64| annotated.iter().map(f).collect::<Vec<i64>>();
    let leakage = contingency(&col(|a| a.model_leak), &col(|a| a.human_leak), &[0, 1], &[0, 1])?;
    let las = contingency(
        &col(|a| a.model_effect),
        &col(|a| a.human_effect),
        &[-1, 0, 1],
        &[-1, 0, 1],
    )?;

    let mut doc = Document::new("agree");
    run_meta(&mut doc, &batch, cfg);
    doc.meta("annotated", annotated.len());

    let mut corr = Table::new("correlation", &["variable", "rho", "p_value", "n"]);
    for (name, t) in [("leakage", &leakage), ("example_las", &las)] {
        let c = t
            .spearman()
            .map_err(|e| CliError::from(e).context(name))?;
        corr.push(vec![name.into(), Cell::Prob(c.rho), Cell::PValue(c.p_value), c.n.into()]);
    }
    let (lc, ln) = count_tables("leakage", &leakage)?;
    let (ec, en) = count_tables("las", &las)?;
    doc.tables.extend([corr, lc, ln, ec, en]);

    let mut drift = Table::new(
        "drift",
        &["dataset", "source", "n", "model_acc_full", "human_acc_full", "drift_pp"],
    );
    let mut groups: Vec<((&str, &str), Vec<&Annotated>)> = Vec::new();
    for a in &annotated {
        let key = (a.dataset.as_str(), a.source.as_str());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(a),
            None => groups.push((key, vec![a])),
        }
    }
    let mut drifts = Vec::new();
    for ((dataset, source), members) in &groups {
        let n = members.len() as f64;
        let model = members.iter().filter(|a| a.model_full).count() as f64 / n;
        let human = members.iter().filter(|a| a.human_full).count() as f64 / n;
        let d = pragmatic_drift(model, human);
        drifts.push(d);
        drift.push(vec![
            (*dataset).into(),
            (*source).into(),
            members.len().into(),
            value_cell(model * cfg.scale.factor(), cfg.scale),
            value_cell(human * cfg.scale.factor(), cfg.scale),
            Cell::Pp(d),
        ]);
    }
    doc.meta(
        "mean_drift_pp",
        Cell::Pp(drifts.iter().sum::<f64>() / drifts.len() as f64),
    );
    doc.tables.push(drift);

    if let Some(t) = expert_accuracy(&batch, cfg)? {
        doc.tables.push(t);
    }
    Ok(doc)
}

fn expert_accuracy(batch: &RecordBatch, cfg: &RunConfig) -> Result<Option<Table>, CliError> {
    let mut per_dataset: Vec<(String, u64, u64)> = Vec::new();
    for r in &batch.records {
        let Some(v) = r.extra.get(EXPERT_LABEL_FIELD) else {
            continue;
        };
        let label = v.as_u64().ok_or_else(|| {
            CliError::Validation(format!(
                "record `{}`: {EXPERT_LABEL_FIELD} must be a non-negative integer",
                r.example_id
            ))
        })?;
        let Some(gold) = r.gold_label_index else {
            log::warn!("record `{}` has {EXPERT_LABEL_FIELD} but no gold label", r.example_id);
            continue;
        };
        let hit = u64::from(label == gold as u64);
        match per_dataset.iter_mut().find(|(d, _, _)| *d == r.dataset_tag) {
            Some((_, n, k)) => {
                *n += 1;
                *k += hit;
            }
            None => per_dataset.push((r.dataset_tag.clone(), 1, hit)),
        }
    }
    if per_dataset.is_empty() {
        return Ok(None);
    }
    let f = cfg.scale.factor();
    let mut t = Table::new("expert_accuracy", &["dataset", "n", "accuracy", "ci_halfwidth"]);
    for (dataset, n, k) in per_dataset {
        let acc = k as f64 / n as f64;
        let w = wald_ci(acc, n, cfg.bootstrap.level)?;
        t.push(vec![
            dataset.into(),
            n.into(),
            value_cell(acc * f, cfg.scale),
            value_cell(w.halfwidth * f, cfg.scale),
        ]);
    }
    Ok(Some(t))
}

fn mean_cells(values: &[f64], level: f64) -> Result<(Cell, Cell), CliError> {
    match values.len() {
        0 => Ok((Cell::Empty, Cell::Empty)),
        1 => Ok((Cell::Prob(values[0]), Cell::Empty)),
        _ => {
            let m = mean_ci(values, level)?;
            Ok((Cell::Prob(m.mean), Cell::Prob(m.halfwidth)))
        }
    }
}

/// Human ratings regressed on each simulator indicator, per dataset.
pub fn cmd_regress(cfg: &RunConfig) -> Result<Document, CliError> {
    let batch = load_records(cfg)?;
    let rated: Vec<&PredictionRecord> = batch
        .records
        .iter()
        .filter(|r| r.human_rating.is_some())
        .collect();
    if rated.is_empty() {
        return Err(CliError::Validation("no records carry human_rating".into()));
    }
    let mut datasets: Vec<&str> = Vec::new();
    for r in &rated {
        if !datasets.contains(&r.dataset_tag.as_str()) {
            datasets.push(&r.dataset_tag);
        }
    }
    let level = cfg.bootstrap.level;
    let mut regression = Table::new(
        "regression",
        &[
            "dataset",
            "predictor",
            "n",
            "mean_when_0",
            "ci_when_0",
            "mean_when_1",
            "ci_when_1",
            "beta",
            "std_error",
            "p_value",
        ],
    );
    let mut by_las = Table::new(
        "rating_by_las",
        &["dataset", "leaking", "example_las", "n", "mean_rating", "ci_halfwidth"],
    );
    type Indicator = fn(&PredictionRecord) -> Result<bool, las_core::records::RecordError>;
    let predictors: [(&str, Indicator); 3] = [
        ("full", PredictionRecord::full_correct),
        ("input_only", PredictionRecord::input_only_correct),
        ("expl_only", PredictionRecord::expl_only_correct),
    ];
    for dataset in datasets {
        let rows: Vec<&PredictionRecord> = rated
            .iter()
            .copied()
            .filter(|r| r.dataset_tag == dataset)
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r.human_rating.unwrap_or_default()).collect();
        for (name, indicator) in predictors {
            let ctx = format!("{dataset}/{name}");
            let x = rows
                .iter()
                .map(|r| indicator(r).map(|b| if b { 1.0 } else { 0.0 }))
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| CliError::Validation(format!("{ctx}: {e}")))?;
            let split = |v: f64| -> Vec<f64> {
                y.iter().zip(&x).filter(|(_, &xi)| xi == v).map(|(&yi, _)| yi).collect()
            };
            let (m0, c0) = mean_cells(&split(0.0), level)?;
            let (m1, c1) = mean_cells(&split(1.0), level)?;
            let fit = ols_simple(&y, &x).map_err(|e| CliError::from(e).context(&ctx))?;
            regression.push(vec![
                dataset.into(),
                name.into(),
                fit.n.into(),
                m0,
                c0,
                m1,
                c1,
                Cell::Prob(fit.beta),
                Cell::Prob(fit.std_error),
                Cell::PValue(fit.p_value),
            ]);
        }
        for leaking in [false, true] {
            for effect in [-1i8, 0, 1] {
                let mut ratings = Vec::new();
                for r in &rows {
                    let k = binary_leakage(r).map_err(|e| CliError::from(e).context(dataset))?;
                    let e = example_las(r).map_err(|e| CliError::from(e).context(dataset))?;
                    if k == leaking && e == effect {
                        ratings.push(r.human_rating.unwrap_or_default());
                    }
                }
                let (m, c) = mean_cells(&ratings, level)?;
                by_las.push(vec![
                    dataset.into(),
                    i64::from(leaking).into(),
                    i64::from(effect).into(),
                    ratings.len().into(),
                    m,
                    c,
                ]);
            }
        }
    }
    let mut doc = Document::new("regress");
    run_meta(&mut doc, &batch, cfg);
    doc.meta("rated", rated.len());
    doc.tables.push(regression);
    doc.tables.push(by_las);
    Ok(doc)
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    open(path)?
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Corpus BLEU over line-aligned, whitespace-tokenized files.
pub fn cmd_bleu(cfg: &RunConfig) -> Result<Document, CliError> {
    let (Some(hyp_path), Some(ref_path)) = (&cfg.hyp, &cfg.reference) else {
        return Err(CliError::Usage("bleu needs --hyp FILE and --ref FILE".into()));
    };
    let hyp_lines = read_lines(hyp_path)?;
    let ref_lines = read_lines(ref_path)?;
    let hyps: Vec<Vec<&str>> = hyp_lines.iter().map(|l| tokenize(l)).collect();
    let refs: Vec<Vec<&str>> = ref_lines.iter().map(|l| tokenize(l)).collect();
    let result = corpus_bleu(&hyps, &refs)?;
    let mut doc = Document::new("bleu");
    doc.meta("sentences", hyps.len());
    let mut cols = vec!["bleu", "brevity_penalty", "hypothesis_length", "reference_length"];
    let names: Vec<String> = (1..=MAX_ORDER).map(|n| format!("precision_{n}")).collect();
    cols.extend(names.iter().map(String::as_str));
    let mut t = Table::new("bleu", &cols);
    let mut row = vec![
        Cell::Pp(result.score),
        Cell::Prob(result.brevity_penalty),
        result.hypothesis_length.into(),
        result.reference_length.into(),
    ];
    row.extend(result.n_gram_precisions.iter().map(|&p| Cell::Prob(p)));
    t.push(row);
    doc.tables.push(t);
    Ok(doc)
}

/// Writes a synthetic batch as record lines; the analytic LAS goes to the notes.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Rendered, CliError> {
    let s = &cfg.synth;
    let n = s.n.unwrap_or(DEFAULT_SYNTH_N);
    let seed = cfg.bootstrap.seed;
    let kind = s.scenario.unwrap_or(ScenarioKind::Reference);
    let (batch, truth) = match kind {
        ScenarioKind::Reference | ScenarioKind::Custom => {
            for (flag, set) in [
                ("effect_at_zero", s.effect_at_zero.is_some()),
                ("effect_at_one", s.effect_at_one.is_some()),
                ("score_scale", s.score_scale.is_some()),
            ] {
                if set {
                    return Err(CliError::Usage(format!(
                        "{flag} applies only to the linear scenario"
                    )));
                }
            }
            let base = if kind == ScenarioKind::Reference {
                SyntheticScenario::reference(n, seed)
            } else {
                let need = |v: Option<f64>, name: &str| {
                    v.ok_or_else(|| {
                        CliError::Usage(format!("custom scenario needs {name}"))
                    })
                };
                SyntheticScenario {
                    n,
                    p_leak: need(s.p_leak, "p_leak")?,
                    p_base: need(s.p_base, "p_base")?,
                    p_full_given_leak: need(s.p_full_given_leak, "p_full_given_leak")?,
                    p_full_given_nonleak: need(s.p_full_given_nonleak, "p_full_given_nonleak")?,
                    leak_prob_noise: None,
                    seed,
                }
            };
            let scenario = SyntheticScenario {
                p_leak: s.p_leak.unwrap_or(base.p_leak),
                p_base: s.p_base.unwrap_or(base.p_base),
                p_full_given_leak: s.p_full_given_leak.unwrap_or(base.p_full_given_leak),
                p_full_given_nonleak: s.p_full_given_nonleak.unwrap_or(base.p_full_given_nonleak),
                leak_prob_noise: s.leak_prob_noise.or(base.leak_prob_noise),
                ..base
            };
            (generate(&scenario)?, analytic_las(&scenario)?)
        }
        ScenarioKind::Linear => {
            for (flag, set) in [
                ("p_leak", s.p_leak.is_some()),
                ("p_full_given_leak", s.p_full_given_leak.is_some()),
                ("p_full_given_nonleak", s.p_full_given_nonleak.is_some()),
                ("leak_prob_noise", s.leak_prob_noise.is_some()),
            ] {
                if set {
                    return Err(CliError::Usage(format!(
                        "{flag} does not apply to the linear scenario"
                    )));
                }
            }
            let base = LinearLeakageScenario::reference(n, seed);
            let scenario = LinearLeakageScenario {
                p_base: s.p_base.unwrap_or(base.p_base),
                effect_at_zero: s.effect_at_zero.unwrap_or(base.effect_at_zero),
                effect_at_one: s.effect_at_one.unwrap_or(base.effect_at_one),
                score_scale: s.score_scale.unwrap_or(base.score_scale),
                ..base
            };
            let truth = scenario.analytic_las();
            (generate_linear(&scenario)?, truth)
        }
    };
    let kind_name = match kind {
        ScenarioKind::Reference => "reference",
        ScenarioKind::Linear => "linear",
        ScenarioKind::Custom => "custom",
    };
    Ok(Rendered {
        body: to_jsonl(&batch.records),
        notes: vec![format!(
            "synth: scenario={kind_name} n={n} seed={seed} analytic_las={truth:?}"
        )],
        failure: None,
    })
}

/// LAS per seed tag, with mean and range across seeds per source.
pub fn cmd_seeds(cfg: &RunConfig) -> Result<Document, CliError> {
    let batch = load_records(cfg)?;
    if let Some(r) = batch.records.iter().find(|r| r.seed_tag.is_none()) {
        return Err(CliError::Validation(format!(
            "record `{}` has no seed_tag",
            r.example_id
        )));
    }
    let f = cfg.scale.factor();
    let v = |x: f64| value_cell(x, cfg.scale);
    let mut per_seed = Table::new("per_seed", &["dataset", "source", "seed", "n", "las"]);
    let mut summary = Table::new(
        "summary",
        &["dataset", "source", "seeds", "mean", "min", "max", "range"],
    );
    struct DatasetSeeds {
        dataset: String,
        reports: Vec<SeedReport>,
        sizes: Vec<(String, String, usize)>,
    }
    let mut by_dataset: Vec<DatasetSeeds> = Vec::new();
    for ((dataset, source), group) in batch.group_by_source() {
        let mut seeds: Vec<(String, Vec<PredictionRecord>)> = Vec::new();
        for r in group.records {
            let tag = r.seed_tag.clone().unwrap_or_default();
            match seeds.iter_mut().find(|(t, _)| *t == tag) {
                Some((_, rs)) => rs.push(r),
                None => seeds.push((tag, vec![r])),
            }
        }
        let slot = match by_dataset.iter().position(|d| d.dataset == dataset) {
            Some(i) => i,
            None => {
                by_dataset.push(DatasetSeeds {
                    dataset: dataset.clone(),
                    reports: Vec::new(),
                    sizes: Vec::new(),
                });
                by_dataset.len() - 1
            }
        };
        for (tag, records) in seeds {
            let ctx = format!("{dataset}/{source}/seed {tag}");
            let sub = RecordBatch::new(records, ctx.clone());
            let assignments = binary_assignments(&sub).map_err(|e| CliError::from(e).context(&ctx))?;
            let report = compute_las(&sub, &assignments).map_err(|e| CliError::from(e).context(&ctx))?;
            by_dataset[slot].reports.push(SeedReport {
                source: source.clone(),
                seed_tag: tag.clone(),
                las: report.las * f,
            });
            by_dataset[slot].sizes.push((source.clone(), tag, sub.len()));
        }
    }
    for DatasetSeeds {
        dataset,
        reports,
        sizes,
    } in by_dataset
    {
        let mut rows = aggregate_seeds(&reports);
        sort_by_mean(&mut rows);
        for row in rows {
            for (tag, las) in &row.values {
                let n = sizes
                    .iter()
                    .find(|(s, t, _)| *s == row.source && t == tag)
                    .map_or(0, |(_, _, n)| *n);
                per_seed.push(vec![
                    dataset.as_str().into(),
                    row.source.as_str().into(),
                    tag.as_str().into(),
                    n.into(),
                    v(*las),
                ]);
            }
            summary.push(vec![
                dataset.as_str().into(),
                row.source.as_str().into(),
                row.values.len().into(),
                v(row.mean),
                v(row.min),
                v(row.max),
                v(row.range),
            ]);
        }
    }
    let mut doc = Document::new("seeds");
    run_meta(&mut doc, &batch, cfg);
    doc.tables.push(per_seed);
    doc.tables.push(summary);
    Ok(doc)
}

pub fn cmd_presets(cfg: &RunConfig) -> Result<Document, CliError> {
    let names: Vec<&str> = match &cfg.preset {
        Some(name) => vec![name.as_str()],
        None => PRESET_NAMES.to_vec(),
    };
    let mut t = Table::new(
        "presets",
        &[
            "name",
            "mt_alpha",
            "task_weight",
            "lm_weight",
            "explanation_weight",
            "expl_alpha_cqa",
            "expl_alpha_snli",
            "sim_cose_full",
            "sim_cose_input_only",
            "sim_cose_expl_only",
            "sim_nli_full",
            "sim_nli_input_only",
            "sim_nli_expl_only",
            "gumbel_temperature",
            "learning_rate",
            "batch_size_cqa",
            "batch_size_snli",
        ],
    );
    for name in names {
        let p = preset(name)?;
        let (c, n) = (p.simulator_weights_cose, p.simulator_weights_nli);
        t.push(vec![
            p.name.into(),
            Cell::Prob(p.mt_alpha),
            Cell::Prob(p.task_loss_weights.task),
            Cell::Prob(p.task_loss_weights.lm),
            Cell::Prob(p.task_loss_weights.explanation),
            Cell::Prob(p.expl_alpha_cqa),
            Cell::Prob(p.expl_alpha_snli),
            Cell::Prob(c.input_and_explanation),
            Cell::Prob(c.input_only),
            Cell::Prob(c.explanation_only),
            Cell::Prob(n.input_and_explanation),
            Cell::Prob(n.input_only),
            Cell::Prob(n.explanation_only),
            Cell::Prob(p.gumbel_temperature),
            Cell::Prob(p.learning_rate),
            p.batch_size_cqa.into(),
            p.batch_size_snli.into(),
        ]);
    }
    let mut doc = Document::new("presets");
    doc.tables.push(t);
    Ok(doc)
}
