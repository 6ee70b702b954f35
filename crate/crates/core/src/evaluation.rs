//! MAE reports, per-slice breakdowns and the results table.

use std::fmt;

use thiserror::Error;

use crate::corpus::{Corpus, TargetVector};
use crate::models::N_OUTPUTS;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {targets} targets")]
    LengthMismatch { preds: usize, targets: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("corpus has unlabeled tokens")]
    MissingTargets,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Slice {
    Dataset(String),
    Language(String),
}

impl fmt::Display for Slice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slice::Dataset(d) => write!(f, "dataset={d}"),
            Slice::Language(l) => write!(f, "language={l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// FFDAvg, FFDStd, TRTAvg, TRTStd.
    pub mae: [f64; N_OUTPUTS],
    /// Plain mean of `mae`.
    pub overall: f64,
    pub n_tokens: usize,
    pub slice: Option<Slice>,
}

impl EvalReport {
    pub fn from_target_maes(mae: [f64; N_OUTPUTS], n_tokens: usize, slice: Option<Slice>) -> Self {
        let overall = (mae[0] + mae[1] + mae[2] + mae[3]) / 4.0;
        Self { mae, overall, n_tokens, slice }
    }

    pub fn slice_label(&self) -> String {
        self.slice.as_ref().map_or_else(|| "all".to_string(), Slice::to_string)
    }
}

pub fn mae(preds: &[[f64; N_OUTPUTS]], targets: &[TargetVector]) -> Result<EvalReport, EvalError> {
    if preds.len() != targets.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sums = [0.0; N_OUTPUTS];
    for (p, t) in preds.iter().zip(targets) {
        for (s, (a, b)) in sums.iter_mut().zip(p.iter().zip(t.to_array())) {
            *s += (a - b).abs();
        }
    }
    let n = preds.len() as f64;
    Ok(EvalReport::from_target_maes(sums.map(|s| s / n), preds.len(), None))
}

/// Global report over every token of `corpus`.
pub fn evaluate_corpus(preds: &[[f64; N_OUTPUTS]], corpus: &Corpus) -> Result<EvalReport, EvalError> {
    let targets = corpus.targets().ok_or(EvalError::MissingTargets)?;
    mae(preds, &targets)
}

/// The global report, then one per dataset, then one per language, each group
/// in first-appearance order.
pub fn evaluate_sliced(preds: &[[f64; N_OUTPUTS]], corpus: &Corpus) -> Result<Vec<EvalReport>, EvalError> {
    let targets = corpus.targets().ok_or(EvalError::MissingTargets)?;
    let mut reports = vec![mae(preds, &targets)?];
    let records = corpus.records();
    for by_language in [false, true] {
        let label = |i: usize| {
            if by_language {
                &records[i].language
            } else {
                &records[i].dataset
            }
        };
        let mut order: Vec<&String> = Vec::new();
        for i in 0..records.len() {
            if !order.contains(&label(i)) {
                order.push(label(i));
            }
        }
        for name in order {
            let idx: Vec<usize> = (0..records.len()).filter(|&i| label(i) == name).collect();
            let p: Vec<_> = idx.iter().map(|&i| preds[i]).collect();
            let t: Vec<_> = idx.iter().map(|&i| targets[i]).collect();
            let mut r = mae(&p, &t)?;
            r.slice = Some(if by_language {
                Slice::Language(name.clone())
            } else {
                Slice::Dataset(name.clone())
            });
            reports.push(r);
        }
    }
    Ok(reports)
}

/// Rounds to `decimals` places, ties to even, and renders without exponent.
///
/// Values within a relative `1e-9` of a tie count as ties, so decimal inputs
/// like `5.8485` (not exactly representable) still round as written.
pub fn format_half_even(value: f64, decimals: u32) -> String {
    let scale = 10f64.powi(decimals as i32);
    let scaled = value * scale;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let tol = 1e-9 * scaled.abs().max(1.0);
    let units = if (frac - 0.5).abs() <= tol {
        if floor.rem_euclid(2.0) == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    let neg = units < 0.0;
    let units = units.abs() as u128;
    let p = 10u128.pow(decimals);
    let sign = if neg && units != 0 { "-" } else { "" };
    if decimals == 0 {
        format!("{sign}{units}")
    } else {
        format!("{sign}{}.{:0width$}", units / p, units % p, width = decimals as usize)
    }
}

/// True when `printed` equals the mean of `per_target` at three decimals.
pub fn overall_consistent(per_target: [f64; N_OUTPUTS], printed: f64) -> bool {
    let r = EvalReport::from_target_maes(per_target, 1, None);
    format_half_even(r.overall, 3) == format_half_even(printed, 3)
}

pub const METRIC_COLUMNS: [&str; 5] = ["FFDAvg", "FFDStd", "TRTAvg", "TRTStd", "Overall"];

/// A model name with its report for each split.
pub type TableRow = (String, Vec<(String, EvalReport)>);

/// Fixed-width text table with five metric columns per split.
pub fn emit_results_table(rows: &[TableRow]) -> String {
    let mut splits: Vec<&str> = Vec::new();
    for (_, reports) in rows {
        for (split, _) in reports {
            if !splits.contains(&split.as_str()) {
                splits.push(split);
            }
        }
    }
    let name_w = rows
        .iter()
        .map(|(n, _)| n.chars().count())
        .chain([5])
        .max()
        .unwrap();
    const COL: usize = 8;

    let mut out = String::new();
    if !splits.is_empty() {
        out.push_str(&" ".repeat(name_w));
        for s in &splits {
            let w = METRIC_COLUMNS.len() * (COL + 1);
            out.push_str(&format!(" |{:^w$}", s, w = w - 1));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<name_w$}", "Model"));
    for _ in 0..splits.len().max(1) {
        out.push_str(" |");
        for c in METRIC_COLUMNS {
            out.push_str(&format!(" {c:>COL$}"));
        }
    }
    out.push('\n');
    for (name, reports) in rows {
        out.push_str(&format!("{name:<name_w$}"));
        for split in &splits {
            out.push_str(" |");
            match reports.iter().find(|(s, _)| s == split) {
                Some((_, r)) => {
                    for v in r.mae.iter().chain([&r.overall]) {
                        out.push_str(&format!(" {:>COL$}", format_half_even(*v, 3)));
                    }
                }
                None => {
                    for _ in METRIC_COLUMNS {
                        out.push_str(&format!(" {:>COL$}", "-"));
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}

pub const CSV_HEADER: [&str; 9] = [
    "model", "split", "slice", "ffd_avg", "ffd_std", "trt_avg", "trt_std", "overall", "n_tokens",
];

pub fn write_eval_csv<W: std::io::Write>(writer: W, rows: &[(String, String, EvalReport)]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    for (model, split, r) in rows {
        let mut cells = vec![model.clone(), split.clone(), r.slice_label()];
        cells.extend(r.mae.iter().chain([&r.overall]).map(|v| v.to_string()));
        cells.push(r.n_tokens.to_string());
        wtr.write_record(&cells)?;
    }
    wtr.flush()?;
    Ok(())
}
