//! Summaries and arm-vs-baseline tests over a results table.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::engine::{ResultRow, RESULTS_HEADER};
use crate::error::{Error, Result};
use crate::stats::{mann_whitney_u, ols_slope, pearson_r, wilcoxon_signed_rank, TestResult};

/// Parses a results table written by `write_results_csv`.
pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let expected: Vec<&str> = RESULTS_HEADER.split(',').collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Schema(format!(
            "results header must be `{RESULTS_HEADER}`, found `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |col: &str, v: &str| Error::Row {
            row: line,
            message: format!("bad {col} value `{v}`"),
        };
        let field = |i: usize| record.get(i).unwrap_or("");
        let int = |i: usize| field(i).parse::<usize>().map_err(|_| bad(expected[i], field(i)));
        let real = |i: usize| {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(expected[i], field(i)))
        };
        let opt_real = |i: usize| if field(i).is_empty() { Ok(None) } else { real(i).map(Some) };
        if field(0).is_empty() {
            return Err(bad("arm", ""));
        }
        rows.push(ResultRow {
            arm: field(0).to_string(),
            split: int(1)?,
            round: int(2)?,
            n_labeled: int(3)?,
            f1: opt_real(4)?,
            precision: opt_real(5)?,
            recall: opt_real(6)?,
            auprc: opt_real(7)?,
            mean_confidence: opt_real(8)?,
            correct_labels: if field(9).is_empty() { None } else { Some(int(9)?) },
            alpha: real(10)?,
            mean_weighted_uncertainty: real(11)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty("results table"));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    F1,
    Auprc,
}

impl Metric {
    fn of(self, row: &ResultRow) -> Option<f64> {
        match self {
            Metric::F1 => row.f1,
            Metric::Auprc => row.auprc,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(Metric::F1),
            "auprc" => Ok(Metric::Auprc),
            other => Err(Error::invalid(format!("unknown metric `{other}` (expected f1 or auprc)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub metric: Metric,
    /// Budget fractions at which arms are compared.
    pub checkpoints: Vec<f64>,
    /// Arms at or above the baseline from this fraction onward are flagged.
    pub flag_from: f64,
    pub baseline: String,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            metric: Metric::F1,
            checkpoints: (1..=10).map(|i| i as f64 / 10.0).collect(),
            flag_from: 0.3,
            baseline: "rbm".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub n_splits: usize,
    pub mean_n_labeled: f64,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub mean_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmCurve {
    pub arm: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceTrend {
    pub arm: String,
    pub n: usize,
    /// Least-squares slope of mean confidence per round.
    pub slope: Option<f64>,
    pub pearson_r: Option<f64>,
    pub p_value: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub statistic: f64,
    pub p_value: f64,
    pub method: String,
}

impl From<TestResult> for TestSummary {
    fn from(t: TestResult) -> Self {
        Self {
            statistic: t.statistic,
            p_value: t.p_value,
            method: format!("{:?}", t.method).to_lowercase(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub fraction: f64,
    pub round: usize,
    pub n_pairs: usize,
    pub mean_arm: f64,
    pub mean_baseline: f64,
    pub mann_whitney: Option<TestSummary>,
    pub wilcoxon: Option<TestSummary>,
    pub notes: Vec<String>,
    /// At or past `flag_from` with the arm's mean at least the baseline's.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub arm: String,
    pub baseline: String,
    pub checkpoints: Vec<Checkpoint>,
    /// Every checkpoint from `flag_from` onward is flagged.
    pub at_least_baseline_from_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metric: Metric,
    pub arms: Vec<String>,
    pub n_splits: usize,
    pub n_rounds: usize,
    pub curves: Vec<ArmCurve>,
    pub confidence_trends: Vec<ConfidenceTrend>,
    pub comparisons: Vec<Comparison>,
    pub notice: Option<String>,
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.len() > 1)
        .then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt());
    (Some(m), sd)
}

/// Round index whose labels reach `fraction` of the run.
pub fn checkpoint_round(fraction: f64, n_rounds: usize) -> usize {
    ((fraction * n_rounds as f64).ceil() as usize).clamp(1, n_rounds) - 1
}

pub fn build_report(rows: &[ResultRow], config: &ReportConfig) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::Empty("results table"));
    }
    for &f in &config.checkpoints {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::invalid(format!("checkpoint fraction {f} outside (0, 1]")));
        }
    }
    let mut arms: Vec<String> = Vec::new();
    for r in rows {
        if !arms.contains(&r.arm) {
            arms.push(r.arm.clone());
        }
    }
    // arm -> round -> split -> row
    let mut table: BTreeMap<&str, BTreeMap<usize, BTreeMap<usize, &ResultRow>>> = BTreeMap::new();
    for r in rows {
        let cell = table.entry(&r.arm).or_default().entry(r.round).or_default();
        if cell.insert(r.split, r).is_some() {
            return Err(Error::invalid(format!(
                "duplicate row for arm {} split {} round {}",
                r.arm, r.split, r.round
            )));
        }
    }
    let splits: BTreeSet<usize> = rows.iter().map(|r| r.split).collect();
    let n_rounds = rows.iter().map(|r| r.round + 1).max().unwrap_or(0);

    let curves = arms
        .iter()
        .map(|arm| ArmCurve {
            arm: arm.clone(),
            points: table[arm.as_str()]
                .iter()
                .map(|(&round, cell)| {
                    let values: Vec<f64> = cell.values().filter_map(|r| config.metric.of(r)).collect();
                    let confs: Vec<f64> = cell.values().filter_map(|r| r.mean_confidence).collect();
                    let (mean, sd) = mean_sd(&values);
                    CurvePoint {
                        round,
                        n_splits: cell.len(),
                        mean_n_labeled: cell.values().map(|r| r.n_labeled as f64).sum::<f64>() / cell.len() as f64,
                        mean,
                        sd,
                        mean_confidence: mean_sd(&confs).0,
                    }
                })
                .collect(),
        })
        .collect();

    let confidence_trends = arms
        .iter()
        .map(|arm| {
            let (x, y): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| &r.arm == arm)
                .filter_map(|r| r.mean_confidence.map(|c| (r.round as f64, c)))
                .unzip();
            let mut trend = ConfidenceTrend {
                arm: arm.clone(),
                n: x.len(),
                slope: ols_slope(&x, &y).ok(),
                pearson_r: None,
                p_value: None,
                note: None,
            };
            match pearson_r(&x, &y) {
                Ok(t) => {
                    trend.pearson_r = Some(t.statistic);
                    trend.p_value = Some(t.p_value);
                }
                Err(e) => trend.note = Some(e.to_string()),
            }
            trend
        })
        .collect();

    let mut notice = None;
    let mut comparisons = Vec::new();
    if arms.len() < 2 {
        notice = Some(format!("only one arm ({}); comparison tests skipped", arms[0]));
    } else {
        let baseline = if arms.contains(&config.baseline) {
            config.baseline.clone()
        } else {
            arms[0].clone()
        };
        for arm in arms.iter().filter(|a| **a != baseline) {
            comparisons.push(compare(&table, arm, &baseline, n_rounds, config));
        }
    }

    Ok(Report {
        metric: config.metric,
        arms,
        n_splits: splits.len(),
        n_rounds,
        curves,
        confidence_trends,
        comparisons,
        notice,
    })
}

type Table<'a> = BTreeMap<&'a str, BTreeMap<usize, BTreeMap<usize, &'a ResultRow>>>;

fn compare(table: &Table<'_>, arm: &str, baseline: &str, n_rounds: usize, config: &ReportConfig) -> Comparison {
    let empty = BTreeMap::new();
    let mut checkpoints = Vec::new();
    let mut fractions = config.checkpoints.clone();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    for fraction in fractions {
        let round = checkpoint_round(fraction, n_rounds);
        let a = table[arm].get(&round).unwrap_or(&empty);
        let b = table[baseline].get(&round).unwrap_or(&empty);
        let xs: Vec<f64> = a.values().filter_map(|r| config.metric.of(r)).collect();
        let ys: Vec<f64> = b.values().filter_map(|r| config.metric.of(r)).collect();
        let (px, py): (Vec<f64>, Vec<f64>) = a
            .iter()
            .filter_map(|(s, r)| Some((config.metric.of(r)?, config.metric.of(b.get(s)?)?)))
            .unzip();
        let mut notes = Vec::new();
        let mann_whitney = match mann_whitney_u(&xs, &ys) {
            Ok(t) => Some(t.into()),
            Err(e) => {
                notes.push(format!("mann-whitney skipped: {e}"));
                None
            }
        };
        let wilcoxon = match wilcoxon_signed_rank(&px, &py) {
            Ok(t) => Some(t.into()),
            Err(e) => {
                notes.push(format!("wilcoxon skipped: {e}"));
                None
            }
        };
        let mean_arm = mean_sd(&xs).0.unwrap_or(f64::NAN);
        let mean_baseline = mean_sd(&ys).0.unwrap_or(f64::NAN);
        checkpoints.push(Checkpoint {
            fraction,
            round,
            n_pairs: px.len(),
            mean_arm,
            mean_baseline,
            mann_whitney,
            wilcoxon,
            notes,
            flagged: fraction + 1e-12 >= config.flag_from && mean_arm >= mean_baseline,
        });
    }
    let at_least_baseline_from_flag = checkpoints
        .iter()
        .filter(|c| c.fraction + 1e-12 >= config.flag_from)
        .all(|c| c.flagged);
    Comparison {
        arm: arm.to_string(),
        baseline: baseline.to_string(),
        checkpoints,
        at_least_baseline_from_flag,
    }
}

/// Plain-text table of the comparisons.
pub fn comparison_table(report: &Report) -> String {
    let mut out = String::new();
    if let Some(n) = &report.notice {
        out.push_str(n);
        out.push('\n');
    }
    for c in &report.comparisons {
        out.push_str(&format!("{} vs {}\n", c.arm, c.baseline));
        out.push_str("fraction  round  mean_arm  mean_base        U      p_U        W      p_W  flag\n");
        for k in &c.checkpoints {
            let stat = |t: &Option<TestSummary>| {
                t.as_ref()
                    .map(|t| (format!("{:.1}", t.statistic), format!("{:.4}", t.p_value)))
                    .unwrap_or(("-".into(), "-".into()))
            };
            let (u, pu) = stat(&k.mann_whitney);
            let (w, pw) = stat(&k.wilcoxon);
            out.push_str(&format!(
                "{:>8.2}  {:>5}  {:>8.4}  {:>9.4}  {:>7}  {:>7}  {:>7}  {:>7}  {}\n",
                k.fraction,
                k.round,
                k.mean_arm,
                k.mean_baseline,
                u,
                pu,
                w,
                pw,
                if k.flagged { "*" } else { "" }
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::write_results_csv;

    fn row(arm: &str, split: usize, round: usize, f1: f64, conf: f64) -> ResultRow {
        ResultRow {
            arm: arm.into(),
            split,
            round,
            n_labeled: 10 + 5 * (round + 1),
            f1: Some(f1),
            precision: Some(f1),
            recall: Some(f1),
            auprc: Some(f1),
            mean_confidence: Some(conf),
            correct_labels: Some(4),
            alpha: 0.9,
            mean_weighted_uncertainty: 0.01,
        }
    }

    fn two_arms() -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for arm in ["rbm", "edig"] {
            for split in 0..6 {
                for round in 0..10 {
                    let lift = if arm == "edig" { 0.05 } else { 0.0 };
                    let f1 = 0.5 + 0.02 * round as f64 + lift + 0.01 * split as f64;
                    rows.push(row(arm, split, round, f1, 0.5 + 0.01 * round as f64 + 0.001 * split as f64));
                }
            }
        }
        rows
    }

    #[test]
    fn csv_round_trip() {
        let rows = two_arms();
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &rows).unwrap();
        let back = read_results_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), rows.len());
        assert_eq!(back[3].round, 3);
        assert!((back[3].f1.unwrap() - rows[3].f1.unwrap()).abs() < 1e-6);
    }

    #[test]
    fn malformed_csv_rejected_with_line() {
        let text = format!("{RESULTS_HEADER}\nrbm,0,0,15,0.5,0.5,0.5,0.5,,,0.9,0.1\nrbm,x,1,20,0.5,0.5,0.5,0.5,,,0.9,0.1\n");
        match read_results_csv(text.as_bytes()) {
            Err(Error::Row { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("split"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_results_csv("a,b\n1,2\n".as_bytes()), Err(Error::Schema(_))));
        assert!(read_results_csv(format!("{RESULTS_HEADER}\n").as_bytes()).is_err());
    }

    #[test]
    fn two_arm_report_has_tests_per_checkpoint() {
        let report = build_report(&two_arms(), &ReportConfig::default()).unwrap();
        assert_eq!(report.n_splits, 6);
        assert_eq!(report.n_rounds, 10);
        assert!(report.notice.is_none());
        let c = &report.comparisons[0];
        assert_eq!((c.arm.as_str(), c.baseline.as_str()), ("edig", "rbm"));
        assert_eq!(c.checkpoints.len(), 10);
        for k in &c.checkpoints {
            let mw = k.mann_whitney.as_ref().unwrap();
            let w = k.wilcoxon.as_ref().unwrap();
            assert!(mw.p_value > 0.0 && mw.p_value <= 1.0);
            // edig beats rbm on every pair
            assert_eq!(w.statistic, 21.0);
            assert_eq!(k.flagged, k.fraction >= 0.3);
        }
        assert!(c.at_least_baseline_from_flag);
        assert_eq!(c.checkpoints[2].round, 2);
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["comparisons"][0]["checkpoints"][0]["mann_whitney"]["statistic"].is_number());
        let trend = &report.confidence_trends[0];
        assert!(trend.slope.unwrap() > 0.0);
        assert!(trend.pearson_r.unwrap() > 0.9);
        assert!(comparison_table(&report).contains("edig vs rbm"));
    }

    #[test]
    fn single_arm_skips_tests() {
        let rows: Vec<ResultRow> = two_arms().into_iter().filter(|r| r.arm == "rbm").collect();
        let report = build_report(&rows, &ReportConfig::default()).unwrap();
        assert!(report.comparisons.is_empty());
        assert!(report.notice.unwrap().contains("skipped"));
        assert_eq!(report.curves.len(), 1);
        assert_eq!(report.curves[0].points.len(), 10);
    }

    #[test]
    fn flag_requires_arm_at_least_baseline() {
        let rows: Vec<ResultRow> = two_arms()
            .into_iter()
            .map(|mut r| {
                if r.arm == "edig" && r.round == 5 {
                    r.f1 = Some(0.0);
                }
                r
            })
            .collect();
        let report = build_report(&rows, &ReportConfig::default()).unwrap();
        let c = &report.comparisons[0];
        assert!(!c.checkpoints[5].flagged);
        assert!(!c.at_least_baseline_from_flag);
    }

    #[test]
    fn checkpoint_rounds() {
        assert_eq!(checkpoint_round(0.3, 40), 11);
        assert_eq!(checkpoint_round(1.0, 40), 39);
        assert_eq!(checkpoint_round(0.01, 40), 0);
    }
}
