use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// `2PR / (P + R)`, or 0 when both are 0. Works on fractions or percentages.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Rounds to one decimal place.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl Confusion {
    pub fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        pct(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        pct(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        pct(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Transductive,
    Inductive,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Transductive => "transductive",
            Protocol::Inductive => "inductive",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "transductive" => Ok(Self::Transductive),
            "inductive" => Ok(Self::Inductive),
            o => Err(crate::Error::Config(format!("unknown mode {o:?}"))),
        }
    }
}

/// Test-set metrics of one run, as percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub seed: u64,
    pub protocol: Protocol,
    pub ablation: String,
}

impl MetricsReport {
    pub fn from_confusion(c: Confusion, seed: u64, protocol: Protocol, ablation: &str) -> Self {
        Self {
            accuracy: c.accuracy(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            confusion: c,
            seed,
            protocol,
            ablation: ablation.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Summary {
    fn rounded(self) -> Self {
        Self {
            accuracy: round1(self.accuracy),
            precision: round1(self.precision),
            recall: round1(self.recall),
            f1: round1(self.f1),
        }
    }
}

/// Per-run reports of one variant and their mean and (population) standard
/// deviation. Serialized summaries are rounded to one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedReport {
    pub protocol: Protocol,
    pub ablation: String,
    pub mean: Summary,
    pub std: Summary,
    pub runs: Vec<MetricsReport>,
}

impl AveragedReport {
    pub fn new(protocol: Protocol, ablation: &str, runs: Vec<MetricsReport>) -> Self {
        let n = runs.len().max(1) as f64;
        let get = |f: fn(&MetricsReport) -> f64| {
            let m = runs.iter().map(f).sum::<f64>() / n;
            let s = (runs.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, s)
        };
        let (a, sa) = get(|r| r.accuracy);
        let (p, sp) = get(|r| r.precision);
        let (r, sr) = get(|r| r.recall);
        let (f, sf) = get(|r| r.f1);
        Self {
            protocol,
            ablation: ablation.to_string(),
            mean: Summary { accuracy: a, precision: p, recall: r, f1: f },
            std: Summary { accuracy: sa, precision: sp, recall: sr, f1: sf },
            runs,
        }
    }

    /// Copy with every percentage rounded to one decimal.
    pub fn rounded(&self) -> Self {
        let mut out = self.clone();
        out.mean = self.mean.rounded();
        out.std = self.std.rounded();
        for r in &mut out.runs {
            r.accuracy = round1(r.accuracy);
            r.precision = round1(r.precision);
            r.recall = round1(r.recall);
            r.f1 = round1(r.f1);
        }
        out
    }
}

/// Aligned text table, one row per report: Acc, Precision, Recall, F-1.
pub fn format_table(reports: &[AveragedReport]) -> String {
    let name_w = reports
        .iter()
        .map(|r| r.ablation.len())
        .chain(std::iter::once("Method".len()))
        .max()
        .unwrap_or(6);
    let mut out = format!(
        "{:<name_w$}  {:>12}  {:>12}  {:>12}  {:>12}\n",
        "Method", "Acc", "Precision", "Recall", "F-1"
    );
    for r in reports {
        let cell = |m: f64, s: f64| format!("{:.1} ± {:.1}", m, s);
        out.push_str(&format!(
            "{:<name_w$}  {:>12}  {:>12}  {:>12}  {:>12}\n",
            r.ablation,
            cell(r.mean.accuracy, r.std.accuracy),
            cell(r.mean.precision, r.std.precision),
            cell(r.mean.recall, r.std.recall),
            cell(r.mean.f1, r.std.f1),
        ));
    }
    out
}
