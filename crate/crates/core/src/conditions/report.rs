//! Verdicts and condition reports with CSV and JSON export.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// How "a.e. t" and "a.s. ω" are read by every report.
pub const READING: &str = "a.e. t / a.s. ω are read as: all tested grid nodes and all sampled paths; values are path means with Monte Carlo standard errors";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Violated,
    Inconclusive,
}

impl Verdict {
    /// Satisfied if value + k·se ≤ tol, violated if value − k·se > tol.
    pub fn classify(value: f64, se: f64, k: f64, tol: f64) -> Self {
        if !value.is_finite() || !se.is_finite() {
            Verdict::Inconclusive
        } else if value - k * se > tol {
            Verdict::Violated
        } else if value + k * se <= tol {
            Verdict::Satisfied
        } else {
            Verdict::Inconclusive
        }
    }

    /// Violated beats inconclusive beats satisfied.
    pub fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Self {
        let mut out = Verdict::Satisfied;
        for v in verdicts {
            match v {
                Verdict::Violated => return Verdict::Violated,
                Verdict::Inconclusive => out = Verdict::Inconclusive,
                Verdict::Satisfied => {}
            }
        }
        out
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Satisfied => "satisfied",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Verdict thresholds and sampling of the tests.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckSettings {
    /// Standard-error multiple in the verdict rule.
    pub k: f64,
    /// Absolute tolerance on test values.
    pub tol: f64,
    /// Probe set V.
    pub probes: Vec<Vec<f64>>,
    /// Test every `stride`-th node.
    pub stride: usize,
    /// Paths used by the pointwise tests (the first non-aborted ones).
    pub sample_paths: usize,
}

impl CheckSettings {
    pub fn new(probes: Vec<Vec<f64>>) -> Self {
        Self { k: 3.0, tol: 1e-8, probes, stride: 1, sample_paths: 1000 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.probes.is_empty() {
            return Err(Error::Config("probe set V is empty".into()));
        }
        if self.stride == 0 || self.sample_paths == 0 {
            return Err(Error::Config("stride and sample_paths must be positive".into()));
        }
        if !(self.k >= 0.0) || !(self.tol >= 0.0) {
            return Err(Error::Config("k and tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// One (t, v) test point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestRow {
    pub node: usize,
    pub t: f64,
    pub v: Vec<f64>,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub total: f64,
    pub stderr: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub test: String,
    pub reading: String,
    pub k: f64,
    pub tol: f64,
    /// Meaning of term1..term3 for this test.
    pub terms: [String; 3],
    pub rows: Vec<TestRow>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    test: &'a str,
    reading: &'a str,
    k: f64,
    tol: f64,
    terms: &'a [String; 3],
    verdict: Verdict,
    rows: usize,
    violated: usize,
    inconclusive: usize,
    max_total: f64,
    notes: &'a [String],
}

impl ConditionReport {
    pub fn new(test: &str, terms: [&str; 3], k: f64, tol: f64, rows: Vec<TestRow>, notes: Vec<String>) -> Self {
        let verdict = Verdict::combine(rows.iter().map(|r| r.verdict));
        Self { test: test.into(), reading: READING.into(), k, tol, terms: terms.map(String::from), rows, verdict, notes }
    }

    pub fn max_total(&self) -> f64 {
        self.rows.iter().map(|r| r.total).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn count(&self, v: Verdict) -> usize {
        self.rows.iter().filter(|r| r.verdict == v).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wr.write_record(["t", "v", "term1", "term2", "term3", "total", "stderr", "verdict"]).map_err(err)?;
        for r in &self.rows {
            let v: Vec<String> = r.v.iter().map(|x| x.to_string()).collect();
            wr.write_record([
                format!("{}", r.t),
                v.join(" "),
                format!("{:e}", r.term1),
                format!("{:e}", r.term2),
                format!("{:e}", r.term3),
                format!("{:e}", r.total),
                format!("{:e}", r.stderr),
                r.verdict.as_str().to_string(),
            ])
            .map_err(err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(Summary {
            test: &self.test,
            reading: &self.reading,
            k: self.k,
            tol: self.tol,
            terms: &self.terms,
            verdict: self.verdict,
            rows: self.rows.len(),
            violated: self.count(Verdict::Violated),
            inconclusive: self.count(Verdict::Inconclusive),
            max_total: self.max_total(),
            notes: &self.notes,
        })
        .expect("summary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_bands() {
        assert_eq!(Verdict::classify(1.0, 0.1, 3.0, 1e-8), Verdict::Violated);
        assert_eq!(Verdict::classify(1.0, 0.5, 3.0, 1e-8), Verdict::Inconclusive);
        assert_eq!(Verdict::classify(-1.0, 0.1, 3.0, 1e-8), Verdict::Satisfied);
        assert_eq!(Verdict::classify(0.0, 0.0, 3.0, 1e-8), Verdict::Satisfied);
        assert_eq!(Verdict::classify(f64::NAN, 0.0, 3.0, 1e-8), Verdict::Inconclusive);
    }

    #[test]
    fn combine_order() {
        use Verdict::*;
        assert_eq!(Verdict::combine([Satisfied, Satisfied]), Satisfied);
        assert_eq!(Verdict::combine([Satisfied, Inconclusive]), Inconclusive);
        assert_eq!(Verdict::combine([Inconclusive, Violated, Satisfied]), Violated);
        assert_eq!(Verdict::combine([]), Satisfied);
    }
}
