use std::fmt::Write as _;

use super::TrialOutcome;
use crate::Real;

/// Five-number summary. Quartiles use linear interpolation between order
/// statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n: usize,
}

impl Summary {
    /// `None` when no finite values are present.
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
            n: v.len(),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

const HEADER: &str = "trial,seed,f_true,distance,feasible,evaluations,iterations,status,error";

#[derive(Debug, thiserror::Error)]
#[error("trial table line {line}: {message}")]
pub struct StatsParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub f_true: f64,
    pub distance: Option<f64>,
    pub feasible: Option<bool>,
    pub evaluations: usize,
    pub iterations: usize,
    pub status: String,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialStats {
    pub rows: Vec<TrialRow>,
}

impl TrialStats {
    pub fn from_outcomes<T: Real, E: std::fmt::Display>(outcomes: &[Result<TrialOutcome<T>, E>]) -> Self {
        let rows = outcomes
            .iter()
            .enumerate()
            .map(|(trial, o)| match o {
                Ok(o) => TrialRow {
                    trial,
                    seed: o.seed,
                    f_true: o.result.f_true.map_or(f64::NAN, |v| v.as_f64()),
                    distance: o.distance.map(|d| d.as_f64()),
                    feasible: o.true_feasible,
                    evaluations: o.total_evaluations(),
                    iterations: o.result.iterations,
                    status: o.result.status.as_str().to_string(),
                    error: None,
                },
                Err(e) => TrialRow {
                    trial,
                    seed: 0,
                    f_true: f64::NAN,
                    distance: None,
                    feasible: None,
                    evaluations: 0,
                    iterations: 0,
                    status: "error".into(),
                    error: Some(e.to_string()),
                },
            })
            .collect();
        Self { rows }
    }

    pub fn objective(&self) -> Option<Summary> {
        Summary::of(&self.rows.iter().map(|r| r.f_true).collect::<Vec<_>>())
    }

    pub fn distance(&self) -> Option<Summary> {
        Summary::of(&self.rows.iter().filter_map(|r| r.distance).collect::<Vec<_>>())
    }

    pub fn evaluations(&self) -> Option<Summary> {
        Summary::of(&self.rows.iter().filter(|r| r.error.is_none()).map(|r| r.evaluations as f64).collect::<Vec<_>>())
    }

    /// Trials whose distance to a known minimizer is within `tol`.
    pub fn count_within(&self, tol: f64) -> usize {
        self.rows.iter().filter(|r| r.distance.is_some_and(|d| d <= tol)).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.16e},{},{},{},{},{},{}",
                r.trial,
                r.seed,
                r.f_true,
                r.distance.map_or(String::new(), |d| format!("{d:.16e}")),
                r.feasible.map_or("", |f| if f { "1" } else { "0" }),
                r.evaluations,
                r.iterations,
                r.status,
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, StatsParseError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => return Err(StatsParseError { line: 1, message: "unexpected header".into() }),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| StatsParseError { line: i + 1, message };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(err(format!("expected 9 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
            rows.push(TrialRow {
                trial: int(f[0])?,
                seed: f[1].parse().map_err(|e| err(format!("{:?}: {e}", f[1])))?,
                f_true: num(f[2])?,
                distance: if f[3].is_empty() { None } else { Some(num(f[3])?) },
                feasible: match f[4] {
                    "" => None,
                    "1" => Some(true),
                    "0" => Some(false),
                    other => return Err(err(format!("bad feasibility flag {other:?}"))),
                },
                evaluations: int(f[5])?,
                iterations: int(f[6])?,
                status: f[7].to_string(),
                error: (!f[8].is_empty()).then(|| f[8].to_string()),
            });
        }
        Ok(Self { rows })
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let line = |s: &mut String, name: &str, v: Option<Summary>| {
            if let Some(v) = v {
                let _ = writeln!(
                    s,
                    "{name:<12} min {:.6e}  q1 {:.6e}  median {:.6e}  q3 {:.6e}  max {:.6e}  (n={})",
                    v.min, v.q1, v.median, v.q3, v.max, v.n
                );
            }
        };
        line(&mut s, "objective", self.objective());
        line(&mut s, "distance", self.distance());
        line(&mut s, "evaluations", self.evaluations());
        let failed = self.rows.iter().filter(|r| r.error.is_some()).count();
        if failed > 0 {
            let _ = writeln!(s, "failed trials: {failed}");
        }
        s
    }
}
