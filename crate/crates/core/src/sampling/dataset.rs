use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::{DMatrix, DVector};

use super::SamplingError;
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Initial,
    Subregion,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Initial => "initial",
            Provenance::Subregion => "subregion",
        }
    }
}

/// Evaluated samples. Rows whose evaluation failed keep `NaN` outputs and
/// `valid = false`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Real> {
    pub x: DMatrix<T>,
    pub y: DMatrix<T>,
    pub feasible: Vec<bool>,
    pub valid: Vec<bool>,
    pub provenance: Vec<Provenance>,
    /// Set when no feasible point was found and the remaining budget went
    /// to a global design.
    pub global_fallback: bool,
}

impl<T: Real> Dataset<T> {
    pub fn new(n_inputs: usize, n_outputs: usize) -> Self {
        Self {
            x: DMatrix::zeros(0, n_inputs),
            y: DMatrix::zeros(0, n_outputs),
            feasible: Vec::new(),
            valid: Vec::new(),
            provenance: Vec::new(),
            global_fallback: false,
        }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_inputs(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.y.ncols()
    }

    pub fn push(&mut self, x: &DVector<T>, y: &DVector<T>, feasible: bool, valid: bool, provenance: Provenance) {
        let n = self.len();
        let (nx, ny) = (self.n_inputs(), self.n_outputs());
        self.x = std::mem::replace(&mut self.x, DMatrix::zeros(0, 0)).insert_row(n, T::zero());
        self.y = std::mem::replace(&mut self.y, DMatrix::zeros(0, 0)).insert_row(n, T::zero());
        for j in 0..nx {
            self.x[(n, j)] = x[j];
        }
        for j in 0..ny {
            self.y[(n, j)] = y[j];
        }
        self.feasible.push(feasible);
        self.valid.push(valid);
        self.provenance.push(provenance);
    }

    pub fn feasible_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.feasible.iter().filter(|&&f| f).count() as f64 / self.len() as f64
    }

    /// Inputs and outputs of the rows with a successful evaluation.
    pub fn valid_xy(&self) -> (DMatrix<T>, DMatrix<T>) {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.valid[i]).collect();
        (self.x.select_rows(&idx), self.y.select_rows(&idx))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let mut header: Vec<String> = (1..=self.n_inputs()).map(|i| format!("x{i}")).collect();
        header.extend((1..=self.n_outputs()).map(|i| format!("y{i}")));
        header.extend(["feasible", "valid", "provenance"].map(String::from));
        writeln!(s, "{}", header.join(",")).unwrap();
        for i in 0..self.len() {
            for v in self.x.row(i).iter().chain(self.y.row(i).iter()) {
                write!(s, "{v:.16e},").unwrap();
            }
            writeln!(
                s,
                "{},{},{}",
                self.feasible[i] as u8,
                self.valid[i] as u8,
                self.provenance[i].as_str()
            )
            .unwrap();
        }
        s
    }

    pub fn from_csv<R: BufRead>(input: R) -> Result<Self, SamplingError> {
        let err = |line: usize, m: String| SamplingError::Parse { line, message: m };
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| err(1, "empty dataset".into()))?
            .map_err(|e| err(1, e.to_string()))?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let nx = cols.iter().filter(|c| c.starts_with('x')).count();
        let ny = cols.iter().filter(|c| c.starts_with('y')).count();
        let expected: Vec<String> = (1..=nx)
            .map(|i| format!("x{i}"))
            .chain((1..=ny).map(|i| format!("y{i}")))
            .chain(["feasible", "valid", "provenance"].map(String::from))
            .collect();
        if cols != expected {
            return Err(err(1, "header must be x1..xn,y1..ym,feasible,valid,provenance".into()));
        }
        let mut data = Self::new(nx, ny);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (k, line) in lines.enumerate() {
            let ln = k + 2;
            let line = line.map_err(|e| err(ln, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != nx + ny + 3 {
                return Err(err(ln, format!("expected {} fields, got {}", nx + ny + 3, f.len())));
            }
            for (j, field) in f[..nx + ny].iter().enumerate() {
                let v: T = field.parse().map_err(|_| err(ln, format!("invalid number `{field}`")))?;
                if j < nx {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
            let flag = |s: &str| match s {
                "1" | "true" => Ok(true),
                "0" | "false" => Ok(false),
                _ => Err(err(ln, format!("invalid flag `{s}`"))),
            };
            data.feasible.push(flag(f[nx + ny])?);
            data.valid.push(flag(f[nx + ny + 1])?);
            data.provenance.push(match f[nx + ny + 2] {
                "initial" => Provenance::Initial,
                "subregion" => Provenance::Subregion,
                other => return Err(err(ln, format!("invalid provenance `{other}`"))),
            });
        }
        let n = data.feasible.len();
        data.x = DMatrix::from_row_slice(n, nx, &xs);
        data.y = DMatrix::from_row_slice(n, ny, &ys);
        Ok(data)
    }
}
