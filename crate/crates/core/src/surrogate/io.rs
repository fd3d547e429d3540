//! Plain-text model format.
//!
//! ```text
//! mlfp-mlp 1
//! dims 2 8 1
//! seed 42
//! constant_outputs
//! x_shift <n values>
//! x_scale <n values>
//! y_shift <m values>
//! y_scale <m values>
//! layer 0
//! <out rows of in weights>
//! bias <out values>
//! ...
//! end
//! ```
//!
//! Numbers are written with 17 significant digits so a round trip through
//! text is exact.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::{Layer, MlpSurrogate, Scaler, SurrogateError, TrainingMeta};
use crate::Real;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "mlfp-mlp";

fn join<T: Real>(values: impl IntoIterator<Item = T>) -> String {
    let mut s = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:.16e}").unwrap();
    }
    s
}

impl<T: Real> MlpSurrogate<T> {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let dims: Vec<String> = self.layer_dims().iter().map(|d| d.to_string()).collect();
        writeln!(s, "{MAGIC} {FORMAT_VERSION}").unwrap();
        writeln!(s, "dims {}", dims.join(" ")).unwrap();
        writeln!(s, "seed {}", self.meta.seed).unwrap();
        let constant: Vec<String> = self.meta.constant_outputs.iter().map(|c| c.to_string()).collect();
        writeln!(s, "constant_outputs {}", constant.join(" ")).unwrap();
        writeln!(s, "x_shift {}", join(self.x_scaler.shift.iter().copied())).unwrap();
        writeln!(s, "x_scale {}", join(self.x_scaler.scale.iter().copied())).unwrap();
        writeln!(s, "y_shift {}", join(self.y_scaler.shift.iter().copied())).unwrap();
        writeln!(s, "y_scale {}", join(self.y_scaler.scale.iter().copied())).unwrap();
        for (l, layer) in self.layers.iter().enumerate() {
            writeln!(s, "layer {l}").unwrap();
            for row in layer.weights.row_iter() {
                writeln!(s, "{}", join(row.iter().copied())).unwrap();
            }
            writeln!(s, "bias {}", join(layer.bias.iter().copied())).unwrap();
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SurrogateError> {
        let mut cur = Cursor {
            lines: text.lines().enumerate(),
            total: text.lines().count(),
        };

        let (ln, header) = cur.next("header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(perr(ln, "missing model header"));
        }
        let version = parts.next().unwrap_or("");
        if version != FORMAT_VERSION.to_string() {
            return Err(SurrogateError::UnsupportedVersion(version.to_string()));
        }

        let (ln, line) = cur.next("dims")?;
        let dims: Vec<usize> = parse_tagged(ln, line, "dims")?;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(perr(ln, "dims needs at least two positive widths"));
        }
        let (ln, line) = cur.next("seed")?;
        let seed = parse_tagged::<u64>(ln, line, "seed")?
            .first()
            .copied()
            .ok_or_else(|| perr(ln, "missing seed"))?;
        let (ln, line) = cur.next("constant_outputs")?;
        let constant_outputs = parse_tagged(ln, line, "constant_outputs")?;

        let (n_in, n_out) = (dims[0], *dims.last().unwrap());
        let x_scaler = Scaler {
            shift: cur.vector("x_shift", n_in)?,
            scale: cur.vector("x_scale", n_in)?,
        };
        let y_scaler = Scaler {
            shift: cur.vector("y_shift", n_out)?,
            scale: cur.vector("y_scale", n_out)?,
        };

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, w) in dims.windows(2).enumerate() {
            let (ln, line) = cur.next("layer")?;
            let idx: Vec<usize> = parse_tagged(ln, line, "layer")?;
            if idx != [l] {
                return Err(perr(ln, &format!("expected `layer {l}`")));
            }
            let mut weights = DMatrix::zeros(w[1], w[0]);
            for r in 0..w[1] {
                let (ln, line) = cur.next("weight row")?;
                let row: Vec<T> = parse_values(ln, line.split_whitespace())?;
                if row.len() != w[0] {
                    return Err(perr(ln, &format!("weight row has {} values, expected {}", row.len(), w[0])));
                }
                for (c, v) in row.into_iter().enumerate() {
                    weights[(r, c)] = v;
                }
            }
            let bias = cur.vector("bias", w[1])?;
            layers.push(Layer { weights, bias });
        }
        let (ln, line) = cur.next("end")?;
        if line != "end" {
            return Err(perr(ln, "expected `end`"));
        }
        Ok(MlpSurrogate {
            layers,
            x_scaler,
            y_scaler,
            meta: TrainingMeta {
                seed,
                history: Vec::new(),
                constant_outputs,
            },
        })
    }
}

struct Cursor<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: I,
    total: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Cursor<'a, I> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), SurrogateError> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| perr(self.total + 1, &format!("unexpected end of input, expected {what}")))
    }

    fn vector<T: Real>(&mut self, tag: &str, len: usize) -> Result<DVector<T>, SurrogateError> {
        let (ln, line) = self.next(tag)?;
        let v: Vec<T> = parse_tagged(ln, line, tag)?;
        if v.len() != len {
            return Err(perr(ln, &format!("{tag} has {} values, expected {len}", v.len())));
        }
        Ok(DVector::from_vec(v))
    }
}

fn perr(line: usize, message: &str) -> SurrogateError {
    SurrogateError::Parse {
        line,
        message: message.to_string(),
    }
}

fn parse_tagged<V: std::str::FromStr>(line_no: usize, line: &str, tag: &str) -> Result<Vec<V>, SurrogateError> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(perr(line_no, &format!("expected `{tag}`")));
    }
    parse_values(line_no, parts)
}

fn parse_values<'a, V: std::str::FromStr>(
    line_no: usize,
    parts: impl Iterator<Item = &'a str>,
) -> Result<Vec<V>, SurrogateError> {
    parts
        .map(|p| p.parse().map_err(|_| perr(line_no, &format!("invalid number `{p}`"))))
        .collect()
}

/// Writes `epoch,train_mse,val_mse` rows.
pub fn write_training_log<T: Real, W: Write>(history: &[(usize, T, T)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_mse,val_mse")?;
    for (e, t, v) in history {
        writeln!(out, "{e},{t:.16e},{v:.16e}")?;
    }
    Ok(())
}

pub fn read_training_log<T: Real, R: BufRead>(input: R) -> Result<Vec<(usize, T, T)>, SurrogateError> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| perr(i + 1, &e.to_string()))?;
        if i == 0 {
            if line.trim() != "epoch,train_mse,val_mse" {
                return Err(perr(1, "unexpected training log header"));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(perr(i + 1, "expected 3 fields"));
        }
        let bad = |p: &str| perr(i + 1, &format!("invalid number `{p}`"));
        rows.push((
            f[0].parse().map_err(|_| bad(f[0]))?,
            f[1].parse().map_err(|_| bad(f[1]))?,
            f[2].parse().map_err(|_| bad(f[2]))?,
        ));
    }
    Ok(rows)
}
