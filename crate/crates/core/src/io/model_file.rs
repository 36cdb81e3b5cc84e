//! Plain-text LDA model file. Weights and biases are re-derived on load, so
//! only the fitted statistics are stored.
//!
//! ```text
//! reclearn-lda 1
//! dim 8
//! shrinkage 0.001
//! priors <relax> <open> <close>
//! mean relax <d values>
//! mean open <d values>
//! mean close <d values>
//! cov <d values>            (d lines)
//! cov_shrunk <d values>     (d lines)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::IoError;
use crate::classifier::LdaModel;
use crate::types::Intent;

pub const MAGIC: &str = "reclearn-lda";
pub const VERSION: u32 = 1;

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn model_to_string(model: &LdaModel) -> String {
    let d = model.dim();
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "dim {d}");
    let _ = writeln!(s, "shrinkage {}", model.shrinkage);
    let _ = writeln!(s, "priors {}", join(model.priors.iter().copied()));
    for intent in Intent::ALL {
        let _ = writeln!(s, "mean {intent} {}", join(model.means.row(intent.index()).iter().copied()));
    }
    for r in 0..d {
        let _ = writeln!(s, "cov {}", join(model.cov.row(r).iter().copied()));
    }
    for r in 0..d {
        let _ = writeln!(s, "cov_shrunk {}", join(model.cov_shrunk.row(r).iter().copied()));
    }
    s
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: u64,
}

impl<'a> Lines<'a> {
    /// Next non-empty line split into its keyword and remaining fields.
    fn next(&mut self, keyword: &str) -> Result<Vec<&'a str>, IoError> {
        for (i, text) in self.iter.by_ref() {
            self.line = i as u64 + 1;
            let mut fields = text.split_whitespace();
            let Some(first) = fields.next() else { continue };
            if first != keyword {
                return Err(IoError::malformed(self.line, format!("expected `{keyword}`, found `{first}`")));
            }
            return Ok(fields.collect());
        }
        Err(IoError::malformed(self.line + 1, format!("missing `{keyword}` line")))
    }

    fn floats(&self, fields: &[&str], expected: usize) -> Result<Vec<f64>, IoError> {
        if fields.len() != expected {
            return Err(IoError::malformed(self.line, format!("expected {expected} values, found {}", fields.len())));
        }
        fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| IoError::malformed(self.line, format!("bad number `{f}`")))
            })
            .collect()
    }
}

pub fn model_from_str(text: &str) -> Result<LdaModel, IoError> {
    let mut lines = Lines { iter: text.lines().enumerate(), line: 0 };
    let header = lines.next(MAGIC)?;
    if header != [VERSION.to_string().as_str()] {
        return Err(IoError::Version { what: "model", found: header.join(" ") });
    }
    let dim_fields = lines.next("dim")?;
    let dim: usize = match dim_fields.as_slice() {
        [d] => d.parse().map_err(|_| IoError::malformed(lines.line, "bad dim"))?,
        _ => return Err(IoError::malformed(lines.line, "bad dim")),
    };
    if dim == 0 {
        return Err(IoError::malformed(lines.line, "dim must be positive"));
    }
    let fields = lines.next("shrinkage")?;
    let shrinkage = lines.floats(&fields, 1)?[0];
    let fields = lines.next("priors")?;
    let p = lines.floats(&fields, 3)?;
    let priors = [p[0], p[1], p[2]];
    let mut means = DMatrix::zeros(3, dim);
    for intent in Intent::ALL {
        let fields = lines.next("mean")?;
        if fields.first() != Some(&intent.as_str()) {
            return Err(IoError::malformed(lines.line, format!("expected mean for {intent}")));
        }
        let row = lines.floats(&fields[1..], dim)?;
        for (c, v) in row.into_iter().enumerate() {
            means[(intent.index(), c)] = v;
        }
    }
    let mut read_matrix = |keyword: &str| -> Result<DMatrix<f64>, IoError> {
        let mut m = DMatrix::zeros(dim, dim);
        for r in 0..dim {
            let fields = lines.next(keyword)?;
            for (c, v) in lines.floats(&fields, dim)?.into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        Ok(m)
    };
    let cov = read_matrix("cov")?;
    let cov_shrunk = read_matrix("cov_shrunk")?;
    LdaModel::from_parts(means, cov, cov_shrunk, priors, shrinkage).map_err(|e| IoError::Invalid(e.to_string()))
}

pub fn write_model(model: &LdaModel, path: &Path) -> Result<(), IoError> {
    std::fs::write(path, model_to_string(model)).map_err(IoError::file(path))
}

pub fn read_model(path: &Path) -> Result<LdaModel, IoError> {
    let text = std::fs::read_to_string(path).map_err(IoError::file(path))?;
    model_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{fit, LabeledDataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> LdaModel {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut data = LabeledDataset::new(8);
        for i in 0..300 {
            let intent = Intent::ALL[i % 3];
            let row: Vec<f64> = (0..8).map(|c| rng.random::<f64>() + (c == intent.index()) as u8 as f64).collect();
            data.push(&row, intent).unwrap();
        }
        fit(&data, 1e-3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = model_from_str(&model_to_string(&m)).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn rejects_future_version() {
        let text = model_to_string(&model()).replacen("reclearn-lda 1", "reclearn-lda 2", 1);
        assert!(matches!(model_from_str(&text), Err(IoError::Version { .. })));
    }

    #[test]
    fn truncated_file_names_line() {
        let text = model_to_string(&model());
        let cut: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(matches!(model_from_str(&cut), Err(IoError::Malformed { .. })));
    }
}
