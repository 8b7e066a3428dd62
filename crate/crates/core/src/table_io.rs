//! CSV files of grid solutions.
//!
//! A table file starts with `# key = value` metadata lines, followed by the
//! header `theta_e,f1,f2,f3` and one row per grid point. Reals use 17
//! significant digits so values round-trip exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::motor::COILS;
use crate::ripple::{RippleProblem, RippleSolution};

pub const HEADER: [&str; 4] = ["theta_e", "f1", "f2", "f3"];

#[derive(Debug, Error)]
pub enum TableError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Grid angles, values and free-form metadata of one table file.
#[derive(Debug, Clone, PartialEq)]
pub struct TableFile {
    pub metadata: BTreeMap<String, String>,
    pub grid: Vec<f64>,
    pub values: Vec<[f64; COILS]>,
}

impl TableFile {
    /// Table of `solution` with the problem data as metadata.
    pub fn from_solution(problem: &RippleProblem, solution: &RippleSolution) -> Self {
        let mut metadata = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            metadata.insert(k.to_string(), v);
        };
        put("N", problem.n().to_string());
        put("M", problem.m().to_string());
        put("beta", format!("{:.16e}", problem.beta()));
        put("Ts", format!("{:.16e}", problem.ts()));
        put("v", format!("{:.16e}", problem.velocity()));
        put("sign", problem.sign().name().to_string());
        put("objective", format!("{:.16e}", solution.objective));
        put("power", format!("{:.16e}", solution.power));
        put("ripple", format!("{:.16e}", solution.ripple));
        put(
            "equality_residual",
            format!("{:.16e}", solution.equality_residual),
        );
        put(
            "projected_gradient",
            format!("{:.16e}", solution.projected_gradient),
        );
        put("iterations", solution.iterations.to_string());
        put("converged", solution.converged.to_string());
        Self {
            metadata,
            grid: problem.grid().to_vec(),
            values: solution.values.clone(),
        }
    }

    pub fn to_text(&self) -> Result<String, TableError> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER)?;
        for (theta, row) in self.grid.iter().zip(&self.values) {
            w.write_record([theta, &row[0], &row[1], &row[2]].map(|x| format!("{x:.16e}")))?;
        }
        let body = w
            .into_inner()
            .map_err(|e| TableError::Csv(e.into_error().into()))?;
        out.push_str(&String::from_utf8(body).expect("ascii output"));
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self, TableError> {
        let mut metadata = BTreeMap::new();
        let mut skip = 0;
        for (i, line) in text.lines().enumerate() {
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            skip = i + 1;
            let Some((k, v)) = rest.split_once('=') else {
                return Err(TableError::Parse {
                    line: i + 1,
                    message: format!("metadata line `{line}` lacks `key = value`"),
                });
            };
            metadata.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        if header.iter().ne(HEADER) {
            return Err(TableError::Parse {
                line: skip + 1,
                message: format!(
                    "expected header `{}`, found `{}`",
                    HEADER.join(","),
                    header.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = record
                .position()
                .map_or(skip + 2 + i, |p| p.line() as usize);
            if record.len() != 4 {
                return Err(TableError::Parse {
                    line,
                    message: format!("expected 4 fields, found {}", record.len()),
                });
            }
            let mut nums = [0.0; 4];
            for (j, field) in record.iter().enumerate() {
                nums[j] = match field.parse::<f64>() {
                    Ok(x) if x.is_finite() => x,
                    _ => {
                        return Err(TableError::Parse {
                            line,
                            message: format!("`{field}` is not a finite number"),
                        })
                    }
                };
            }
            grid.push(nums[0]);
            values.push([nums[1], nums[2], nums[3]]);
        }
        if grid.is_empty() {
            return Err(TableError::Parse {
                line: skip + 1,
                message: "table has no rows".into(),
            });
        }
        Ok(Self {
            metadata,
            grid,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|source| TableError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TableError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TableFile {
        let n = 6;
        let mut metadata = BTreeMap::new();
        metadata.insert("N".to_string(), n.to_string());
        metadata.insert("beta".to_string(), "1.0e3".to_string());
        TableFile {
            metadata,
            grid: (0..n)
                .map(|i| -std::f64::consts::PI + std::f64::consts::TAU * i as f64 / n as f64)
                .collect(),
            values: (0..n)
                .map(|i| [0.1 * i as f64, 1.0 / 3.0, (i as f64).sqrt()])
                .collect(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let t = sample();
        let text = t.to_text().unwrap();
        assert!(text.starts_with("# N = 6\n# beta = 1.0e3\ntheta_e,f1,f2,f3\n"));
        let back = TableFile::from_text(&text).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn parse_errors_carry_lines() {
        let text = sample().to_text().unwrap();
        let bad = text.replacen("theta_e,f1", "angle,f1", 1);
        assert!(matches!(
            TableFile::from_text(&bad),
            Err(TableError::Parse { line: 3, .. })
        ));
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[5] = "0.0,abc,1,2".into();
        match TableFile::from_text(&lines.join("\n")) {
            Err(TableError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
        assert!(TableFile::from_text("# a = 1\ntheta_e,f1,f2,f3\n").is_err());
        assert!(TableFile::from_text("# broken\n").is_err());
    }
}
