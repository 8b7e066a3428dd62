//! Text format for fitted GP commutation models.
//!
//! ```text
//! srm-gp-model 1
//! period <p>
//! training <N>
//! <angle>            (N lines, mechanical radians)
//! model positive
//! coil 1
//! mu <mu>
//! length_scale <l>
//! signal_var <s>
//! noise_var <n>
//! weights
//! <weight>           (N lines)
//! coil 2 ...
//! model negative     (optional section)
//! ...
//! end
//! ```
//!
//! Reals are written with 17 significant digits, which round-trips `f64`
//! exactly.

use std::fs;
use std::path::Path;

use super::{CoilGp, GpCommutation, GpError, GpModel, Hyperparams};
use crate::motor::COILS;

pub const MAGIC: &str = "srm-gp-model";
pub const VERSION: u32 = 1;

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_text(com: &GpCommutation) -> String {
    let m = &com.positive;
    let mut out = format!(
        "{MAGIC} {VERSION}\nperiod {}\ntraining {}\n",
        real(m.period()),
        m.angles().len()
    );
    for a in m.angles() {
        out.push_str(&real(*a));
        out.push('\n');
    }
    let mut section = |label: &str, model: &GpModel| {
        out.push_str(&format!("model {label}\n"));
        for c in 0..COILS {
            let gp = model.coil(c);
            out.push_str(&format!(
                "coil {}\nmu {}\nlength_scale {}\nsignal_var {}\nnoise_var {}\nweights\n",
                c + 1,
                gp.hyper.mu,
                real(gp.hyper.length_scale),
                real(gp.hyper.signal_var),
                real(gp.hyper.noise_var)
            ));
            for w in &gp.weights {
                out.push_str(&real(*w));
                out.push('\n');
            }
        }
    };
    section("positive", &com.positive);
    if let Some(neg) = &com.negative {
        section("negative", neg);
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate().peekable(),
        }
    }

    fn skip_blank(&mut self) {
        while matches!(self.inner.peek(), Some((_, l)) if l.trim().is_empty()) {
            self.inner.next();
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), GpError> {
        self.skip_blank();
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| GpError::Truncated(what.to_string()))
    }

    fn peek(&mut self) -> Option<&'a str> {
        self.skip_blank();
        self.inner.peek().map(|(_, l)| l.trim())
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str), GpError> {
        let (line, text) = self.next(key)?;
        let mut parts = text.splitn(2, char::is_whitespace);
        match (parts.next(), parts.next()) {
            (Some(k), Some(v)) if k == key => Ok((line, v.trim())),
            (Some(k), None) if k == key => Err(GpError::Parse {
                line,
                message: format!("`{key}` needs a value"),
            }),
            _ => Err(GpError::Parse {
                line,
                message: format!("expected `{key}`, found `{text}`"),
            }),
        }
    }

    fn keyed_real(&mut self, key: &str) -> Result<f64, GpError> {
        let (line, v) = self.keyed(key)?;
        parse_real(line, v)
    }

    fn real(&mut self, what: &str) -> Result<f64, GpError> {
        let (line, v) = self.next(what)?;
        parse_real(line, v)
    }
}

fn parse_real(line: usize, v: &str) -> Result<f64, GpError> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(GpError::Parse {
            line,
            message: format!("`{v}` is not a finite number"),
        }),
    }
}

fn parse_count(line: usize, v: &str) -> Result<usize, GpError> {
    v.parse().map_err(|_| GpError::Parse {
        line,
        message: format!("`{v}` is not a count"),
    })
}

fn read_model(
    lines: &mut Lines,
    label: &str,
    period: f64,
    angles: &[f64],
) -> Result<GpModel, GpError> {
    let n = angles.len();
    let mut coils = Vec::with_capacity(COILS);
    for c in 0..COILS {
        let (line, v) = lines.keyed("coil")?;
        if parse_count(line, v)? != c + 1 {
            return Err(GpError::Parse {
                line,
                message: format!("expected coil {} of model {label}", c + 1),
            });
        }
        let (line, v) = lines.keyed("mu")?;
        let mu = v.parse().map_err(|_| GpError::Parse {
            line,
            message: format!("`{v}` is not a nonnegative integer"),
        })?;
        let hyper = Hyperparams {
            mu,
            length_scale: lines.keyed_real("length_scale")?,
            signal_var: lines.keyed_real("signal_var")?,
            noise_var: lines.keyed_real("noise_var")?,
        };
        let (line, text) = lines.next("weights")?;
        if text != "weights" {
            return Err(GpError::Parse {
                line,
                message: format!("expected `weights`, found `{text}`"),
            });
        }
        let weights = (0..n)
            .map(|_| lines.real(&format!("weights of coil {} in model {label}", c + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        coils.push(CoilGp { hyper, weights });
    }
    let coils: [CoilGp; COILS] = coils.try_into().expect("three coils");
    GpModel::new(period, angles.to_vec(), coils)
}

pub fn from_text(text: &str) -> Result<GpCommutation, GpError> {
    let mut lines = Lines::new(text);
    let (line, header) = lines.next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(GpError::Parse {
            line,
            message: format!("not a GP model file (expected `{MAGIC} {VERSION}`)"),
        });
    }
    let version = parts.next().unwrap_or("");
    if version != VERSION.to_string() {
        return Err(GpError::UnsupportedVersion(version.to_string()));
    }
    let period = lines.keyed_real("period")?;
    let (line, v) = lines.keyed("training")?;
    let n = parse_count(line, v)?;
    let angles = (0..n)
        .map(|_| lines.real("training angles"))
        .collect::<Result<Vec<_>, _>>()?;

    let (line, v) = lines.keyed("model")?;
    if v != "positive" {
        return Err(GpError::Parse {
            line,
            message: format!("expected `model positive`, found `model {v}`"),
        });
    }
    let positive = read_model(&mut lines, "positive", period, &angles)?;
    let negative = if lines.peek().is_some_and(|l| l.starts_with("model")) {
        let (line, v) = lines.keyed("model")?;
        if v != "negative" {
            return Err(GpError::Parse {
                line,
                message: format!("expected `model negative`, found `model {v}`"),
            });
        }
        Some(read_model(&mut lines, "negative", period, &angles)?)
    } else {
        None
    };
    let (line, v) = lines.next("end marker")?;
    if v != "end" {
        return Err(GpError::Parse {
            line,
            message: format!("expected `end`, found `{v}`"),
        });
    }
    if let Some(extra) = lines.peek() {
        let (line, _) = lines.next("")?;
        return Err(GpError::Parse {
            line,
            message: format!("unexpected content after `end`: `{extra}`"),
        });
    }
    Ok(GpCommutation { positive, negative })
}

pub fn save(com: &GpCommutation, path: impl AsRef<Path>) -> Result<(), GpError> {
    let path = path.as_ref();
    fs::write(path, to_text(com)).map_err(|source| GpError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<GpCommutation, GpError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GpError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commutation::CommutationFunction;

    fn sample(with_negative: bool) -> GpCommutation {
        let period = std::f64::consts::TAU / 131.0;
        let angles: Vec<f64> = (0..7)
            .map(|i| -0.5 * period + period * i as f64 / 7.0)
            .collect();
        let coil = |s: f64| CoilGp {
            hyper: Hyperparams {
                mu: 3,
                length_scale: 0.1 + s,
                signal_var: 1.0 / 3.0 + s,
                noise_var: 1e-9 * (1.0 + s),
            },
            weights: (0..7).map(|i| (i as f64 * 0.37 + s).sin() / 7.0).collect(),
        };
        let model = |o: f64| {
            GpModel::new(
                period,
                angles.clone(),
                [coil(o), coil(o + 0.2), coil(o + 0.4)],
            )
            .unwrap()
        };
        GpCommutation {
            positive: model(0.0),
            negative: with_negative.then(|| model(1.0)),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for neg in [false, true] {
            let com = sample(neg);
            let text = to_text(&com);
            let back = from_text(&text).unwrap();
            assert_eq!(back, com);
            assert_eq!(to_text(&back), text);
            for k in 0..1000 {
                let phi = -0.1 + 0.0002 * k as f64;
                assert_eq!(back.shares(phi), com.shares(phi));
                assert_eq!(
                    back.positive.predict_all(phi),
                    com.positive.predict_all(phi)
                );
                assert_eq!(back.shares_neg(phi), com.shares_neg(phi));
            }
        }
    }

    #[test]
    fn truncated_file_names_missing_section() {
        let text = to_text(&sample(true));
        let cut: Vec<&str> = text.lines().collect();
        let short = cut[..cut.len() / 3].join("\n");
        match from_text(&short) {
            Err(GpError::Truncated(what)) => {
                assert!(what.contains("weights") || what.contains("coil"))
            }
            other => panic!("unexpected {other:?}"),
        }
        let no_end = cut[..cut.len() - 1].join("\n");
        assert!(matches!(from_text(&no_end), Err(GpError::Truncated(w)) if w == "end marker"));
    }

    #[test]
    fn rejects_future_version_and_bad_numbers() {
        let text = to_text(&sample(false));
        let future = text.replacen("srm-gp-model 1", "srm-gp-model 2", 1);
        assert!(matches!(from_text(&future), Err(GpError::UnsupportedVersion(v)) if v == "2"));
        let bad = text.replacen("period ", "period x", 1);
        match from_text(&bad) {
            Err(GpError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(from_text("hello").is_err());
        let trailing = format!("{text}junk\n");
        assert!(matches!(from_text(&trailing), Err(GpError::Parse { .. })));
    }
}
