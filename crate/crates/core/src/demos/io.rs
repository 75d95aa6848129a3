//! Text format for demonstration sets.
//!
//! ```text
//! # {"version":1,"spec_name":"msd","n":2,"m":1,"horizon":10,"count":3,...}
//! d  k  x1  x2  u1
//! 0  0  1  0.1  0.55
//! ...
//! 0  10  2.3  0.4  -
//! ```
//!
//! The first line is a JSON header; each following tab-separated row is one
//! stage of one demonstration. The terminal stage has `-` in place of inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DemoSet, NoiseSpec, Truth, NOISE_CONVENTION};
use crate::error::{Error, Result};
use crate::model::{Theta, Trajectory};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    spec_name: String,
    n: usize,
    m: usize,
    horizon: usize,
    count: usize,
    noise: NoiseHeader,
    truth: Option<TruthHeader>,
}

#[derive(Serialize, Deserialize)]
struct NoiseHeader {
    seed: u64,
    pct: Option<f64>,
    convention: String,
    sigma_t: Vec<Vec<f64>>,
    sigma_xn: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct TruthHeader {
    theta: Vec<f64>,
    x: Vec<f64>,
    u: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from(rows: &[Vec<f64>], dim: usize, field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::dim(field, dim, rows.len()));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

pub fn save_demoset(ds: &DemoSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render(ds)?)?;
    Ok(())
}

pub fn load_demoset(path: impl AsRef<Path>) -> Result<DemoSet> {
    parse(&fs::read_to_string(path)?)
}

fn render(ds: &DemoSet) -> Result<String> {
    let (n, m, horizon) = ds
        .dims()
        .ok_or_else(|| Error::InvalidInput("empty demonstration set".into()))?;
    let header = Header {
        version: FORMAT_VERSION,
        spec_name: ds.spec_name.clone(),
        n,
        m,
        horizon,
        count: ds.len(),
        noise: NoiseHeader {
            seed: ds.noise.seed,
            pct: ds.noise.pct,
            convention: NOISE_CONVENTION.into(),
            sigma_t: rows_of(&ds.noise.sigma_t),
            sigma_xn: rows_of(&ds.noise.sigma_xn),
        },
        truth: ds.truth.as_ref().map(|t| TruthHeader {
            theta: t.theta.as_slice().to_vec(),
            x: t.traj.x.iter().copied().collect(),
            u: t.traj.u.iter().copied().collect(),
        }),
    };
    let mut out = String::new();
    out.push_str("# ");
    out.push_str(&serde_json::to_string(&header).map_err(|e| Error::InvalidInput(e.to_string()))?);
    out.push('\n');
    out.push_str("d\tk");
    for i in 0..n {
        let _ = write!(out, "\tx{}", i + 1);
    }
    for j in 0..m {
        let _ = write!(out, "\tu{}", j + 1);
    }
    out.push('\n');
    for (d, traj) in ds.demos.iter().enumerate() {
        if (traj.n, traj.m, traj.horizon) != (n, m, horizon) {
            return Err(Error::dim("demonstration length", n * (horizon + 1), traj.x.len()));
        }
        for k in 0..=horizon {
            let _ = write!(out, "{d}\t{k}");
            for v in traj.state(k) {
                let _ = write!(out, "\t{v}");
            }
            for j in 0..m {
                if k < horizon {
                    let _ = write!(out, "\t{}", traj.input(k)[j]);
                } else {
                    out.push_str("\t-");
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

fn parse_err(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn parse(text: &str) -> Result<DemoSet> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "header", "empty file"))?;
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| parse_err(1, "header", "expected a `#` header line"))?;
    let raw: serde_json::Value =
        serde_json::from_str(json.trim()).map_err(|e| parse_err(1, "header", e.to_string()))?;
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| parse_err(1, "version", "missing or not an integer"))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: version as u32,
            supported: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| parse_err(1, "header", e.to_string()))?;
    let (n, m, horizon) = (header.n, header.m, header.horizon);

    let noise = NoiseSpec {
        sigma_t: matrix_from(&header.noise.sigma_t, n + m, "stage covariance")?,
        sigma_xn: matrix_from(&header.noise.sigma_xn, n, "terminal covariance")?,
        seed: header.noise.seed,
        pct: header.noise.pct,
    };
    let truth = match header.truth {
        Some(t) => {
            if t.theta.is_empty() {
                return Err(parse_err(1, "truth.theta", "empty"));
            }
            Some(Truth {
                theta: Theta::new(&t.theta)?,
                traj: Trajectory::new(n, m, horizon, DVector::from_vec(t.x), DVector::from_vec(t.u))?,
            })
        }
        None => None,
    };

    let mut demos: Vec<Trajectory> = (0..header.count).map(|_| Trajectory::zeros(n, m, horizon)).collect();
    let mut seen = vec![false; header.count * (horizon + 1)];
    let columns = 2 + n + m;
    for (ln, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') || line.starts_with("d\t") {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns {
            return Err(Error::dim(format!("columns on line {ln}"), columns, fields.len()));
        }
        let index = |i: usize, name: &str| -> Result<usize> {
            fields[i]
                .parse::<usize>()
                .map_err(|e| parse_err(ln, name, e.to_string()))
        };
        let d = index(0, "d")?;
        let k = index(1, "k")?;
        if d >= header.count {
            return Err(parse_err(ln, "d", format!("index {d} out of range")));
        }
        if k > horizon {
            return Err(parse_err(ln, "k", format!("stage {k} beyond horizon {horizon}")));
        }
        if std::mem::replace(&mut seen[d * (horizon + 1) + k], true) {
            return Err(parse_err(ln, "k", format!("duplicate row for demo {d}, stage {k}")));
        }
        for i in 0..n {
            let name = format!("x{}", i + 1);
            demos[d].x[k * n + i] = fields[2 + i]
                .parse::<f64>()
                .map_err(|e| parse_err(ln, name, e.to_string()))?;
        }
        for j in 0..m {
            let name = format!("u{}", j + 1);
            let f = fields[2 + n + j];
            if k == horizon {
                if f != "-" {
                    return Err(parse_err(ln, name, "terminal stage has no input; expected `-`"));
                }
            } else {
                demos[d].u[k * m + j] = f.parse::<f64>().map_err(|e| parse_err(ln, name, e.to_string()))?;
            }
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        let (d, k) = (missing / (horizon + 1), missing % (horizon + 1));
        return Err(parse_err(0, "k", format!("missing row for demo {d}, stage {k}")));
    }
    Ok(DemoSet {
        demos,
        spec_name: header.spec_name,
        noise,
        truth,
    })
}
