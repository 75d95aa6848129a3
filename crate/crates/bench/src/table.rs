use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Json,
}

impl FromStr for Format {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "json" => Ok(Format::Json),
            other => Err(BenchError::Config(format!(
                "unknown format `{other}` (expected tsv or json)"
            ))),
        }
    }
}

impl Format {
    /// Guess from a file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Tsv,
        }
    }
}

/// One (system, estimator, noise level) cell aggregated over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub system: String,
    pub method: String,
    pub pct: f64,
    /// NaN when every repetition failed.
    #[serde(with = "nan_as_null")]
    pub mean_rmse: f64,
    #[serde(with = "nan_as_null")]
    pub std_rmse: f64,
    /// Repetitions that produced an estimate.
    pub ok_reps: usize,
    pub failed_reps: usize,
    /// First error message of a failed repetition, empty otherwise.
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    /// `benchmark` or `robustness`.
    pub kind: String,
    pub config_hash: String,
    pub anchor_policy: String,
    pub noise_convention: String,
    /// Repetition `r` uses seed `base_seed + r`.
    pub base_seed: u64,
    pub repetitions: usize,
    pub demos: usize,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn cell(&self, system: &str, method: &str, pct: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.method == method && r.pct == pct)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.metadata() {
            writeln!(out, "# {k}={}", escape(&v)).unwrap();
        }
        out.push_str(&COLUMNS.join("\t"));
        out.push('\n');
        for r in &self.rows {
            let fields = [
                escape(&r.system),
                escape(&r.method),
                r.pct.to_string(),
                r.mean_rmse.to_string(),
                r.std_rmse.to_string(),
                r.ok_reps.to_string(),
                r.failed_reps.to_string(),
                escape(&r.note),
            ];
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, BenchError> {
        let mut meta = std::collections::HashMap::new();
        let mut lines = text.lines().enumerate();
        let mut header_seen = false;
        for (i, line) in lines.by_ref() {
            if let Some(kv) = line.strip_prefix("# ") {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| BenchError::Parse(format!("line {}: metadata without `=`", i + 1)))?;
                meta.insert(k.to_string(), unescape(v));
            } else if line == COLUMNS.join("\t") {
                header_seen = true;
                break;
            } else {
                return Err(BenchError::Parse(format!(
                    "line {}: expected metadata or column header",
                    i + 1
                )));
            }
        }
        if !header_seen {
            return Err(BenchError::Parse("missing column header".into()));
        }
        let get = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| BenchError::Parse(format!("missing metadata `{k}`")))
        };
        let num = |k: &str| -> Result<u64, BenchError> {
            get(k)?
                .parse()
                .map_err(|e| BenchError::Parse(format!("metadata `{k}`: {e}")))
        };
        let mut table = ResultTable {
            kind: get("kind")?,
            config_hash: get("config_hash")?,
            anchor_policy: get("anchor_policy")?,
            noise_convention: get("noise_convention")?,
            base_seed: num("base_seed")?,
            repetitions: num("repetitions")? as usize,
            demos: num("demos")? as usize,
            rows: Vec::new(),
        };
        for (i, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != COLUMNS.len() {
                return Err(BenchError::Parse(format!(
                    "line {}: expected {} fields, found {}",
                    i + 1,
                    COLUMNS.len(),
                    f.len()
                )));
            }
            let bad = |col: &str, e: &dyn std::fmt::Display| BenchError::Parse(format!("line {}, `{col}`: {e}", i + 1));
            let float = |j: usize| f[j].parse::<f64>().map_err(|e| bad(COLUMNS[j], &e));
            let count = |j: usize| f[j].parse::<usize>().map_err(|e| bad(COLUMNS[j], &e));
            table.rows.push(ResultRow {
                system: unescape(f[0]),
                method: unescape(f[1]),
                pct: float(2)?,
                mean_rmse: float(3)?,
                std_rmse: float(4)?,
                ok_reps: count(5)?,
                failed_reps: count(6)?,
                note: unescape(f[7]),
            });
        }
        Ok(table)
    }

    fn metadata(&self) -> Vec<(&'static str, String)> {
        vec![
            ("kind", self.kind.clone()),
            ("config_hash", self.config_hash.clone()),
            ("anchor_policy", self.anchor_policy.clone()),
            ("noise_convention", self.noise_convention.clone()),
            ("base_seed", self.base_seed.to_string()),
            ("repetitions", self.repetitions.to_string()),
            ("demos", self.demos.to_string()),
        ]
    }

    /// Plain-text rendering for the terminal.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{} | D={} reps={} seeds={}..{} | anchor {} | config {}",
            self.kind,
            self.demos,
            self.repetitions,
            self.base_seed,
            self.base_seed + self.repetitions.saturating_sub(1) as u64,
            self.anchor_policy,
            &self.config_hash[..self.config_hash.len().min(12)]
        )
        .unwrap();
        writeln!(
            out,
            "{:<10} {:<6} {:>8} {:>24} {:>6}",
            "system", "method", "noise%", "RMSE mean +- std", "fail"
        )
        .unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<10} {:<6} {:>8.2} {:>24} {:>6}",
                r.system,
                r.method,
                r.pct * 100.0,
                format!("{:.2} +- {:.2}", r.mean_rmse, r.std_rmse),
                r.failed_reps
            )
            .unwrap();
        }
        out
    }
}

const COLUMNS: [&str; 8] = [
    "system",
    "method",
    "pct",
    "mean_rmse",
    "std_rmse",
    "ok_reps",
    "failed_reps",
    "note",
];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub fn emit_results(table: &ResultTable, path: &Path, format: Format) -> Result<(), BenchError> {
    let text = match format {
        Format::Tsv => table.to_tsv(),
        Format::Json => serde_json::to_string_pretty(table)? + "\n",
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_results(path: &Path, format: Format) -> Result<ResultTable, BenchError> {
    let text = std::fs::read_to_string(path)?;
    match format {
        Format::Tsv => ResultTable::from_tsv(&text),
        Format::Json => Ok(serde_json::from_str(&text)?),
    }
}
