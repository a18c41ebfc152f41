//! CSV input and JSON output.

use std::collections::HashMap;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::designs::DesignEcho;
use crate::error::{Error, Result};
use crate::estimators::EstimateTriple;
use crate::frt::{CiResult, FrtResult, Mode, Sided};
use crate::linalg::Matrix;

pub const VERSION: &str = concat!("randtest ", env!("CARGO_PKG_VERSION"));

/// A loaded table: the dataset and the names of its covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub data: Dataset,
    pub covariates: Vec<String>,
}

impl Table {
    /// Zero-based covariate index of a column given by name (`x2`) or by
    /// one-based position (`2`).
    pub fn covariate_index(&self, key: &str) -> Result<usize> {
        let key = key.trim();
        if let Some(i) = self.covariates.iter().position(|c| c == key) {
            return Ok(i);
        }
        match key.parse::<usize>() {
            Ok(k) if k >= 1 && k <= self.covariates.len() => Ok(k - 1),
            _ => Err(Error::InvalidInput(format!(
                "unknown covariate column `{key}`"
            ))),
        }
    }
}

fn parse_error(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn covariate_number(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().filter(|&k| k >= 1)
}

/// Dense labels in order of first appearance.
fn encode_labels(raw: &[String]) -> Vec<usize> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    raw.iter()
        .map(|s| {
            let next = ids.len();
            *ids.entry(s.as_str()).or_insert(next)
        })
        .collect()
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(file)
}

/// Reads a table with header columns `y`, `z`, optional `x1..xJ`,
/// `stratum` and `cluster`. Other columns are ignored. Rows are numbered
/// from 1 at the header line.
pub fn read_csv<R: io::Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_error(1, "", e.to_string()))?
        .clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let y_col = find("y").ok_or_else(|| parse_error(1, "y", "missing required column"))?;
    let z_col = find("z").ok_or_else(|| parse_error(1, "z", "missing required column"))?;
    let stratum_col = find("stratum");
    let cluster_col = find("cluster");

    let mut xs: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| covariate_number(h).map(|k| (k, i)))
        .collect();
    xs.sort_unstable();
    for (want, &(k, _)) in xs.iter().enumerate() {
        if k != want + 1 {
            let missing = if k == want { k } else { want + 1 };
            return Err(parse_error(
                1,
                &format!("x{missing}"),
                "covariate columns must be x1..xJ without gaps or repeats",
            ));
        }
    }

    let mut y = Vec::new();
    let mut z = Vec::new();
    let mut x: Vec<Vec<f64>> = vec![Vec::new(); xs.len()];
    let mut strata = Vec::new();
    let mut clusters = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| parse_error(row, "", e.to_string()))?;
        let cell = |col: usize| -> Result<&str> {
            match rec.get(col) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(parse_error(row, &header[col], "missing value")),
            }
        };
        let real = |col: usize| -> Result<f64> {
            let s = cell(col)?;
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_error(
                    row,
                    &header[col],
                    format!("`{s}` is not a finite number"),
                )),
            }
        };
        y.push(real(y_col)?);
        z.push(match cell(z_col)? {
            "1" => true,
            "0" => false,
            s => return Err(parse_error(row, "z", format!("`{s}` is not 0 or 1"))),
        });
        for (col, &(_, idx)) in x.iter_mut().zip(&xs) {
            col.push(real(idx)?);
        }
        if let Some(c) = stratum_col {
            strata.push(cell(c)?.to_string());
        }
        if let Some(c) = cluster_col {
            clusters.push(cell(c)?.to_string());
        }
    }
    if y.is_empty() {
        return Err(parse_error(2, "", "no data rows"));
    }
    let n = y.len();
    let x = if x.is_empty() {
        Matrix::empty(n)
    } else {
        Matrix::from_columns(&x)?
    };
    let mut data = Dataset::new(y, z, x)?;
    if stratum_col.is_some() {
        data = data.with_strata(&encode_labels(&strata))?;
    }
    if cluster_col.is_some() {
        data = data.with_clusters(&encode_labels(&clusters))?;
    }
    Ok(Table {
        data,
        covariates: xs.iter().map(|&(k, _)| format!("x{k}")).collect(),
    })
}

/// Non-finite values as the strings `inf`, `-inf` and `nan`.
pub mod float_or_string {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(de::Error::custom(format!("invalid number `{s}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateJson {
    pub tau_hat: f64,
    pub se_classic: f64,
    pub se_robust: f64,
}

impl From<&EstimateTriple> for EstimateJson {
    fn from(t: &EstimateTriple) -> Self {
        EstimateJson {
            tau_hat: t.tau_hat,
            se_classic: t.se_classic,
            se_robust: t.se_robust,
        }
    }
}

/// Counts of finite replicate statistics in 20 equal bins of `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateHistogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl ReplicateHistogram {
    pub const BINS: usize = 20;

    pub fn new(replicates: &[f64]) -> Option<Self> {
        let finite: Vec<f64> = replicates
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        let lo = finite.iter().copied().reduce(f64::min)?;
        let hi = finite.iter().copied().reduce(f64::max)?;
        let mut counts = vec![0; Self::BINS];
        let width = (hi - lo) / Self::BINS as f64;
        for v in finite {
            let b = if width > 0.0 {
                (((v - lo) / width) as usize).min(Self::BINS - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Some(ReplicateHistogram { lo, hi, counts })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub version: String,
    pub command: String,
    pub statistic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    pub design: DesignEcho,
    pub seed: u64,
    pub mode: Mode,
    pub sided: Sided,
    #[serde(with = "float_or_string")]
    pub t_obs: f64,
    pub p_value: f64,
    pub mc_se: f64,
    pub replicates: usize,
    pub extreme: usize,
    pub failed_replicates: usize,
    pub estimate: EstimateJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<CiResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<ReplicateHistogram>,
}

impl ReportJson {
    pub fn new(command: &str, res: &FrtResult, estimate: &EstimateTriple) -> Self {
        ReportJson {
            version: VERSION.to_string(),
            command: command.to_string(),
            statistic: res.spec.label(),
            scheme: None,
            design: res.design.echo(),
            seed: res.seed,
            mode: res.mode,
            sided: res.sided,
            t_obs: res.t_obs,
            p_value: res.p_value,
            mc_se: res.mc_se,
            replicates: res.replicates.len(),
            extreme: res.extreme,
            failed_replicates: res.replicates.iter().filter(|v| v.is_nan()).count(),
            estimate: estimate.into(),
            ci: None,
            histogram: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorJson {
    pub version: String,
    pub error: ErrorBody,
}

impl ErrorJson {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        ErrorJson {
            version: VERSION.to_string(),
            error: ErrorBody {
                kind: kind.to_string(),
                message: message.into(),
            },
        }
    }
}

impl From<&Error> for ErrorJson {
    fn from(e: &Error) -> Self {
        ErrorJson::new(e.kind(), e.to_string())
    }
}

/// `v` with 17 significant digits, positional for moderate exponents.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0.0" } else { "0.0" }.to_string();
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let fixed = format!("{:.*}", (16 - exp) as usize, v);
        let trimmed = fixed.trim_end_matches('0');
        if trimmed.ends_with('.') {
            format!("{trimmed}0")
        } else if trimmed.contains('.') {
            trimmed.to_string()
        } else {
            format!("{trimmed}.0")
        }
    } else {
        let m = mantissa.trim_end_matches('0');
        let m = m
            .strip_suffix('.')
            .map(|s| format!("{s}.0"))
            .unwrap_or_else(|| m.to_string());
        format!("{m}e{exp}")
    }
}

struct SigFormatter;

impl serde_json::ser::Formatter for SigFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Compact JSON with 17 significant digits per number and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Io(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}
