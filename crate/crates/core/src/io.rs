//! Long-format tensor files, JSON descriptors, run configuration and the
//! draw/summary tables written by the command-line tool.
//!
//! A tensor file is CSV with header `i1,...,iN,value`, 1-based indices and
//! `NA` for a missing cell. Cells absent from the file are missing. Values
//! are written with 17 significant digits so they read back bit-exactly.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::draws::{ImputationDraws, McmcConfig};
use crate::error::{Error, Result};
use crate::select::{CvConfig, Holdout, RosterPolicy};
use crate::separable::{default_policies, ModePolicy};
use crate::sim::Engine;
use crate::tensor::{linear_index, multi_index, DenseTensor, MaskedTensor};

pub const FORMAT_VERSION: u32 = 1;

/// Sidecar description of a tensor file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub format_version: u32,
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_names: Option<Vec<String>>,
    /// 1-based mode whose fibers tend to be missing together.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiber_missing_mode: Option<usize>,
}

impl Descriptor {
    pub fn new(dims: Vec<usize>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            dims,
            mode_names: None,
            fiber_missing_mode: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported descriptor format_version {}",
                self.format_version
            )));
        }
        if let Some(names) = &self.mode_names {
            if names.len() != self.dims.len() {
                return Err(Error::Config(format!(
                    "{} mode names for {} modes",
                    names.len(),
                    self.dims.len()
                )));
            }
        }
        if let Some(m) = self.fiber_missing_mode {
            if m == 0 || m > self.dims.len() {
                return Err(Error::Config(format!("fiber_missing_mode {m} out of range")));
            }
        }
        Ok(())
    }
}

/// Default sidecar path: `<file>.json`.
pub fn descriptor_path(tensor: &Path) -> PathBuf {
    let mut s = tensor.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_descriptor(path: &Path) -> Result<Descriptor> {
    let d: Descriptor = serde_json::from_reader(File::open(path)?)?;
    d.validate()?;
    Ok(d)
}

pub fn write_descriptor(path: &Path, d: &Descriptor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, d)?;
    writeln!(w)?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads a tensor file. Dims come from `descriptor`, else from the sidecar
/// `<path>.json` if present, else from the largest index in each column.
pub fn read_tensor(path: &Path, descriptor: Option<&Descriptor>) -> Result<(MaskedTensor, Descriptor)> {
    let side = descriptor_path(path);
    let desc = match descriptor {
        Some(d) => {
            d.validate()?;
            Some(d.clone())
        }
        None if side.exists() => Some(read_descriptor(&side)?),
        None => None,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let order = header.len().saturating_sub(1);
    let expected: Vec<String> = (1..=order)
        .map(|k| format!("i{k}"))
        .chain(std::iter::once("value".to_string()))
        .collect();
    if order == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            path,
            1,
            format!("header must be {}", expected.join(",")),
        ));
    }
    if let Some(d) = &desc {
        if d.dims.len() != order {
            return Err(parse_err(
                path,
                1,
                format!("{order} index columns but descriptor has {} modes", d.dims.len()),
            ));
        }
    }
    let mut rows: Vec<(Vec<usize>, Option<f64>, usize)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != order + 1 {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", order + 1, rec.len())));
        }
        let mut idx = Vec::with_capacity(order);
        for (m, f) in rec.iter().take(order).enumerate() {
            let i: usize = f
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad index '{f}' in column i{}", m + 1)))?;
            if i == 0 {
                return Err(parse_err(path, line, format!("index in column i{} must be ≥ 1", m + 1)));
            }
            if let Some(d) = &desc {
                if i > d.dims[m] {
                    return Err(parse_err(
                        path,
                        line,
                        format!("index {i} out of range for mode {} of size {}", m + 1, d.dims[m]),
                    ));
                }
            }
            idx.push(i - 1);
        }
        let raw = &rec[order];
        let value = if raw == "NA" {
            None
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad value '{raw}'")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value '{raw}'")));
            }
            Some(v)
        };
        rows.push((idx, value, line));
    }
    let desc = match desc {
        Some(d) => d,
        None => {
            if rows.is_empty() {
                return Err(parse_err(path, 1, "no rows and no descriptor"));
            }
            let dims = (0..order)
                .map(|m| rows.iter().map(|r| r.0[m] + 1).max().unwrap_or(1))
                .collect();
            Descriptor::new(dims)
        }
    };
    let len: usize = desc.dims.iter().product();
    let mut data = vec![f64::NAN; len];
    let mut seen = HashSet::with_capacity(rows.len());
    for (idx, v, line) in rows {
        let lin = linear_index(&desc.dims, &idx);
        if !seen.insert(lin) {
            let pretty: Vec<String> = idx.iter().map(|i| (i + 1).to_string()).collect();
            return Err(parse_err(path, line, format!("duplicate cell ({})", pretty.join(","))));
        }
        if let Some(v) = v {
            data[lin] = v;
        }
    }
    let t = MaskedTensor::from_nan(desc.dims.clone(), data)?;
    Ok((t, desc))
}

pub fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn index_fields(dims: &[usize], lin: usize) -> String {
    multi_index(dims, lin)
        .iter()
        .map(|i| (i + 1).to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn index_header(order: usize) -> String {
    (1..=order).map(|k| format!("i{k}")).collect::<Vec<_>>().join(",")
}

/// Writes every cell; missing cells as `NA`.
pub fn write_tensor(path: &Path, t: &MaskedTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{},value", index_header(t.order()))?;
    for lin in 0..t.len() {
        let v = if t.is_observed(lin) {
            fmt_value(t.raw()[lin])
        } else {
            "NA".to_string()
        };
        writeln!(w, "{},{v}", index_fields(t.dims(), lin))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dense(path: &Path, t: &DenseTensor) -> Result<()> {
    write_tensor(path, &MaskedTensor::fully_observed(t.clone())?)
}

/// `draw_id,i1..iN,value`, one row per retained draw and missing cell;
/// draws are numbered from 1 in chain order.
pub fn write_draws(path: &Path, d: &ImputationDraws) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "draw_id,{},value", index_header(d.dims.len()))?;
    let labels: Vec<String> = d.missing.iter().map(|&l| index_fields(&d.dims, l)).collect();
    for (k, row) in d.draws.iter().enumerate() {
        for (label, v) in labels.iter().zip(row) {
            writeln!(w, "{},{label},{}", k + 1, fmt_value(*v))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a draws table for the missing cells of `data`. Every draw must
/// list every missing cell exactly once.
pub fn read_draws(path: &Path, data: &MaskedTensor) -> Result<ImputationDraws> {
    let order = data.order();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let expected = format!("draw_id,{},value", index_header(order));
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != expected {
        return Err(parse_err(path, 1, format!("header must be {expected}")));
    }
    let mut out = ImputationDraws::new(data.dims().to_vec(), data.missing().to_vec());
    let nm = out.n_missing();
    let mut current: Option<(usize, Vec<f64>, usize)> = None;
    let finish = |cur: (usize, Vec<f64>, usize), out: &mut ImputationDraws, line: usize| -> Result<()> {
        let (id, row, filled) = cur;
        if filled != nm {
            return Err(parse_err(path, line, format!("draw {id} lists {filled} of {nm} missing cells")));
        }
        out.push(0, row);
        Ok(())
    };
    let mut last_line = 1;
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        last_line = line;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != order + 2 {
            return Err(parse_err(path, line, format!("expected {} fields", order + 2)));
        }
        let id: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad draw id '{}'", &rec[0])))?;
        let mut idx = Vec::with_capacity(order);
        for m in 0..order {
            let i: usize = rec[m + 1]
                .parse()
                .ok()
                .filter(|&i| i >= 1 && i <= data.dims()[m])
                .ok_or_else(|| parse_err(path, line, format!("bad index in column i{}", m + 1)))?;
            idx.push(i - 1);
        }
        let v: f64 = rec[order + 1]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(path, line, "bad value"))?;
        let lin = linear_index(data.dims(), &idx);
        let pos = out
            .position(lin)
            .ok_or_else(|| parse_err(path, line, "cell is observed in the data"))?;
        if current.as_ref().is_some_and(|c| c.0 != id) {
            let done = current.take().expect("checked");
            finish(done, &mut out, line)?;
        }
        let cur = current.get_or_insert_with(|| (id, vec![f64::NAN; nm], 0));
        if !cur.1[pos].is_nan() {
            return Err(parse_err(path, line, format!("duplicate cell in draw {id}")));
        }
        cur.1[pos] = v;
        cur.2 += 1;
    }
    if let Some(c) = current {
        finish(c, &mut out, last_line)?;
    }
    Ok(out)
}

/// `i1..iN,mean,sd,q025,q975` per missing cell.
pub fn write_summary(path: &Path, d: &ImputationDraws) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{},mean,sd,q025,q975", index_header(d.dims.len()))?;
    for (&lin, s) in d.missing.iter().zip(d.summaries()) {
        writeln!(
            w,
            "{},{},{},{},{}",
            index_fields(&d.dims, lin),
            fmt_value(s.mean),
            fmt_value(s.sd),
            fmt_value(s.q025),
            fmt_value(s.q975)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Cross-validation section of [`RunConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSection {
    pub folds: usize,
    /// `entry` or `fiber`.
    pub holdout: String,
    /// 1-based mode for fiber holdout.
    pub holdout_mode: Option<usize>,
    /// Defaults to the MCMC seed.
    pub seed: Option<u64>,
}

impl Default for CvSection {
    fn default() -> Self {
        Self {
            folds: 4,
            holdout: "entry".into(),
            holdout_mode: None,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub engine: Engine,
    #[serde(default)]
    pub rank: Option<usize>,
    /// Candidate ranks for cross-validation.
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    #[serde(default)]
    pub mcmc: McmcConfig,
    /// One policy per mode; defaults to mode 1 identity, others wishart.
    #[serde(default)]
    pub policies: Option<Vec<ModePolicy>>,
    #[serde(default)]
    pub cv: CvSection,
    #[serde(default)]
    pub roster: Option<RosterPolicy>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        self.mcmc.validate()?;
        if self.rank == Some(0) {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        self.cv_config()?.validate()?;
        if let Some(r) = &self.roster {
            if !(r.threshold > 0.0) {
                return Err(Error::Config("roster threshold must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn rank(&self) -> Result<usize> {
        self.rank
            .ok_or_else(|| Error::Config("`rank` is required for this command".into()))
    }

    /// Policies for an order-`order` tensor.
    pub fn policies(&self, order: usize) -> Result<Vec<ModePolicy>> {
        match &self.policies {
            None => Ok(default_policies(order)),
            Some(p) if p.len() == order => Ok(p.clone()),
            Some(p) => Err(Error::Config(format!(
                "{} mode policies for an order-{order} tensor",
                p.len()
            ))),
        }
    }

    pub fn cv_config(&self) -> Result<CvConfig> {
        let holdout = match (self.cv.holdout.as_str(), self.cv.holdout_mode) {
            ("entry", None) => Holdout::Entry,
            ("fiber", Some(m)) if m >= 1 => Holdout::Fiber(m - 1),
            ("fiber", _) => {
                return Err(Error::Config("fiber holdout needs holdout_mode ≥ 1".into()));
            }
            ("entry", Some(_)) => {
                return Err(Error::Config("holdout_mode only applies to fiber holdout".into()));
            }
            (other, _) => {
                return Err(Error::Config(format!("unknown holdout unit '{other}'")));
            }
        };
        Ok(CvConfig {
            folds: self.cv.folds,
            ranks: self
                .ranks
                .clone()
                .or_else(|| self.rank.map(|r| vec![r]))
                .unwrap_or_else(|| vec![1, 2, 3, 4, 5]),
            holdout,
            seed: self.cv.seed.unwrap_or(self.mcmc.seed),
        })
    }
}

/// Parses and validates a JSON run configuration.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: RunConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}
