//! File formats: headed CSV for traces/histograms/curves, flat key-value
//! text for configuration, atomic writes, and provenance hashing.
//!
//! All files use SI base units in their column names (`freq_hz`,
//! `time_s`, `v_volts`); display-oriented scaling happens only in plot
//! emission.

use super::PipelineError;
use crate::lifetime::DecayHistogram;
use crate::wgqed::{ScanMeta, ScanTrace};
use std::fmt::Write as _;
use std::path::Path;

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: source.to_string(),
    }
}

fn validation(msg: impl Into<String>) -> PipelineError {
    PipelineError::Validation(msg.into())
}

/// Write-then-rename so readers never observe a half-written file.
pub fn atomic_write(path: &Path, contents: &str) -> Result<(), PipelineError> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    std::fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// FNV-1a-64 stamp of a file's bytes, as fixed-width hex.
pub fn file_stamp(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(format!("{:016x}", crate::stats::fnv1a64(&bytes)))
}

// ---------------------------------------------------------------- key-value

/// Flat `key = value` configuration with `#` comments. Later keys
/// override earlier ones; insertion order is preserved for hashing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| validation(format!("line {}: expected `key = value`", lineno + 1)))?;
            entries.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, PipelineError> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| validation(format!("key `{key}`: `{v}` is not a number")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, PipelineError> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| validation(format!("key `{key}`: `{v}` is not an integer")))
            })
            .transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, PipelineError> {
        Ok(self.get_f64(key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, PipelineError> {
        Ok(self.get_u64(key)?.unwrap_or(default))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical text used for the provenance hash.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

// --------------------------------------------------------------------- CSV

fn parse_comment_meta(line: &str) -> Option<(String, f64)> {
    let body = line.strip_prefix('#')?.trim();
    let (k, v) = body.split_once('=')?;
    let value = v.trim().parse::<f64>().ok()?;
    Some((k.trim().to_string(), value))
}

fn split_csv_line(line: &str) -> Vec<&str> {
    line.split(',').map(|f| f.trim()).collect()
}

fn parse_rows(
    path_label: &str,
    text: &str,
    expected_header: &[&str],
) -> Result<(Vec<(String, f64)>, Vec<Vec<f64>>), PipelineError> {
    let mut meta = Vec::new();
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if let Some(kv) = parse_comment_meta(line) {
                meta.push(kv);
            }
            continue;
        }
        if !header_seen {
            let fields = split_csv_line(line);
            if fields != expected_header {
                return Err(validation(format!(
                    "{path_label}: expected header `{}`, found `{line}`",
                    expected_header.join(",")
                )));
            }
            header_seen = true;
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() != expected_header.len() {
            return Err(validation(format!(
                "{path_label} line {}: expected {} columns",
                lineno + 1,
                expected_header.len()
            )));
        }
        let mut row = Vec::with_capacity(fields.len());
        for f in fields {
            row.push(f.parse::<f64>().map_err(|_| {
                validation(format!("{path_label} line {}: `{f}` is not a number", lineno + 1))
            })?);
        }
        rows.push(row);
    }
    if !header_seen {
        return Err(validation(format!("{path_label}: missing header line")));
    }
    Ok((meta, rows))
}

pub fn read_scan_csv(path: &Path) -> Result<ScanTrace<f64>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let (meta, rows) = parse_rows(
        &path.display().to_string(),
        &text,
        &["freq_hz", "transmission"],
    )?;
    let axis: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let values: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let get = |k: &str| meta.iter().find(|(mk, _)| mk == k).map(|(_, v)| *v);
    let sm = ScanMeta {
        gate_v: get("gate_v").unwrap_or(0.0),
        power_w: get("power_w").unwrap_or(0.0),
    };
    ScanTrace::new(axis, values, sm).map_err(|e| validation(format!("{}: {e}", path.display())))
}

pub fn scan_csv_string(trace: &ScanTrace<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# gate_v = {}", trace.meta.gate_v);
    let _ = writeln!(s, "# power_w = {}", trace.meta.power_w);
    let _ = writeln!(s, "# step_hz = {}", trace.step);
    let _ = writeln!(s, "freq_hz,transmission");
    for (a, v) in trace.axis.iter().zip(&trace.values) {
        let _ = writeln!(s, "{a},{v}");
    }
    s
}

pub fn read_decay_csv(path: &Path) -> Result<DecayHistogram<f64>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let (meta, rows) = parse_rows(
        &path.display().to_string(),
        &text,
        &["time_s", "counts", "irf_counts"],
    )?;
    let rep = meta
        .iter()
        .find(|(k, _)| k == "rep_period_s")
        .map(|(_, v)| *v)
        .ok_or_else(|| validation(format!("{}: missing `# rep_period_s = ...`", path.display())))?;
    if rows.len() < 8 {
        return Err(validation(format!("{}: not enough bins", path.display())));
    }
    let centers: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let width = centers[1] - centers[0];
    if !(width > 0.0) {
        return Err(validation(format!("{}: time axis must increase", path.display())));
    }
    let mut edges: Vec<f64> = centers.iter().map(|c| c - width / 2.0).collect();
    edges.push(centers[centers.len() - 1] + width / 2.0);
    let counts: Vec<u64> = rows.iter().map(|r| r[1].round().max(0.0) as u64).collect();
    let irf: Vec<f64> = rows.iter().map(|r| r[2].max(0.0)).collect();
    DecayHistogram::new(edges, counts, irf, rep)
        .map_err(|e| validation(format!("{}: {e}", path.display())))
}

pub fn decay_csv_string(hist: &DecayHistogram<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# rep_period_s = {}", hist.rep_period);
    let _ = writeln!(s, "time_s,counts,irf_counts");
    let centers = hist.centers();
    let t0 = hist.bin_edges[0];
    for i in 0..hist.n_bins() {
        let _ = writeln!(s, "{},{},{}", centers[i] + t0, hist.counts[i], hist.irf[i]);
    }
    s
}

pub fn read_xy_csv(
    path: &Path,
    header: [&str; 2],
) -> Result<Vec<(f64, f64)>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let (_, rows) = parse_rows(&path.display().to_string(), &text, &header)?;
    Ok(rows.into_iter().map(|r| (r[0], r[1])).collect())
}

pub fn xy_csv_string(header: [&str; 2], data: &[(f64, f64)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{},{}", header[0], header[1]);
    for (x, y) in data {
        let _ = writeln!(s, "{x},{y}");
    }
    s
}

pub const IV_HEADER: [&str; 2] = ["v_volts", "i_amps"];
pub const RC_HEADER: [&str; 2] = ["f_ac_hz", "intensity_counts_per_s"];
