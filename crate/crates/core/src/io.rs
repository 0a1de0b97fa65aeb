//! File formats: binary portable pixmaps for frames, CSV/JSON metric
//! reports, mask serialization, and run manifests.

use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricReport;
use crate::sensor::{Frame, PatchMask, SensorError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed pixmap {path}: {reason}")]
    BadPixmap { path: String, reason: String },
    #[error("malformed json {path}: {reason}")]
    BadJson { path: String, reason: String },
    #[error("report axis and value lengths differ: {axis} vs {values}")]
    ReportLengthMismatch { axis: usize, values: usize },
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

fn ioerr(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write a frame as binary PGM (P5, 1 channel) or PPM (P6, 3 channels) with
/// maxval 255. Values are scaled by 255 and rounded.
pub fn write_pnm(frame: &Frame, path: &Path) -> Result<(), IoError> {
    let magic = if frame.channels == 1 { "P5" } else { "P6" };
    let mut buf = Vec::with_capacity(frame.data.len() + 32);
    write!(buf, "{}\n{} {}\n255\n", magic, frame.width, frame.height).unwrap();
    buf.extend(frame.data.iter().map(|v| (v * 255.0).round() as u8));
    std::fs::write(path, buf).map_err(ioerr(path))
}

fn read_token(r: &mut impl Read, path: &Path) -> Result<String, IoError> {
    // single-byte reads through a BufReader-wrapped source keep this simple
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    loop {
        if r.read(&mut byte).map_err(ioerr(path))? == 0 {
            break;
        }
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(IoError::BadPixmap {
            path: path.display().to_string(),
            reason: "unexpected end of header".into(),
        });
    }
    Ok(tok)
}

/// Read a binary P5/P6 pixmap back into a frame with values `k/255`.
pub fn read_pnm(path: &Path) -> Result<Frame, IoError> {
    let f = std::fs::File::open(path).map_err(ioerr(path))?;
    let mut r = BufReader::new(f);
    let magic = read_token(&mut r, path)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(IoError::BadPixmap {
                path: path.display().to_string(),
                reason: format!("unsupported magic {other:?}"),
            })
        }
    };
    let parse = |tok: String| -> Result<usize, IoError> {
        tok.parse().map_err(|_| IoError::BadPixmap {
            path: path.display().to_string(),
            reason: format!("bad header token {tok:?}"),
        })
    };
    let width = parse(read_token(&mut r, path)?)?;
    let height = parse(read_token(&mut r, path)?)?;
    let maxval = parse(read_token(&mut r, path)?)?;
    if maxval != 255 {
        return Err(IoError::BadPixmap {
            path: path.display().to_string(),
            reason: format!("unsupported maxval {maxval}"),
        });
    }
    let mut bytes = vec![0u8; width * height * channels];
    r.read_exact(&mut bytes).map_err(|_| IoError::BadPixmap {
        path: path.display().to_string(),
        reason: "truncated pixel data".into(),
    })?;
    let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Frame::new(width, height, channels, data, 0).map_err(IoError::from)
}

/// Masks serialize as JSON arrays of sensed patch indices.
#[derive(Serialize, Deserialize)]
struct MaskFile {
    n_patches: usize,
    sensed: Vec<usize>,
}

pub fn write_mask_json(mask: &PatchMask, path: &Path) -> Result<(), IoError> {
    let file = MaskFile {
        n_patches: mask.sensed.len(),
        sensed: mask.sensed_indices(),
    };
    let mut out = serde_json::to_vec(&file).expect("mask serializes");
    out.push(b'\n');
    std::fs::write(path, out).map_err(ioerr(path))
}

pub fn read_mask_json(path: &Path) -> Result<PatchMask, IoError> {
    let text = std::fs::read(path).map_err(ioerr(path))?;
    let file: MaskFile = serde_json::from_slice(&text).map_err(|e| IoError::BadJson {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    Ok(PatchMask::from_indices(file.n_patches, &file.sensed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Serialize a metric report; CSV rows are `axis,value[,stderr]`.
pub fn emit_report(report: &MetricReport, path: &Path, format: ReportFormat) -> Result<(), IoError> {
    if report.axis.len() != report.values.len() {
        return Err(IoError::ReportLengthMismatch {
            axis: report.axis.len(),
            values: report.values.len(),
        });
    }
    if let Some(se) = &report.stderr {
        if se.len() != report.values.len() {
            return Err(IoError::ReportLengthMismatch {
                axis: se.len(),
                values: report.values.len(),
            });
        }
    }
    let bytes = match format {
        ReportFormat::Csv => {
            let mut s = String::new();
            match &report.stderr {
                Some(se) => {
                    s.push_str("axis,value,stderr\n");
                    for ((a, v), e) in report.axis.iter().zip(&report.values).zip(se) {
                        s.push_str(&format!("{a},{v},{e}\n"));
                    }
                }
                None => {
                    s.push_str("axis,value\n");
                    for (a, v) in report.axis.iter().zip(&report.values) {
                        s.push_str(&format!("{a},{v}\n"));
                    }
                }
            }
            s.into_bytes()
        }
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
    };
    std::fs::write(path, bytes).map_err(ioerr(path))
}

pub fn read_report_json(path: &Path) -> Result<MetricReport, IoError> {
    let text = std::fs::read(path).map_err(ioerr(path))?;
    serde_json::from_slice(&text).map_err(|e| IoError::BadJson {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Every CLI run writes one of these next to its outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<String>,
}

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<(), IoError> {
    let mut out = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    out.push(b'\n');
    std::fs::write(path, out).map_err(ioerr(path))
}
