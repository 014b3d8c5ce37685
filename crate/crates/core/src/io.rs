//! Score-matrix text files and the calibration container.
//!
//! Score matrix: UTF-8, LF line endings, a header of detector names, then one
//! comma-separated row of decimals per sample. No quoting.
//!
//! Calibration container, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   "OODCCAL\0"
//! version  u32
//! length   u64       payload byte count
//! payload  JSON      CalibrationFile
//! checksum 32 bytes  SHA-256 over everything above
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::combiners::{BaselineStats, BrownParams, Calibration, CombinerKind, HartungParams, FORMAT_VERSION};
use crate::ecdf::Ecdf;
use crate::error::{Error, Result};
use crate::matrix::ScoreMatrix;

pub const MAGIC: &[u8; 8] = b"OODCCAL\0";
const HEADER_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

/// Renders a float with 17 significant digits; parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let t = tok.trim();
    let lower = t.to_ascii_lowercase();
    if lower.contains("nan") || lower.contains("inf") {
        return Err(Error::Parse { line, msg: format!("non-finite token {t:?}") });
    }
    let v: f64 = t.parse().map_err(|_| Error::Parse { line, msg: format!("invalid number {t:?}") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("value {t:?} overflows") });
    }
    Ok(v)
}

/// Parses score-matrix text. Line numbers in errors are 1-based.
pub fn parse_score_matrix(text: &str) -> Result<ScoreMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
    let header = header.strip_prefix('\u{feff}').unwrap_or(header);
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if names.iter().any(String::is_empty) {
        return Err(Error::Parse { line: 1, msg: "empty detector name in header".into() });
    }
    let k = names.len();
    let mut data = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k {
            return Err(Error::RaggedRow { line: lineno, expected: k, found: fields.len() });
        }
        for f in fields {
            data.push(parse_f64(f, lineno)?);
        }
    }
    ScoreMatrix::new(names, data)
}

pub fn load_score_matrix(path: impl AsRef<Path>) -> Result<ScoreMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_score_matrix(&text)
}

pub fn render_score_matrix(m: &ScoreMatrix) -> String {
    let mut out = m.names().join(",");
    out.push('\n');
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_score_matrix(path: impl AsRef<Path>, m: &ScoreMatrix) -> Result<()> {
    write_atomic(path, render_score_matrix(m).as_bytes())
}

/// Writes to a temporary file in the target directory, then renames it over
/// `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectorEntry {
    name: String,
    reference: Vec<f64>,
}

/// Serialized form of a [`Calibration`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationFile {
    format_version: u32,
    kind: CombinerKind,
    r: usize,
    detectors: Vec<DetectorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    brown: Option<BrownParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hartung: Option<HartungParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    null_confidences: Option<Vec<f64>>,
}

pub fn save_calibration(cal: &Calibration) -> Vec<u8> {
    let file = CalibrationFile {
        format_version: cal.format_version,
        kind: cal.kind,
        r: cal.r,
        detectors: cal
            .ecdfs
            .iter()
            .map(|e| DetectorEntry { name: e.name().to_string(), reference: e.reference().to_vec() })
            .collect(),
        brown: cal.brown,
        hartung: cal.hartung.clone(),
        null_confidences: cal.null_confidences.clone(),
    };
    let payload = serde_json::to_vec(&file).expect("calibration serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&cal.format_version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(digest.as_slice());
    out
}

pub fn load_calibration(bytes: &[u8]) -> Result<Calibration> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated);
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated);
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let total = HEADER_LEN.checked_add(len).and_then(|t| t.checked_add(CHECKSUM_LEN)).ok_or(Error::Truncated)?;
    if bytes.len() < total {
        return Err(Error::Truncated);
    }
    if bytes.len() > total {
        return Err(Error::Payload(format!("{} trailing bytes", bytes.len() - total)));
    }
    let body_end = HEADER_LEN + len;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(Error::Checksum);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, supported: FORMAT_VERSION });
    }
    let file: CalibrationFile =
        serde_json::from_slice(&bytes[HEADER_LEN..body_end]).map_err(|e| Error::Payload(e.to_string()))?;
    from_file(file)
}

fn from_file(file: CalibrationFile) -> Result<Calibration> {
    if file.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: file.format_version, supported: FORMAT_VERSION });
    }
    if file.detectors.is_empty() {
        return Err(Error::Payload("no detectors".into()));
    }
    let ecdfs =
        file.detectors.into_iter().map(|d| Ecdf::from_sorted(d.name, d.reference)).collect::<Result<Vec<_>>>()?;
    let k = ecdfs.len();
    let expect_brown = k >= 2 && file.kind == CombinerKind::Fisher;
    let expect_hartung = k >= 2 && file.kind == CombinerKind::Stouffer;
    let expect_null = k >= 2 && !expect_brown && !expect_hartung;
    if file.brown.is_some() != expect_brown
        || file.hartung.is_some() != expect_hartung
        || file.null_confidences.is_some() != expect_null
    {
        return Err(Error::Payload(format!(
            "correction blocks do not match combiner {} with {k} detectors",
            file.kind
        )));
    }
    if let Some(b) = &file.brown {
        BrownParams::new(b.c, b.k_prime).map_err(|e| Error::Payload(e.to_string()))?;
    }
    if let Some(h) = &file.hartung {
        if h.weights.len() != k {
            return Err(Error::Payload("Hartung weights do not match detector count".into()));
        }
    }
    Ok(Calibration {
        baseline: BaselineStats::from_ecdfs(&ecdfs),
        ecdfs,
        kind: file.kind,
        brown: file.brown,
        hartung: file.hartung,
        null_confidences: file.null_confidences,
        r: file.r,
        format_version: file.format_version,
    })
}

pub fn write_calibration(path: impl AsRef<Path>, cal: &Calibration) -> Result<()> {
    write_atomic(path, &save_calibration(cal))
}

pub fn read_calibration(path: impl AsRef<Path>) -> Result<Calibration> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_calibration(&bytes)
}
