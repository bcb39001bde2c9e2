//! Shared CLI plumbing: exit codes, machine-readable error records,
//! resolved-config snapshots and versioned CSV headers.

use std::path::Path;

use gavsim_core::error::Error;
use serde::Serialize;

/// Exit codes: 0 ok, 2 config error, 3 infeasible, 4 numeric/overflow.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Infeasible(_) => 3,
        Error::Overflow(_) => 4,
        _ => 2,
    }
}

/// One-line JSON error record emitted on stderr before a nonzero exit.
pub fn error_record(err: &Error, code: i32) -> String {
    let kind = match err {
        Error::OutOfRange { .. } => "out_of_range",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::Config(_) => "config",
        Error::Calibration(_) => "calibration",
        Error::Infeasible(_) => "infeasible",
        Error::Overflow(_) => "overflow",
        Error::Format(_) => "format",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    };
    serde_json::json!({
        "error": { "kind": kind, "message": err.to_string(), "exit_code": code }
    })
    .to_string()
}

/// Stable hash of a resolved config (serialized field order is the
/// struct declaration order, so the hash is reproducible).
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    gavsim_core::io::bytes_digest(json.as_bytes())
}

/// Write the resolved-config snapshot next to an output file.
pub fn write_config_snapshot<T: Serialize>(
    out_path: &Path,
    config: &T,
) -> gavsim_core::Result<String> {
    let hash = config_hash(config);
    let mut snapshot = serde_json::to_value(config)?;
    if let Some(map) = snapshot.as_object_mut() {
        map.insert("config_sha256".into(), serde_json::Value::String(hash.clone()));
    }
    let path = snapshot_path(out_path);
    std::fs::write(path, serde_json::to_string_pretty(&snapshot)?)?;
    Ok(hash)
}

pub fn snapshot_path(out_path: &Path) -> std::path::PathBuf {
    let mut name = out_path.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    out_path.with_file_name(name)
}

/// Versioned CSV header comment carrying the config hash.
pub fn csv_header(kind: &str, version: u32, config_hash: &str) -> String {
    format!("# gavsim-{kind}-v{version} config_sha256={config_hash}\n")
}

/// Load a JSON config file when given, otherwise a default.
pub fn load_config<T: serde::de::DeserializeOwned + Default>(
    path: &Option<std::path::PathBuf>,
) -> gavsim_core::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

/// Parse `a4w4`-style precision labels.
pub fn parse_precision(s: &str) -> gavsim_core::Result<(u8, u8)> {
    let inner = s
        .strip_prefix('a')
        .and_then(|rest| rest.split_once('w'))
        .ok_or_else(|| Error::Config(format!("bad precision {s:?}, expected e.g. a4w4")))?;
    let a: u8 = inner
        .0
        .parse()
        .map_err(|_| Error::Config(format!("bad precision {s:?}")))?;
    let b: u8 = inner
        .1
        .parse()
        .map_err(|_| Error::Config(format!("bad precision {s:?}")))?;
    Ok((a, b))
}

/// Parse `C,L,K` triplets.
pub fn parse_triplet(s: &str) -> gavsim_core::Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("expected C,L,K, got {s:?}")));
    }
    let mut vals = [0usize; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad dimension {p:?}")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

/// Deterministic float formatting for CSV cells.
pub fn fmt_sci(v: f64) -> String {
    format!("{v:.6e}")
}

pub fn fmt_fixed(v: f64, digits: usize) -> String {
    format!("{v:.digits$}")
}
