//! Disk cache for the constructed generator set.
//!
//! Versioned plain-text format: one row per polynomial piece (coefficients
//! in the local coordinate of the piece) with 17 significant digits,
//! terminated by a sha256 line over the payload so a corrupted or
//! hand-edited cache is detected and rebuilt.

use super::{BasisError, GeneratorSet};
use crate::splinekit::PiecewisePoly;
use sha2::{Digest, Sha256};
use std::path::Path;

const FORMAT_HEADER: &str = "# generator-cache v1";

fn generator_rows(set: &GeneratorSet) -> Vec<(String, &PiecewisePoly<f64>)> {
    let mut rows: Vec<(String, &PiecewisePoly<f64>)> = Vec::new();
    for (i, f) in set.scaling.iter().enumerate() {
        rows.push((format!("phi{}", i + 1), f));
    }
    rows.push(("phiL".to_string(), &set.phi_l));
    rows.push(("phiR".to_string(), &set.phi_r));
    for (i, f) in set.wavelets.iter().enumerate() {
        rows.push((format!("psi{}", i + 1), f));
    }
    for (name, f) in ["psiL1", "psiL2", "psiR1", "psiR2"]
        .iter()
        .zip(&set.boundary_wavelets)
    {
        rows.push((name.to_string(), f));
    }
    rows
}

fn render_payload(set: &GeneratorSet) -> String {
    let mut out = String::from(FORMAT_HEADER);
    out.push('\n');
    for (name, poly) in generator_rows(set) {
        let bp = poly.breakpoints();
        for (i, piece) in poly.pieces().iter().enumerate() {
            out.push_str(&format!(
                "{} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}\n",
                name, bp[i], bp[i + 1], piece[0], piece[1], piece[2], piece[3]
            ));
        }
    }
    out
}

/// Serializes the generator set with an integrity hash. The write is atomic:
/// a temporary file in the same directory is renamed over the target.
pub fn write_generator_cache(set: &GeneratorSet, path: &Path) -> Result<(), BasisError> {
    let payload = render_payload(set);
    let hash = Sha256::digest(payload.as_bytes());
    let contents = format!("{payload}sha256 {hash:x}\n");
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| BasisError::Cache(e.to_string()))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("cache")
    ));
    std::fs::write(&tmp, contents).map_err(|e| BasisError::Cache(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| BasisError::Cache(e.to_string()))?;
    Ok(())
}

/// Reads a generator cache, verifying format version and integrity hash.
pub fn read_generator_cache(path: &Path) -> Result<GeneratorSet, BasisError> {
    let contents = std::fs::read_to_string(path).map_err(|e| BasisError::Cache(e.to_string()))?;
    let Some((payload, hash_line)) = contents.trim_end().rsplit_once('\n') else {
        return Err(BasisError::Cache("truncated cache file".to_string()));
    };
    let payload = format!("{payload}\n");
    let Some(stored) = hash_line.strip_prefix("sha256 ") else {
        return Err(BasisError::Cache("missing integrity line".to_string()));
    };
    let actual = format!("{:x}", Sha256::digest(payload.as_bytes()));
    if stored.trim() != actual {
        return Err(BasisError::Cache("integrity hash mismatch".to_string()));
    }
    let mut lines = payload.lines();
    if lines.next() != Some(FORMAT_HEADER) {
        return Err(BasisError::Cache("unknown cache format version".to_string()));
    }

    let mut parsed: Vec<(String, Vec<f64>, Vec<[f64; 4]>)> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(BasisError::Cache(format!(
                "row {}: expected 7 fields, found {}",
                idx + 2,
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 6];
        for (slot, field) in vals.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse()
                .map_err(|e| BasisError::Cache(format!("row {}: {}", idx + 2, e)))?;
        }
        let name = fields[0];
        if parsed.last().map(|(n, _, _)| n.as_str()) != Some(name) {
            parsed.push((name.to_string(), vec![vals[0]], Vec::new()));
        }
        let entry = parsed.last_mut().unwrap();
        entry.1.push(vals[1]);
        entry.2.push([vals[2], vals[3], vals[4], vals[5]]);
    }

    let take = |name: &str| -> Result<PiecewisePoly<f64>, BasisError> {
        let entry = parsed
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| BasisError::Cache(format!("missing generator `{name}`")))?;
        Ok(PiecewisePoly::new(entry.1.clone(), entry.2.clone()))
    };

    let scaling = (1..=6)
        .map(|i| take(&format!("phi{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    let phi_l = take("phiL")?;
    let phi_r = take("phiR")?;
    let wavelets = (1..=6)
        .map(|i| take(&format!("psi{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    let boundary_wavelets = ["psiL1", "psiL2", "psiR1", "psiR2"]
        .iter()
        .map(|n| take(n))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(GeneratorSet {
        scaling,
        phi_l,
        phi_r,
        wavelets,
        boundary_wavelets,
    })
}
