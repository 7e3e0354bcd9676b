//! CSV and JSON serialization: samples with sidecars, result tables,
//! plot-data curves, and reproducibility manifests with content hashes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{OracleReport, RateFit, RiskTable, TailCurve};
use crate::model::Sample;
use crate::rng::RNG_SCHEME;

/// Format a float with 17 significant digits (round-trip exact for f64).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, err: std::io::Error) -> Error {
    Error::InvalidArgument(format!("{}: {err}", path.display()))
}

/// Write a sample as CSV (`x_1,...,x_d,y`) plus a JSON sidecar
/// `{seed, n, d, function_id}` at the same path with extension `.json`.
pub fn write_sample_csv(path: &Path, sample: &Sample) -> Result<PathBuf> {
    let d = sample.grid.dimension();
    let mut out = String::new();
    for j in 1..=d {
        out.push_str(&format!("x_{j},"));
    }
    out.push_str("y\n");
    for (x, &yv) in sample.grid.iter_points().zip(&sample.y_values) {
        for c in x {
            out.push_str(&fmt_f64(*c));
            out.push(',');
        }
        out.push_str(&fmt_f64(yv));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))?;

    let sidecar = path.with_extension("json");
    let meta = json!({
        "seed": sample.seed,
        "n": sample.len(),
        "d": d,
        "function_id": sample.function_id.to_string(),
    });
    write_json(&sidecar, &meta)?;
    Ok(sidecar)
}

/// Read a sample back from CSV plus sidecar.
pub fn read_sample_csv(path: &Path) -> Result<Sample> {
    let sidecar = path.with_extension("json");
    let meta: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(&sidecar).map_err(|e| io_err(&sidecar, e))?,
    )
    .map_err(|e| Error::InvalidArgument(format!("{}: {e}", sidecar.display())))?;
    let n = meta["n"].as_u64().unwrap_or(0) as usize;
    let d = meta["d"].as_u64().unwrap_or(0) as usize;
    let seed = meta["seed"].as_u64().unwrap_or(0);
    let function_id = meta["function_id"].as_str().unwrap_or("custom").to_string();
    let grid = crate::model::DesignGrid::make(d, n)?;

    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut y_values = Vec::with_capacity(n);
    for (i, line) in body.lines().skip(1).enumerate() {
        let last = line
            .rsplit(',')
            .next()
            .ok_or_else(|| Error::InvalidArgument(format!("bad CSV row {i}")))?;
        let v: f64 = last
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad CSV value `{last}`")))?;
        y_values.push(v);
    }
    if y_values.len() != n {
        return Err(Error::InvalidArgument(format!(
            "CSV row count {} does not match sidecar n = {n}",
            y_values.len()
        )));
    }
    let id = crate::model::test_function(&function_id)
        .map(|f| f.id)
        .unwrap_or(crate::model::FunctionId::Custom(function_id));
    Ok(Sample {
        grid,
        y_values,
        seed,
        function_id: id,
    })
}

/// Serialize any value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    body.push('\n');
    fs::write(path, body).map_err(|e| io_err(path, e))
}

/// Risk table CSV, one row per cell.
pub fn write_table_csv(path: &Path, table: &RiskTable) -> Result<()> {
    let mut out = String::from(
        "function,n,points,reps,adaptive_risk,adaptive_se,oracle_risk,ratio,mean_selected_h,fallback_fraction,failed\n",
    );
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.function_id,
            r.n,
            r.points_used,
            r.reps,
            fmt_f64(r.adaptive_risk),
            fmt_f64(r.adaptive_se),
            fmt_f64(r.oracle_risk),
            fmt_f64(r.ratio),
            fmt_f64(r.mean_selected_h),
            fmt_f64(r.fallback_fraction),
            r.failed,
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Rate-fit CSV: one row per sample size and estimator (plot data).
pub fn write_rate_csv(path: &Path, fit: &RateFit) -> Result<()> {
    let mut out = String::from("estimator,n,risk\n");
    for (n, r) in fit.ns.iter().zip(&fit.risks) {
        out.push_str(&format!("bayes_oracle,{n},{}\n", fmt_f64(*r)));
    }
    for (n, r) in fit.ns.iter().zip(&fit.baseline_risks) {
        out.push_str(&format!("lse_oracle,{n},{}\n", fmt_f64(*r)));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Tail-curve CSV: eps, empirical tail probability (plot data).
pub fn write_tail_csv(path: &Path, curve: &TailCurve) -> Result<()> {
    let mut out = String::from("eps,prob\n");
    for (e, p) in curve.eps.iter().zip(&curve.prob) {
        out.push_str(&format!("{},{}\n", fmt_f64(*e), fmt_f64(*p)));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Oracle search CSV: candidate bandwidth, risk, standard error.
pub fn write_oracle_csv(path: &Path, report: &OracleReport) -> Result<()> {
    let mut out = String::from("h,risk,se\n");
    for (h, r, s) in &report.risks {
        out.push_str(&format!("{},{},{}\n", fmt_f64(*h), fmt_f64(*r), fmt_f64(*s)));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reproducibility record written next to every run's outputs. The embedded
/// `config` block is a complete configuration: feeding the manifest back via
/// `--config` reproduces the run byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub rng_scheme: String,
    pub command: String,
    pub config: serde_json::Value,
    pub outputs: Vec<OutputRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

/// SHA-256 of a file, hex encoded.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Assemble and write a manifest for a finished run.
pub fn write_manifest(
    path: &Path,
    command: &str,
    config: serde_json::Value,
    outputs: &[PathBuf],
) -> Result<RunManifest> {
    let records = outputs
        .iter()
        .map(|p| {
            Ok(OutputRecord {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        rng_scheme: RNG_SCHEME.to_string(),
        command: command.to_string(),
        config,
        outputs: records,
    };
    write_json(path, &manifest)?;
    Ok(manifest)
}

/// Append-friendly writer for small text reports.
pub fn write_text(path: &Path, body: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, test_function, DesignGrid};

    #[test]
    fn float_format_round_trips() {
        for &x in &[0.1, 1.0 / 3.0, 2.0_f64.powi(-40), 123456.789, -0.0, 1e-300] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn sample_csv_round_trip() {
        let dir = std::env::temp_dir().join("mulreg_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.csv");
        let f = test_function("f1").unwrap();
        let g = DesignGrid::make(1, 16).unwrap();
        let s = simulate(&f, &g, 5);
        write_sample_csv(&path, &s).unwrap();
        let back = read_sample_csv(&path).unwrap();
        assert_eq!(back.y_values, s.y_values);
        assert_eq!(back.seed, 5);
        assert_eq!(back.grid, s.grid);
    }

    #[test]
    fn manifest_hashes_outputs() {
        let dir = std::env::temp_dir().join("mulreg_manifest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let out = dir.join("table.csv");
        std::fs::write(&out, "a,b\n1,2\n").unwrap();
        let manifest_path = dir.join("manifest.json");
        let m = write_manifest(
            &manifest_path,
            "replicate-table",
            serde_json::json!({"reps": 2}),
            std::slice::from_ref(&out),
        )
        .unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.outputs[0].sha256.len(), 64);
        assert_eq!(m.rng_scheme, RNG_SCHEME);
        let again = sha256_file(&out).unwrap();
        assert_eq!(again, m.outputs[0].sha256);
    }
}
