//! On-disk formats: stress-strain series as CSV and dataset manifests as
//! JSON.
//!
//! CSV files carry a `# schema=1` version line, a header, and one row per
//! program point. Files are written with LF line endings; CRLF input is
//! accepted. Floats are written in shortest round-trip form, so reading a
//! file back reproduces the exact values and regenerating a dataset from
//! its manifest is byte-identical.

use crate::driver::LoadingProgram;
use crate::error::{Error, Result};
use crate::potentials::PotentialSet;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub step: usize,
    /// axial stretch
    pub lambda: f64,
    /// axial Cauchy stress (GPa)
    pub sigma11: f64,
    pub k: Option<f64>,
    pub delta_lambda: Option<f64>,
    /// effective stress at the step (GPa)
    pub fy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Series {
    pub rows: Vec<SeriesRow>,
}

impl Series {
    pub fn lambdas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.lambda).collect()
    }

    pub fn stresses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sigma11).collect()
    }

    pub fn from_columns(lambda: &[f64], sigma11: &[f64]) -> Result<Self> {
        if lambda.len() != sigma11.len() {
            return Err(Error::LengthMismatch {
                a: lambda.len(),
                b: sigma11.len(),
            });
        }
        Ok(Series {
            rows: lambda
                .iter()
                .zip(sigma11)
                .enumerate()
                .map(|(step, (&lambda, &sigma11))| SeriesRow {
                    step,
                    lambda,
                    sigma11,
                    k: None,
                    delta_lambda: None,
                    fy: None,
                })
                .collect(),
        })
    }

    fn has_extras(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.k.is_some() || r.delta_lambda.is_some() || r.fy.is_some())
    }
}

pub fn write_series(path: &Path, series: &Series) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# schema={SCHEMA_VERSION}\n"));
    let extras = series.has_extras();
    if extras {
        out.push_str("step,lambda,sigma11_gpa,k,delta_lambda,fy_gpa\n");
    } else {
        out.push_str("step,lambda,sigma11_gpa\n");
    }
    for r in &series.rows {
        if extras {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step,
                r.lambda,
                r.sigma11,
                r.k.unwrap_or(0.0),
                r.delta_lambda.unwrap_or(0.0),
                r.fy.unwrap_or(0.0)
            ));
        } else {
            out.push_str(&format!("{},{},{}\n", r.step, r.lambda, r.sigma11));
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("cannot parse {what} from {s:?}"),
    })
}

pub fn read_series(path: &Path) -> Result<Series> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(Error::MalformedRow {
        line: 1,
        reason: "empty file".into(),
    })?;
    let first = first.trim_end_matches('\r');
    let found = first
        .strip_prefix("# schema=")
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or(Error::MalformedRow {
            line: 1,
            reason: format!("expected '# schema=N' version line, got {first:?}"),
        })?;
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaVersionMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let (_, header) = lines.next().ok_or(Error::MalformedRow {
        line: 2,
        reason: "missing header".into(),
    })?;
    let header = header.trim_end_matches('\r');
    let extras = match header {
        "step,lambda,sigma11_gpa" => false,
        "step,lambda,sigma11_gpa,k,delta_lambda,fy_gpa" => true,
        other => {
            return Err(Error::MalformedRow {
                line: 2,
                reason: format!("unrecognized header {other:?}"),
            })
        }
    };
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let want = if extras { 6 } else { 3 };
        if fields.len() != want {
            return Err(Error::MalformedRow {
                line: line_no,
                reason: format!("expected {want} fields, got {}", fields.len()),
            });
        }
        let row = SeriesRow {
            step: parse_field(fields[0], line_no, "step")?,
            lambda: parse_field(fields[1], line_no, "lambda")?,
            sigma11: parse_field(fields[2], line_no, "sigma11")?,
            k: extras
                .then(|| parse_field(fields[3], line_no, "k"))
                .transpose()?,
            delta_lambda: extras
                .then(|| parse_field(fields[4], line_no, "delta_lambda"))
                .transpose()?,
            fy: extras
                .then(|| parse_field(fields[5], line_no, "fy"))
                .transpose()?,
        };
        if !(row.lambda.is_finite() && row.sigma11.is_finite()) {
            return Err(Error::MalformedRow {
                line: line_no,
                reason: "non-finite value".into(),
            });
        }
        rows.push(row);
    }
    Ok(Series { rows })
}

/// Provenance record of a generated dataset: everything needed to reproduce
/// the file bit for bit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: u32,
    pub model: PotentialSet,
    pub program: LoadingProgram,
    pub noise_std: f64,
    pub noise_seed: u64,
    pub series_file: String,
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.schema != SCHEMA_VERSION {
        return Err(Error::SchemaVersionMismatch {
            found: m.schema,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(m)
}

/// Simulate the program and add zero-mean Gaussian noise to the stresses.
pub fn generate_synthetic(
    set: &PotentialSet,
    program: &LoadingProgram,
    noise_std: f64,
    noise_seed: u64,
) -> Result<Series> {
    use rand::{Rng, SeedableRng};
    let sim = crate::driver::run_program(
        &set.bind_f64(),
        program,
        &crate::constitutive::SolverSettings::default(),
    )?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(noise_seed);
    let mut series = Series::from_columns(&sim.lambda, &sim.sigma11)?;
    if noise_std > 0.0 {
        for row in &mut series.rows {
            // Box-Muller
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            row.sigma11 += noise_std * z;
        }
    }
    Ok(series)
}
