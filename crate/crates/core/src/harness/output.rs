//! Output artifacts: result JSON documents and CSV traces, each carrying the
//! (seed, config hash, library version) reproducibility header. Floats are
//! written in shortest round-trip form, so parsing an output recovers every
//! value bit-exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sgld::{Histogram1d, Histogram2d, WeightedSample};
use crate::solver::SolverTrace;

/// Reproducibility stamp on every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub seed: u64,
    pub config_sha256: String,
    pub version: String,
}

impl Meta {
    pub fn new(seed: u64, config_sha256: String) -> Self {
        Meta { seed, config_sha256, version: env!("CARGO_PKG_VERSION").to_string() }
    }

    fn comment_line(&self) -> String {
        format!(
            "# seed={} config_sha256={} version={}\n",
            self.seed, self.config_sha256, self.version
        )
    }

    fn parse_comment(line: &str) -> Result<Meta> {
        let body = line
            .strip_prefix("# ")
            .ok_or_else(|| Error::OutputFormat("missing meta comment".into()))?;
        let mut seed = None;
        let mut hash = None;
        let mut version = None;
        for field in body.split_whitespace() {
            if let Some(v) = field.strip_prefix("seed=") {
                seed = v.parse().ok();
            } else if let Some(v) = field.strip_prefix("config_sha256=") {
                hash = Some(v.to_string());
            } else if let Some(v) = field.strip_prefix("version=") {
                version = Some(v.to_string());
            }
        }
        match (seed, hash, version) {
            (Some(seed), Some(config_sha256), Some(version)) => {
                Ok(Meta { seed, config_sha256, version })
            }
            _ => Err(Error::OutputFormat(format!("bad meta comment {line:?}"))),
        }
    }
}

/// result.json for `maxent` and `mle` runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub meta: Meta,
    pub mode: String,
    pub d: usize,
    pub feature_count: usize,
    pub feature_names: Vec<String>,
    /// Final parameters, flat layout.
    pub lambda: Vec<f64>,
    /// The same parameters as the symmetric Λ matrix.
    pub lambda_matrix: Vec<Vec<f64>>,
    /// Moments the solve targeted (exact m or empirical m̂).
    pub target_moments: Vec<f64>,
    /// Oracle moments of the fit, when d is within the enumeration cap.
    pub fitted_moments: Option<Vec<f64>>,
    /// ‖fitted − target‖∞, when the oracle is available.
    pub misfit_sup: Option<f64>,
    /// ‖λ − λ*‖∞ against the generating parameters, when known.
    pub lambda_max_error: Option<f64>,
    pub lambda_true: Option<Vec<f64>>,
    /// Empirical-moment indices at the boundary {0,1} (mle only).
    pub boundary_features: Vec<usize>,
    /// (iteration, value) of the two-phase step rescale, when captured.
    pub rescale: Option<(usize, f64)>,
    pub iterations_run: usize,
    pub total_cost_evals: u64,
}

/// oracle.json.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleResult {
    pub meta: Meta,
    pub d: usize,
    pub feature_count: usize,
    pub feature_names: Vec<String>,
    pub lambda: Vec<f64>,
    pub log_partition: f64,
    pub partition: f64,
    pub moments: Vec<f64>,
    pub entropy: f64,
}

/// posterior.json.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorResult {
    pub meta: Meta,
    pub d: usize,
    pub feature_count: usize,
    pub observation_count: usize,
    pub steps: usize,
    pub weighted_mean: Vec<f64>,
    pub weighted_cov: Vec<Vec<f64>>,
    /// Flat feature indices of diag(Λ), the histogrammed coordinates.
    pub diag_indices: Vec<usize>,
    pub marginals: Vec<Histogram1d>,
    pub pairwise: Vec<Histogram2d>,
    /// Central 99% weighted interval per diagonal coordinate.
    pub intervals_99: Vec<(f64, f64)>,
    pub lambda_true: Option<Vec<f64>>,
    pub total_cost_evals: u64,
}

/// summary.json for replicate sweeps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub meta: Meta,
    pub replicates: usize,
    /// Per-replicate derived seeds, in order.
    pub seeds: Vec<u64>,
    /// Per-replicate final misfit (when available).
    pub misfits: Vec<Option<f64>>,
    pub mean_misfit: Option<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::OutputFormat(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::OutputFormat(e.to_string()))
}

/// Write the solver trace as CSV: a meta comment, a header, then one row per
/// iteration with columns n, delta_n, lambda_1..lambda_J, drift_norm,
/// misfit_norm (blank when untracked).
pub fn write_trace_csv<W: Write>(mut w: W, trace: &SolverTrace, meta: &Meta) -> Result<()> {
    w.write_all(meta.comment_line().as_bytes())?;
    let j = trace.records.first().map_or(0, |r| r.lambda.len());
    let mut header = String::from("n,delta_n");
    for col in 1..=j {
        header.push_str(&format!(",lambda_{col}"));
    }
    header.push_str(",drift_norm,misfit_norm\n");
    w.write_all(header.as_bytes())?;
    for rec in &trace.records {
        let mut row = format!("{},{}", rec.n, rec.delta);
        for v in &rec.lambda {
            row.push_str(&format!(",{v}"));
        }
        row.push_str(&format!(",{}", rec.drift_sup_norm()));
        match rec.misfit {
            Some(m) => row.push_str(&format!(",{m}\n")),
            None => row.push_str(",\n"),
        }
        w.write_all(row.as_bytes())?;
    }
    Ok(())
}

pub fn write_trace_csv_path(path: &Path, trace: &SolverTrace, meta: &Meta) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trace_csv(std::io::BufWriter::new(file), trace, meta)
}

/// One parsed trace row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub n: usize,
    pub delta: f64,
    pub lambda: Vec<f64>,
    pub drift_norm: f64,
    pub misfit_norm: Option<f64>,
}

/// Parse a trace CSV back, validating the schema.
pub fn read_trace_csv<R: BufRead>(mut r: R) -> Result<(Meta, Vec<TraceRow>)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let meta = Meta::parse_comment(line.trim_end())?;
    line.clear();
    r.read_line(&mut line)?;
    let header: Vec<&str> = line.trim_end().split(',').collect();
    if header.first() != Some(&"n")
        || header.get(1) != Some(&"delta_n")
        || header.last() != Some(&"misfit_norm")
    {
        return Err(Error::OutputFormat(format!("unexpected trace header {header:?}")));
    }
    let j = header.len() - 4;
    let mut rows = Vec::new();
    for row in r.lines() {
        let row = row?;
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != j + 4 {
            return Err(Error::OutputFormat(format!(
                "trace row has {} fields, expected {}",
                fields.len(),
                j + 4
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::OutputFormat(format!("bad float {s:?}")))
        };
        rows.push(TraceRow {
            n: fields[0]
                .parse()
                .map_err(|_| Error::OutputFormat(format!("bad n {:?}", fields[0])))?,
            delta: parse(fields[1])?,
            lambda: fields[2..2 + j].iter().map(|s| parse(s)).collect::<Result<_>>()?,
            drift_norm: parse(fields[2 + j])?,
            misfit_norm: if fields[3 + j].is_empty() {
                None
            } else {
                Some(parse(fields[3 + j])?)
            },
        });
    }
    Ok((meta, rows))
}

/// Write chain samples as CSV with columns n, delta_n, lambda_1..lambda_J.
pub fn write_samples_csv<W: Write>(
    mut w: W,
    samples: &[WeightedSample],
    meta: &Meta,
) -> Result<()> {
    w.write_all(meta.comment_line().as_bytes())?;
    let j = samples.first().map_or(0, |s| s.lambda.len());
    let mut header = String::from("n,delta_n");
    for col in 1..=j {
        header.push_str(&format!(",lambda_{col}"));
    }
    header.push('\n');
    w.write_all(header.as_bytes())?;
    for s in samples {
        let mut row = format!("{},{}", s.n, s.weight);
        for v in &s.lambda {
            row.push_str(&format!(",{v}"));
        }
        row.push('\n');
        w.write_all(row.as_bytes())?;
    }
    Ok(())
}

pub fn write_samples_csv_path(
    path: &Path,
    samples: &[WeightedSample],
    meta: &Meta,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_samples_csv(std::io::BufWriter::new(file), samples, meta)
}

/// Parse a samples CSV back into weighted samples.
pub fn read_samples_csv<R: BufRead>(mut r: R) -> Result<(Meta, Vec<WeightedSample>)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let meta = Meta::parse_comment(line.trim_end())?;
    line.clear();
    r.read_line(&mut line)?;
    let header: Vec<&str> = line.trim_end().split(',').collect();
    if header.first() != Some(&"n") || header.get(1) != Some(&"delta_n") {
        return Err(Error::OutputFormat(format!("unexpected samples header {header:?}")));
    }
    let j = header.len() - 2;
    let mut samples = Vec::new();
    for row in r.lines() {
        let row = row?;
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != j + 2 {
            return Err(Error::OutputFormat(format!(
                "samples row has {} fields, expected {}",
                fields.len(),
                j + 2
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::OutputFormat(format!("bad float {s:?}")))
        };
        samples.push(WeightedSample {
            n: fields[0]
                .parse()
                .map_err(|_| Error::OutputFormat(format!("bad n {:?}", fields[0])))?,
            weight: parse(fields[1])?,
            lambda: fields[2..].iter().map(|s| parse(s)).collect::<Result<_>>()?,
        });
    }
    Ok((meta, samples))
}
