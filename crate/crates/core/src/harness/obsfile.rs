//! Observation file formats.
//!
//! The default format is plain text for auditability: a `#maxent-obs v1`
//! magic line, header lines for d, M, the generating seed and (for synthetic
//! data) the generating λ, then one row of d characters from {0,1} per
//! observation. A packed binary variant (`v1 packed`) stores the same header
//! followed by ceil(d/8) little-endian bytes per row, for M ≥ 10^6 scale.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BitState, ParamVector};

const MAGIC_TEXT: &str = "#maxent-obs v1";
const MAGIC_PACKED: &str = "#maxent-obs v1 packed";

/// A set of observations with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationFile {
    pub dim: usize,
    pub seed: Option<u64>,
    /// Generating parameters, present for synthetic data.
    pub generator: Option<ParamVector>,
    pub states: Vec<BitState>,
}

impl ObservationFile {
    pub fn new(dim: usize, states: Vec<BitState>) -> Result<Self> {
        for s in &states {
            if s.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "observation row",
                    expected: dim,
                    actual: s.len(),
                });
            }
        }
        Ok(ObservationFile { dim, seed: None, generator: None, states })
    }

    pub fn count(&self) -> usize {
        self.states.len()
    }

    fn header(&self, packed: bool) -> String {
        let mut h = String::new();
        h.push_str(if packed { MAGIC_PACKED } else { MAGIC_TEXT });
        h.push('\n');
        h.push_str(&format!("#d {}\n", self.dim));
        h.push_str(&format!("#M {}\n", self.states.len()));
        if let Some(seed) = self.seed {
            h.push_str(&format!("#seed {seed}\n"));
        }
        if let Some(generator) = &self.generator {
            let joined: Vec<String> =
                generator.values().iter().map(|v| format!("{v}")).collect();
            h.push_str(&format!("#lambda {}\n", joined.join(",")));
        }
        h
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.header(false).as_bytes())?;
        for s in &self.states {
            writeln!(w, "{s}")?;
        }
        Ok(())
    }

    pub fn write_packed<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.header(true).as_bytes())?;
        w.write_all(b"#data\n")?;
        let bytes_per_row = self.dim.div_ceil(8);
        for s in &self.states {
            let word = s.index() as u64;
            w.write_all(&word.to_le_bytes()[..bytes_per_row])?;
        }
        Ok(())
    }

    pub fn write_to_path(&self, path: &Path, packed: bool) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut buf = std::io::BufWriter::new(file);
        if packed {
            self.write_packed(&mut buf)
        } else {
            self.write_text(&mut buf)
        }
    }

    pub fn read_from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    /// Parse either format; the magic line decides.
    pub fn read<R: BufRead>(mut r: R) -> Result<Self> {
        let mut magic = String::new();
        r.read_line(&mut magic)?;
        let packed = match magic.trim_end() {
            MAGIC_TEXT => false,
            MAGIC_PACKED => true,
            other => {
                return Err(Error::ObservationFormat(format!(
                    "unrecognized magic line {other:?}"
                )))
            }
        };

        let mut dim: Option<usize> = None;
        let mut count: Option<usize> = None;
        let mut seed: Option<u64> = None;
        let mut generator: Option<ParamVector> = None;

        loop {
            let mut line = String::new();
            let n = r.read_line(&mut line)?;
            if n == 0 {
                // EOF is fine only for an empty text file with a complete header
                return match (packed, dim, count) {
                    (false, Some(d), Some(0)) => {
                        Ok(ObservationFile { dim: d, seed, generator, states: Vec::new() })
                    }
                    _ => Err(Error::ObservationFormat("truncated header".into())),
                };
            }
            let line = line.trim_end_matches('\n');
            if let Some(rest) = line.strip_prefix("#d ") {
                dim = Some(parse_field(rest, "d")?);
            } else if let Some(rest) = line.strip_prefix("#M ") {
                count = Some(parse_field(rest, "M")?);
            } else if let Some(rest) = line.strip_prefix("#seed ") {
                seed = Some(parse_field(rest, "seed")?);
            } else if let Some(rest) = line.strip_prefix("#lambda ") {
                let values: Result<Vec<f64>> = rest
                    .split(',')
                    .map(|v| {
                        v.parse::<f64>().map_err(|_| {
                            Error::ObservationFormat(format!("bad lambda entry {v:?}"))
                        })
                    })
                    .collect();
                generator = Some(
                    ParamVector::new(values?)
                        .map_err(|e| Error::ObservationFormat(e.to_string()))?,
                );
            } else if line == "#data" && packed {
                break;
            } else if !line.starts_with('#') {
                // first data row of the text format
                let d = dim.ok_or_else(|| {
                    Error::ObservationFormat("missing #d header line".into())
                })?;
                let m = count.ok_or_else(|| {
                    Error::ObservationFormat("missing #M header line".into())
                })?;
                let mut states = Vec::with_capacity(m);
                states.push(parse_row(line, d)?);
                for row in r.lines() {
                    let row = row?;
                    if row.is_empty() {
                        continue;
                    }
                    states.push(parse_row(&row, d)?);
                }
                if states.len() != m {
                    return Err(Error::ObservationFormat(format!(
                        "header says M = {m} but file has {} rows",
                        states.len()
                    )));
                }
                return Ok(ObservationFile { dim: d, seed, generator, states });
            } else {
                return Err(Error::ObservationFormat(format!(
                    "unexpected header line {line:?}"
                )));
            }
        }

        // packed payload
        let d = dim.ok_or_else(|| Error::ObservationFormat("missing #d header line".into()))?;
        let m = count.ok_or_else(|| Error::ObservationFormat("missing #M header line".into()))?;
        if m == 0 {
            return Ok(ObservationFile { dim: d, seed, generator, states: Vec::new() });
        }
        let bytes_per_row = d.div_ceil(8);
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != m * bytes_per_row {
            return Err(Error::ObservationFormat(format!(
                "packed payload has {} bytes, expected {}",
                payload.len(),
                m * bytes_per_row
            )));
        }
        let states = payload
            .chunks_exact(bytes_per_row)
            .map(|chunk| {
                let mut word_bytes = [0u8; 8];
                word_bytes[..bytes_per_row].copy_from_slice(chunk);
                let word = u64::from_le_bytes(word_bytes);
                if d < 64 && word >> d != 0 {
                    return Err(Error::ObservationFormat(
                        "packed row has bits above dimension d".into(),
                    ));
                }
                Ok(BitState::from_word(word, d))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ObservationFile { dim: d, seed, generator, states })
    }
}

fn parse_field<T: std::str::FromStr>(value: &str, name: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::ObservationFormat(format!("bad {name} header value {value:?}")))
}

fn parse_row(row: &str, d: usize) -> Result<BitState> {
    if row.len() != d {
        return Err(Error::ObservationFormat(format!(
            "row {row:?} has {} characters, expected {d}",
            row.len()
        )));
    }
    row.parse()
}
