//! Trace container and CSV tables.
//!
//! Trace file layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `JPOT` |
//! | 4 | format version, u32 |
//! | 4 | header length h, u32 |
//! | h | JSON header, UTF-8 |
//! | 8·n | payload, f32 pairs I₀ Q₀ I₁ Q₁ … |
//! | 8 | sample count n, u64 |
//! | 4 | CRC-32 of the payload, u32 |

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::SpectralMatrix;
use crate::error::{Error, Result};
use crate::fitting::SweepResult;
use crate::quadrature::QuadratureSpectra;
use crate::simulate::{TraceMetadata, TraceRecord};
use crate::switching::SwitchEvents;

pub const MAGIC: &[u8; 4] = b"JPOT";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 12;
const TRAILER: usize = 12;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    sample_rate: f64,
    duration: f64,
    pump_power_dbm: f64,
    pump_frequency_hz: f64,
    flux_bias: f64,
    seed: u64,
    decimation_history: Vec<u32>,
    units: String,
    created_at: String,
    #[serde(default)]
    clipped: bool,
    #[serde(default)]
    oscillating: bool,
}

/// Serializes a record to the trace-file byte layout.
pub fn encode_trace(record: &TraceRecord) -> Result<Vec<u8>> {
    if record.i_samples.len() != record.q_samples.len() {
        return Err(Error::invalid("q_samples", "channel lengths differ"));
    }
    let m = &record.metadata;
    let header = Header {
        sample_rate: record.sample_rate,
        duration: record.duration,
        pump_power_dbm: m.pump_power_dbm,
        pump_frequency_hz: m.pump_frequency,
        flux_bias: m.flux_bias,
        seed: m.seed,
        decimation_history: m.decimation_history.clone(),
        units: m.units.clone(),
        created_at: m.created_at.clone(),
        clipped: m.clipped,
        oscillating: m.oscillating,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let n = record.len();
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + 8 * n + TRAILER);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let start = out.len();
    for (i, q) in record.i_samples.iter().zip(&record.q_samples) {
        out.extend_from_slice(&i.to_le_bytes());
        out.extend_from_slice(&q.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

/// Parses trace-file bytes; `path` only labels errors.
pub fn decode_trace(bytes: &[u8], path: &Path) -> Result<TraceRecord> {
    let length = |detail: String| Error::LengthMismatch {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    if bytes.len() < PREAMBLE {
        return Err(length(format!("{} bytes is shorter than the preamble", bytes.len())));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let h = u32_at(bytes, 8) as usize;
    if bytes.len() < PREAMBLE + h + TRAILER {
        return Err(length(format!("{} bytes cannot hold a {h}-byte header and trailer", bytes.len())));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..PREAMBLE + h]).map_err(|e| Error::HeaderParse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let payload = &bytes[PREAMBLE + h..bytes.len() - TRAILER];
    let tail = &bytes[bytes.len() - TRAILER..];
    let count = u64::from_le_bytes(tail[..8].try_into().unwrap());
    let stored = u32_at(tail, 8);
    if payload.len() as u64 != count.saturating_mul(8) {
        return Err(length(format!(
            "payload holds {} bytes, trailer declares {count} samples",
            payload.len()
        )));
    }
    let computed = crc32fast::hash(payload);
    if computed != stored {
        return Err(Error::CrcMismatch {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    let mut i_samples = Vec::with_capacity(count as usize);
    let mut q_samples = Vec::with_capacity(count as usize);
    for pair in payload.chunks_exact(8) {
        i_samples.push(f32::from_le_bytes(pair[..4].try_into().unwrap()));
        q_samples.push(f32::from_le_bytes(pair[4..].try_into().unwrap()));
    }
    Ok(TraceRecord {
        sample_rate: header.sample_rate,
        duration: header.duration,
        i_samples,
        q_samples,
        metadata: TraceMetadata {
            pump_power_dbm: header.pump_power_dbm,
            pump_frequency: header.pump_frequency_hz,
            flux_bias: header.flux_bias,
            seed: header.seed,
            decimation_history: header.decimation_history,
            units: header.units,
            created_at: header.created_at,
            clipped: header.clipped,
            oscillating: header.oscillating,
        },
    })
}

pub fn write_trace(record: &TraceRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_trace(record)?).map_err(|e| Error::io(path, e))
}

/// Reads only the preamble and header: (sample rate, duration, metadata).
pub fn read_trace_info(path: impl AsRef<Path>) -> Result<(f64, f64, TraceMetadata)> {
    use std::io::Read;
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pre = [0u8; PREAMBLE];
    file.read_exact(&mut pre).map_err(|_| Error::BadMagic { path: path.to_path_buf() })?;
    let h = u32_at(&pre, 8) as usize;
    let mut bytes = pre.to_vec();
    bytes.resize(PREAMBLE + h, 0);
    file.read_exact(&mut bytes[PREAMBLE..]).map_err(|e| Error::io(path, e))?;
    // an empty payload and dummy trailer let the full decoder check the header
    bytes.extend_from_slice(&0u64.to_le_bytes());
    bytes.extend_from_slice(&0u32.to_le_bytes());
    let r = decode_trace(&bytes, path)?;
    Ok((r.sample_rate, r.duration, r.metadata))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<TraceRecord> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_trace(&bytes, path)
}

/// Writes text, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_text(rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}

/// CSV text for equal-length numeric columns. Values use the shortest
/// decimal form that parses back to the same f64.
pub fn numeric_csv(headers: &[&str], columns: &[&[f64]]) -> String {
    assert_eq!(headers.len(), columns.len());
    let rows = columns.first().map_or(0, |c| c.len());
    assert!(columns.iter().all(|c| c.len() == rows), "ragged columns");
    let head = std::iter::once(headers.iter().map(|h| h.to_string()).collect());
    csv_text(head.chain((0..rows).map(|r| columns.iter().map(|c| c[r].to_string()).collect())))
}

pub fn spectra_csv(q: &QuadratureSpectra) -> String {
    numeric_csv(
        &["frequency_hz", "s_aa", "s_bb", "angle_rad"],
        &[&q.frequencies, &q.s_aa, &q.s_bb, &q.rotation_angle],
    )
}

pub fn cross_csv(m: &SpectralMatrix) -> String {
    let re: Vec<f64> = m.s_iq.iter().map(|z| z.re).collect();
    let im: Vec<f64> = m.s_iq.iter().map(|z| z.im).collect();
    numeric_csv(
        &["frequency_hz", "s_ii", "s_qq", "s_iq_re", "s_iq_im"],
        &[&m.frequencies, &m.s_ii, &m.s_qq, &re, &im],
    )
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep_csv(sweep: &SweepResult) -> String {
    let head = ["pump_power_dbm", "gamma_r_hz", "gamma_r_err", "f_w_hz", "f_w_err", "switch_count", "method"];
    let rows = sweep.points.iter().map(|p| {
        let usable = p.fit.as_ref().filter(|f| f.converged && !f.resolution_limited);
        vec![
            p.pump_power_dbm.to_string(),
            opt(p.gamma_r),
            opt(p.gamma_r_err),
            opt(usable.and_then(|f| f.f_w)),
            opt(usable.and_then(|f| f.f_w_err())),
            p.switch_count.map(|c| c.to_string()).unwrap_or_default(),
            p.method.as_str().to_string(),
        ]
    });
    csv_text(std::iter::once(head.map(String::from).to_vec()).chain(rows))
}

pub fn events_csv(events: &SwitchEvents) -> String {
    let rows = events
        .event_times
        .iter()
        .zip(&events.new_states)
        .map(|(t, st)| vec![t.to_string(), st.to_string()]);
    csv_text(std::iter::once(vec!["time".into(), "new_state".into()]).chain(rows))
}

pub fn s11_csv(freqs: &[f64], s11: &[Complex64]) -> String {
    let re: Vec<f64> = s11.iter().map(|z| z.re).collect();
    let im: Vec<f64> = s11.iter().map(|z| z.im).collect();
    numeric_csv(&["frequency_hz", "re", "im"], &[freqs, &re, &im])
}

/// Parses `frequency,re,im` rows. A non-numeric first row is taken as a
/// header; blank lines and `#` comments are skipped.
pub fn parse_s11_csv(text: &str) -> Result<(Vec<f64>, Vec<Complex64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut freqs = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::CsvParse {
            line: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let v = match parsed {
            Err(_) if k == 0 => continue,
            Err(e) => {
                return Err(Error::CsvParse {
                    line,
                    detail: format!("{e} in {:?}", rec.iter().collect::<Vec<_>>().join(",")),
                })
            }
            Ok(v) => v,
        };
        if v.len() != 3 {
            return Err(Error::CsvParse {
                line,
                detail: format!("expected 3 fields, found {}", v.len()),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::CsvParse {
                line,
                detail: "non-finite value".into(),
            });
        }
        freqs.push(v[0]);
        values.push(Complex64::new(v[1], v[2]));
    }
    if freqs.is_empty() {
        return Err(Error::CsvParse {
            line: 0,
            detail: "no data rows".into(),
        });
    }
    Ok((freqs, values))
}

pub fn read_s11_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<Complex64>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_s11_csv(&text)
}
