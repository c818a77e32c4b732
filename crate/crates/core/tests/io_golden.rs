//! A checked-in reference trace must keep hashing to the same digest.
//! Set `JPO_REGENERATE_GOLDEN=1` to rewrite the file after a deliberate
//! format change, then update `GOLDEN_SHA256`.

use std::path::PathBuf;

use jpo_noise::cli::sha256_hex;
use jpo_noise::io::{encode_trace, read_trace, FORMAT_VERSION, MAGIC};
use jpo_noise::simulate::{TraceMetadata, TraceRecord};

const GOLDEN_SHA256: &str = "71e5669e86dc54ffd5428d640d6bca82a5af7864975ffd52b8898c1f91a18913";

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden.jpot")
}

/// Built from exact binary fractions only, so every platform produces the
/// same samples.
fn golden_record() -> TraceRecord {
    let i: Vec<f32> = (0..256).map(|k| (k as f32 - 128.0) / 64.0).collect();
    let q: Vec<f32> = (0..256).map(|k| if (k / 16) % 2 == 0 { 0.75 } else { -0.75 }).collect();
    let meta = TraceMetadata {
        pump_power_dbm: -60.0,
        pump_frequency: 11.88e9,
        flux_bias: 0.35,
        seed: 0x0123_4567_89ab_cdef,
        decimation_history: vec![5, 4, 25],
        units: "arb".into(),
        created_at: "1970-01-01T00:00:00Z".into(),
        clipped: false,
        oscillating: true,
    };
    TraceRecord::new(1e6, i, q, meta).unwrap()
}

#[test]
fn golden_file_digest_is_stable() {
    let bytes = encode_trace(&golden_record()).unwrap();
    if std::env::var_os("JPO_REGENERATE_GOLDEN").is_some() {
        std::fs::write(golden_path(), &bytes).unwrap();
        println!("golden digest {}", sha256_hex(&bytes));
        return;
    }
    let on_disk = std::fs::read(golden_path()).expect("golden file is checked in");
    assert_eq!(sha256_hex(&on_disk), GOLDEN_SHA256);
    assert_eq!(bytes, on_disk, "encoder output drifted from the golden file");
}

#[test]
fn golden_file_decodes_exactly() {
    let back = read_trace(golden_path()).unwrap();
    assert_eq!(back, golden_record());
}

#[test]
fn golden_file_layout() {
    let b = std::fs::read(golden_path()).unwrap();
    assert_eq!(&b[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), FORMAT_VERSION);
    let header_len = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
    let payload = 12 + header_len;
    assert_eq!(b.len(), payload + 256 * 2 * 4 + 8 + 4);
    // Interleaved little-endian I, Q pairs.
    assert_eq!(f32::from_le_bytes(b[payload..payload + 4].try_into().unwrap()), -2.0);
    assert_eq!(f32::from_le_bytes(b[payload + 4..payload + 8].try_into().unwrap()), 0.75);
    let count = u64::from_le_bytes(b[payload + 2048..payload + 2056].try_into().unwrap());
    assert_eq!(count, 256);
}
