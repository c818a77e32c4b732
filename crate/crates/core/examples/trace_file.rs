//! Write a trace file, read it back exactly, and show that a flipped
//! payload byte is caught by the checksum.

use jpo_noise::io::{decode_trace, encode_trace, read_trace, write_trace};
use jpo_noise::simulate::{generate_telegraph, TraceMetadata, TraceRecord};

fn main() -> jpo_noise::Result<()> {
    let states = generate_telegraph(20.0, 1.0, 10e3, 42)?;
    let i: Vec<f32> = states.iter().map(|&s| s as f32).collect();
    let q = vec![0.0f32; i.len()];
    let meta = TraceMetadata {
        pump_power_dbm: -60.0,
        seed: 42,
        ..TraceMetadata::default()
    };
    let trace = TraceRecord::new(10e3, i, q, meta)?;

    let path = std::env::temp_dir().join("jpo-example.jpot");
    write_trace(&trace, &path)?;
    let back = read_trace(&path)?;
    println!("{} samples, round trip exact: {}", back.len(), back == trace);

    let mut bytes = encode_trace(&trace)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    match decode_trace(&bytes, &path) {
        Err(e) => println!("corrupted copy rejected: {e}"),
        Ok(_) => println!("corruption went undetected"),
    }
    Ok(())
}
