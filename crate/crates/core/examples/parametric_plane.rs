//! Map the oscillation region over detuning and pump power and write it as
//! an SVG heat map with its CSV twin.

use jpo_noise::cli::cmd_plane;
use jpo_noise::config::RunConfig;

fn main() -> jpo_noise::Result<()> {
    let cfg = RunConfig::default();
    let out = std::env::temp_dir().join("jpo-plane-example");
    let (map, manifest) = cmd_plane(&cfg, &out)?;
    for (row, p) in map.powers_dbm.iter().enumerate().step_by(20) {
        println!("{p:>7.2} dBm: half-width {:.3} MHz", map.half_width[row] / 1e6);
    }
    println!("wrote {} files to {}", manifest.files.len(), out.display());
    Ok(())
}
