//! Subcommand implementations behind the `jpo` binary. Every command writes
//! into an output directory and finishes with a `manifest.json` listing the
//! SHA-256 digest of each file it produced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dsp::{apply_decimation, DecimationPlan};
use crate::error::{Error, Result};
use crate::fitting::{fit_s11, LmSettings, RateMethod, S11Fit, S11Guess};
use crate::io::{self, read_trace, read_trace_info, write_text};
use crate::model::{oscillation_state, reflection_at};
use crate::pipeline::{analyze_sweep, AnalysisSettings, SweepAnalysis};
use crate::plot::{Figure, HeatMap, Scale, Series, Style};
use crate::simulate::{derive_seed, synthesize_trace, Scenario, TraceRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidParameter { .. } | Error::NoInput | Error::CsvParse { .. } => {
            EXIT_VALIDATION
        }
        Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::CrcMismatch { .. }
        | Error::LengthMismatch { .. }
        | Error::HeaderParse { .. } => EXIT_IO,
        _ => EXIT_RUNTIME,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Files written by one command, keyed by name relative to the output directory.
#[derive(Debug, Default, Clone)]
pub struct Outputs {
    dir: PathBuf,
    entries: BTreeMap<String, ManifestEntry>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            entries: BTreeMap::new(),
        })
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.entries.insert(
            name.to_string(),
            ManifestEntry {
                file: name.to_string(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(bytes),
            },
        );
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_text(&path, text)?;
        self.record(name, text.as_bytes());
        Ok(path)
    }

    pub fn trace(&mut self, name: &str, record: &TraceRecord) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let bytes = io::encode_trace(record)?;
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        self.record(name, &bytes);
        Ok(path)
    }

    pub fn figure(&mut self, stem: &str, fig: &Figure) -> Result<()> {
        self.text(&format!("{stem}.svg"), &fig.to_svg())?;
        self.text(&format!("{stem}.csv"), &fig.to_csv())?;
        Ok(())
    }

    pub fn heat_map(&mut self, stem: &str, map: &HeatMap) -> Result<()> {
        self.text(&format!("{stem}.svg"), &map.to_svg())?;
        self.text(&format!("{stem}.csv"), &map.to_csv())?;
        Ok(())
    }

    /// Writes `manifest.json` and returns its digest.
    pub fn finish(mut self, command: &str) -> Result<Manifest> {
        let files: Vec<ManifestEntry> = self.entries.values().cloned().collect();
        let body = serde_json::json!({
            "tool": "jpo",
            "version": version(),
            "command": command,
            "files": files,
        });
        let text = serde_json::to_string_pretty(&body).expect("manifest serializes") + "\n";
        let path = self.dir.join("manifest.json");
        write_text(&path, &text)?;
        self.record("manifest.json", text.as_bytes());
        Ok(Manifest {
            path,
            digest: sha256_hex(text.as_bytes()),
            files,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub digest: String,
    pub files: Vec<ManifestEntry>,
}

/// Filename tag for a pump power, e.g. `-64.00dBm`.
pub fn power_tag(p: f64) -> String {
    format!("{p:+.2}dBm")
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub traces: Vec<PathBuf>,
    pub manifest: Manifest,
}

/// One trace file per pump power and repeat, plus a copy of the effective config.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<SimulateOutput> {
    cfg.validate()?;
    let device = cfg.device_params()?;
    let calibration = cfg.calibration()?;
    let acquisition = cfg.acquisition();
    let repeats = cfg.acquisition.repeats;
    let mut out = Outputs::new(out_dir)?;
    out.text("config.toml", &cfg.to_toml_string())?;
    let mut traces = Vec::new();
    for (p, &power) in cfg.pump.powers_dbm.iter().enumerate() {
        let pump = cfg.pump_settings(&device, power)?;
        for r in 0..repeats {
            let seed = derive_seed(cfg.seeds.master, (p * repeats + r) as u64);
            let scenario = Scenario {
                device: &device,
                pump: &pump,
                calibration: &calibration,
                law: &cfg.law,
                noise: &cfg.noise,
            };
            let mut trace = synthesize_trace(scenario, acquisition, seed)?;
            trace.metadata.created_at = cfg.created_at.clone();
            let name = format!("trace_{}_r{r}_s{seed:016x}.jpot", power_tag(power));
            traces.push(out.trace(&name, &trace)?);
        }
    }
    Ok(SimulateOutput {
        traces,
        manifest: out.finish("simulate")?,
    })
}

/// Expands directories to their `.jpot` files, sorted by path.
pub fn collect_traces(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let rd = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
            for e in rd {
                let path = e.map_err(|e| Error::io(p, e))?.path();
                if path.extension().is_some_and(|x| x == "jpot") {
                    files.push(path);
                }
            }
        } else {
            files.push(p.clone());
        }
    }
    files.sort();
    files.dedup();
    if files.is_empty() {
        return Err(Error::NoInput);
    }
    Ok(files)
}

#[derive(Debug)]
pub struct AnalyzeOutput {
    pub analysis: SweepAnalysis,
    pub manifest: Manifest,
    pub failures: Vec<String>,
}

#[derive(Serialize)]
struct PointSummary<'a> {
    pump_power_dbm: f64,
    method: &'a str,
    applicable: bool,
    gamma_r: Option<f64>,
    gamma_r_err: Option<f64>,
    switch_count: Option<usize>,
    switch_rate: Option<f64>,
    fit: Option<&'a crate::fitting::LorentzianFit>,
    fit_error: Option<&'a str>,
    detection_error: Option<&'a str>,
    crosscheck: Option<&'a crate::switching::RateCrosscheck>,
    axis_angle: f64,
    non_negligible_imaginary: bool,
    repeats: usize,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Welch → diagonalize → fit for every trace group, then the report bundle.
pub fn cmd_analyze(inputs: &[PathBuf], cfg: &RunConfig, out_dir: &Path) -> Result<AnalyzeOutput> {
    cfg.validate()?;
    let files = collect_traces(inputs)?;
    let mut groups: Vec<(f64, Vec<PathBuf>)> = Vec::new();
    for f in files {
        let (_, _, meta) = read_trace_info(&f)?;
        let p = meta.pump_power_dbm;
        match groups.iter_mut().find(|g| g.0 == p) {
            Some(g) => g.1.push(f),
            None => groups.push((p, vec![f])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    let powers: Vec<f64> = groups.iter().map(|g| g.0).collect();
    let counts: Vec<usize> = groups.iter().map(|g| g.1.len()).collect();
    let settings = AnalysisSettings::from_config(cfg);
    let analysis = analyze_sweep(&powers, &counts, |p, r| read_trace(&groups[p].1[r]), &settings);

    let mut out = Outputs::new(out_dir)?;
    for pa in &analysis.points {
        let tag = power_tag(pa.pump_power_dbm);
        out.text(&format!("spectra_{tag}.csv"), &io::spectra_csv(&pa.spectra))?;
        out.text(&format!("cross_{tag}.csv"), &io::cross_csv(&pa.cross))?;
        let f = pa.spectra.frequencies[1..].to_vec();
        let mut fig = Figure::new(
            &format!("Quadrature noise spectra at {:.2} dBm", pa.pump_power_dbm),
            "frequency (Hz)",
            "PSD (units²/Hz)",
            Scale::Log,
            Scale::Log,
        )
        .with(Series::new("S_aa (phase)", f.clone(), pa.spectra.s_aa[1..].to_vec(), Style::Line))
        .with(Series::new("S_bb (amplitude)", f.clone(), pa.spectra.s_bb[1..].to_vec(), Style::Line));
        if let Some(fit) = &pa.fit {
            let model = f.iter().map(|&x| fit.value(x)).collect();
            fig = fig.with(Series::new("Lorentzian fit", f.clone(), model, Style::Dashed));
        }
        out.figure(&format!("psd_{tag}"), &fig)?;
        for (k, ev) in pa.events.iter().enumerate() {
            out.text(&format!("events_{tag}_r{k}.csv"), &io::events_csv(ev))?;
        }
    }

    if let Some(first) = groups.first() {
        let t = read_trace(&first.1[0])?;
        let n = t.len().min((0.5 * t.sample_rate) as usize).max(1);
        let stride = n.div_ceil(4000).max(1);
        let idx: Vec<usize> = (0..n).step_by(stride).collect();
        let time: Vec<f64> = idx.iter().map(|&k| k as f64 / t.sample_rate).collect();
        let fig = Figure::new(
            &format!("Trace excerpt at {:.2} dBm", first.0),
            "time (s)",
            "signal (units)",
            Scale::Linear,
            Scale::Linear,
        )
        .with(Series::new("I", time.clone(), idx.iter().map(|&k| t.i_samples[k] as f64).collect(), Style::Line))
        .with(Series::new("Q", time, idx.iter().map(|&k| t.q_samples[k] as f64).collect(), Style::Line));
        out.figure("trace_excerpt", &fig)?;
    }

    let sweep = &analysis.sweep;
    out.text("sweep.csv", &io::sweep_csv(sweep))?;
    let pick = |m: RateMethod| -> (Vec<f64>, Vec<f64>) {
        sweep
            .points
            .iter()
            .filter(|p| p.method == m)
            .filter_map(|p| p.gamma_r.map(|g| (p.pump_power_dbm, g)))
            .unzip()
    };
    let (px, py) = pick(RateMethod::Lorentzian);
    let (cx, cy) = pick(RateMethod::Count);
    let mut rates = Figure::new(
        "Corner frequencies versus pump power",
        "pump power (dBm)",
        "rate (Hz)",
        Scale::Linear,
        Scale::Log,
    )
    .with(Series::new("Γ_r (Lorentzian)", px, py, Style::Points))
    .with(Series::new("Γ_r (switch count)", cx, cy, Style::Points));
    let (fx, fy): (Vec<f64>, Vec<f64>) = sweep
        .points
        .iter()
        .filter(|p| p.method == RateMethod::Lorentzian)
        .filter_map(|p| p.fit.as_ref().and_then(|f| f.f_w).map(|w| (p.pump_power_dbm, w)))
        .unzip();
    rates = rates.with(Series::new("f_w", fx, fy, Style::Points));
    if !powers.is_empty() {
        let grid = linspace(powers[0], powers[powers.len() - 1], 50);
        if let Some(t) = &sweep.exp_fit {
            rates = rates.with(Series::new("Γ_r exponential fit", grid.clone(), grid.iter().map(|&p| t.rate(p)).collect(), Style::Dashed));
        }
        if let Some(t) = &sweep.fw_exp_fit {
            rates = rates.with(Series::new("f_w exponential fit", grid.clone(), grid.iter().map(|&p| t.rate(p)).collect(), Style::Dashed));
        }
    }
    out.figure("rates", &rates)?;
    out.heat_map("plane", &plane_map(cfg)?.heat_map())?;

    let failures = analysis.failures();
    let points: Vec<PointSummary> = analysis
        .points
        .iter()
        .map(|p| PointSummary {
            pump_power_dbm: p.pump_power_dbm,
            method: p.point.method.as_str(),
            applicable: p.applicable,
            gamma_r: p.point.gamma_r,
            gamma_r_err: p.point.gamma_r_err,
            switch_count: p.point.switch_count,
            switch_rate: p.point.switch_count_estimate,
            fit: p.fit.as_ref(),
            fit_error: p.fit_error.as_deref(),
            detection_error: p.detection_error.as_deref(),
            crosscheck: p.crosscheck.as_ref(),
            axis_angle: p.axis_angle,
            non_negligible_imaginary: p.spectra.non_negligible_imaginary,
            repeats: p.spectra.repeats,
        })
        .collect();
    let summary = serde_json::json!({
        "points": points,
        "exp_fit": sweep.exp_fit,
        "fw_exp_fit": sweep.fw_exp_fit,
        "failures": failures,
    });
    out.text("summary.json", &(serde_json::to_string_pretty(&summary).unwrap() + "\n"))?;
    Ok(AnalyzeOutput {
        manifest: out.finish("analyze")?,
        analysis,
        failures,
    })
}

/// Oscillation region over detuning × pump power.
#[derive(Debug, Clone)]
pub struct PlaneMap {
    pub detunings: Vec<f64>,
    pub powers_dbm: Vec<f64>,
    /// `amplitude[power][detuning]`, zero outside the region.
    pub amplitude: Vec<Vec<f64>>,
    pub oscillating: Vec<Vec<bool>>,
    /// Closed-form half-width sqrt(ε² − (κ_tot/2)²) per power, 0 below threshold.
    pub half_width: Vec<f64>,
}

impl PlaneMap {
    pub fn heat_map(&self) -> HeatMap {
        HeatMap {
            title: "Parametric oscillation region".into(),
            x_label: "detuning (MHz)".into(),
            y_label: "pump power (dBm)".into(),
            z_label: "steady amplitude".into(),
            x: self.detunings.iter().map(|d| d / 1e6).collect(),
            y: self.powers_dbm.clone(),
            z: self.amplitude.clone(),
        }
    }

    pub fn region_csv(&self) -> String {
        let measured: Vec<f64> = self
            .oscillating
            .iter()
            .map(|row| {
                self.detunings
                    .iter()
                    .zip(row)
                    .filter(|(_, &o)| o)
                    .map(|(d, _)| d.abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        io::numeric_csv(
            &["pump_power_dbm", "half_width_hz", "grid_half_width_hz"],
            &[&self.powers_dbm, &self.half_width, &measured],
        )
    }
}

pub fn plane_map(cfg: &RunConfig) -> Result<PlaneMap> {
    let device = cfg.device_params()?;
    let cal = cfg.calibration()?;
    let pl = &cfg.plane;
    let detunings = linspace(-pl.detuning_span, pl.detuning_span, pl.detuning_steps);
    let powers_dbm = linspace(pl.power_min_dbm, pl.power_max_dbm, pl.power_steps);
    let half = device.kappa_total() / 2.0;
    let mut amplitude = Vec::with_capacity(powers_dbm.len());
    let mut oscillating = Vec::with_capacity(powers_dbm.len());
    let mut half_width = Vec::with_capacity(powers_dbm.len());
    for &p in &powers_dbm {
        let eps = cal.modulation_rate(p);
        let states: Vec<_> = detunings.iter().map(|&d| oscillation_state(&device, d, eps)).collect();
        amplitude.push(states.iter().map(|s| s.steady_amplitude).collect());
        oscillating.push(states.iter().map(|s| s.oscillating).collect());
        half_width.push(if eps > half { (eps * eps - half * half).sqrt() } else { 0.0 });
    }
    Ok(PlaneMap {
        detunings,
        powers_dbm,
        amplitude,
        oscillating,
        half_width,
    })
}

pub fn cmd_plane(cfg: &RunConfig, out_dir: &Path) -> Result<(PlaneMap, Manifest)> {
    cfg.validate()?;
    let map = plane_map(cfg)?;
    let mut out = Outputs::new(out_dir)?;
    out.heat_map("plane", &map.heat_map())?;
    out.text("plane_region.csv", &map.region_csv())?;
    Ok((map, out.finish("plane")?))
}

/// Fits S11 from a `frequency,re,im` CSV. The start point comes from the
/// data, or from the configured device when the data give none.
pub fn cmd_fit_s11(csv_path: &Path, cfg: Option<&RunConfig>, out_dir: &Path) -> Result<(S11Fit, Manifest)> {
    let (freqs, s11) = io::read_s11_csv(csv_path)?;
    let guess = match (S11Guess::from_data(&freqs, &s11), cfg) {
        (Some(g), _) => g,
        (None, Some(c)) => S11Guess::from_device(&c.device_params()?, c.pump.flux_bias)?,
        (None, None) => {
            let mid = freqs[freqs.len() / 2];
            let span = freqs[freqs.len() - 1] - freqs[0];
            S11Guess {
                resonance: mid,
                kappa_ext: span.abs() / 20.0,
                kappa_int: 0.0,
            }
        }
    };
    let fit = fit_s11(&freqs, &s11, &guess, &LmSettings::default())?;
    let model: Vec<Complex64> = freqs
        .iter()
        .map(|&f| reflection_at(fit.resonance, fit.kappa_ext, fit.kappa_int, f))
        .collect();
    let ghz: Vec<f64> = freqs.iter().map(|f| f / 1e9).collect();
    let fig = Figure::new("S11 fit", "frequency (GHz)", "S11", Scale::Linear, Scale::Linear)
        .with(Series::new("Re data", ghz.clone(), s11.iter().map(|z| z.re).collect(), Style::Points))
        .with(Series::new("Im data", ghz.clone(), s11.iter().map(|z| z.im).collect(), Style::Points))
        .with(Series::new("Re fit", ghz.clone(), model.iter().map(|z| z.re).collect(), Style::Line))
        .with(Series::new("Im fit", ghz, model.iter().map(|z| z.im).collect(), Style::Line));
    let mut out = Outputs::new(out_dir)?;
    out.figure("s11_overlay", &fig)?;
    out.text("s11_fit.json", &(serde_json::to_string_pretty(&fit).unwrap() + "\n"))?;
    Ok((fit, out.finish("fit-s11")?))
}

/// Runs a trace through the decimation chain of the config, or the
/// 500 → 1 MSa/s default.
pub fn cmd_decimate(input: &Path, cfg: Option<&RunConfig>, out_dir: &Path) -> Result<(PathBuf, Manifest)> {
    let plan = cfg
        .and_then(|c| c.decimation.clone())
        .unwrap_or_else(DecimationPlan::digitizer_default);
    let trace = read_trace(input)?;
    let dec = apply_decimation(&trace, &plan)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let mut out = Outputs::new(out_dir)?;
    let path = out.trace(&format!("{stem}_dec{}.jpot", plan.total_factor()), &dec)?;
    Ok((path, out.finish("decimate")?))
}
