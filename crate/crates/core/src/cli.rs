//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid configuration or arguments, 2 the
//! simulation overloaded more often than `limits.max_overload_fraction`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{tool_version, RunConfig};
use crate::decim::{self, cic_decimate};
use crate::error::{Error, Result};
use crate::linmodel::{
    dda_integrator_response, log_sweep, stf_ntf_dc_approx, stf_ntf_exact, unit_circle, write_response_csv,
    IntegratorParams, LoopParams,
};
use crate::loopsim::{simulate_with, ModTrace};
use crate::metrics::{comparison_table, dr_sweep, format_table_text, read_records, write_table_csv};
use crate::noisemodel::{write_psd_csv, DeviceNoise, NoiseSource};
use crate::sigproc::{periodogram, snr_enob_with, SnrReport, SnrSettings, Window};

/// Comparison data shipped with the tool.
pub const TABLE_IV_FIXTURE: &str = include_str!("../fixtures/table_iv.csv");

#[derive(Debug, Parser)]
#[command(name = "dsm-afe", version, about = "Hybrid CT/DT delta-sigma front-end simulator")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one tone and report SNR/ENOB.
    Simulate(SimulateArgs),
    /// Analytic device-noise PSD sweeps, chopped and unchopped.
    NoisePsd(NoisePsdArgs),
    /// Integrator and loop frequency responses.
    Linmodel(LinmodelArgs),
    /// SNR versus input level.
    Sweep,
    /// Figure-of-merit comparison table.
    Fom(FomArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub amp_dbfs: Option<f64>,
    #[arg(long)]
    pub freq_hz: Option<f64>,
    #[arg(long)]
    pub vfb_mv: Option<f64>,
    /// Enable device noise.
    #[arg(long)]
    pub noise: bool,
    /// Also write per-sample integrator states.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct NoisePsdArgs {
    #[arg(long, default_value_t = 1.0)]
    pub f_lo_hz: f64,
    #[arg(long)]
    pub f_hi_hz: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub points_per_decade: usize,
}

#[derive(Debug, Args)]
pub struct LinmodelArgs {
    #[arg(long)]
    pub a_i: Option<f64>,
    #[arg(long)]
    pub a_f: Option<f64>,
    /// Integrator time constant R·C in seconds.
    #[arg(long)]
    pub rc_s: Option<f64>,
    /// Feedback attenuation N.
    #[arg(long, default_value_t = 1.0)]
    pub n_atten: f64,
    #[arg(long, default_value_t = 20)]
    pub points_per_decade: usize,
}

#[derive(Debug, Args)]
pub struct FomArgs {
    /// CSV of converter records; defaults to the shipped comparison table.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    match cli.command {
        Command::Simulate(a) => cmd_simulate(cfg, &out, &a),
        Command::NoisePsd(a) => cmd_noise_psd(cfg, &out, &a),
        Command::Linmodel(a) => cmd_linmodel(cfg, &out, &a),
        Command::Sweep => cmd_sweep(cfg, &out),
        Command::Fom(a) => cmd_fom(cfg, &out, &a),
    }
}

/// Artifacts collected in memory and written together at the end.
struct Artifacts(Vec<(String, Vec<u8>)>);

impl Artifacts {
    fn new(cfg: &RunConfig) -> Result<Self> {
        Ok(Self(vec![("run.toml".into(), cfg.to_toml_string()?.into_bytes())]))
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.0.push((name.into(), bytes));
    }

    fn add_toml<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let s = toml::to_string(v).map_err(|e| Error::Io(e.to_string()))?;
        self.add(name, s.into_bytes());
        Ok(())
    }

    fn commit(self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in &self.0 {
            write_atomic(&dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Write to a temporary sibling, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::Io(format!("bad path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::from(e)
    })
}

#[derive(Debug, Serialize)]
struct SnrSection {
    snr_db: f64,
    enob_bits: f64,
    signal_power_v2: f64,
    noise_power_v2: f64,
    signal_bin: usize,
    signal_bins: [usize; 2],
    noise_bins: usize,
    signal_half_width_bins: usize,
    dc_bins: usize,
    n_fft: usize,
    window: Window,
    segments: usize,
}

impl SnrSection {
    fn new(r: &SnrReport, n_fft: usize, window: Window, segments: usize) -> Self {
        Self {
            snr_db: r.snr_db,
            enob_bits: r.enob_bits,
            signal_power_v2: r.signal_power,
            noise_power_v2: r.noise_power,
            signal_bin: r.signal_bin,
            signal_bins: [r.signal_bins.0, r.signal_bins.1],
            noise_bins: r.noise_bins,
            signal_half_width_bins: r.settings.signal_half_width,
            dc_bins: r.settings.dc_bins,
            n_fft,
            window,
            segments,
        }
    }
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    tool_version: String,
    ones_density: f64,
    mean_q: f64,
    overload_events: usize,
    overload_fraction: f64,
    bitstream: SnrSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    decimated: Option<SnrSection>,
    config: RunConfig,
}

fn cmd_simulate(mut cfg: RunConfig, out: &Path, a: &SimulateArgs) -> Result<i32> {
    if let Some(v) = a.amp_dbfs {
        cfg.stimulus.amp_dbfs = v;
    }
    if let Some(v) = a.freq_hz {
        cfg.stimulus.freq_hz = v;
    }
    if let Some(v) = a.vfb_mv {
        cfg.modulator.vfb_mv = v;
    }
    if a.noise {
        cfg.noise.enabled = true;
    }
    cfg.validate()?;
    let m = cfg.modulator_config();
    let input = m.tone(cfg.stimulus.amp_dbfs, cfg.stimulus.freq_hz)?;
    let mut src = if cfg.noise.enabled {
        Some(DeviceNoise::new(&cfg.noise_params()?, m.fs_hz, m.substeps, m.duration_samples, cfg.seed)?)
    } else {
        None
    };
    let tr = simulate_with(&m, &input, src.as_mut().map(|s| s as &mut dyn NoiseSource), a.trace)?;

    let an = cfg.analysis_settings();
    let volts = tr.q.to_stream(m.vfb_v())?;
    let sp = periodogram(&volts, an.n_fft, an.window)?;
    let snr = snr_enob_with(&sp, an.sig_freq_hz, an.bw_hz, an.snr)?;

    let dec = cic_decimate(&tr.q, cfg.decimation)?;
    let decimated = decimated_snr(&dec, &cfg, an.snr)?;

    let mut art = Artifacts::new(&cfg)?;
    let mut buf = Vec::new();
    tr.q.write_to(&mut buf)?;
    art.add("bitstream.txt", buf);
    let mut buf = Vec::new();
    sp.write_csv(&mut buf)?;
    art.add("psd.csv", buf);
    let mut buf = Vec::new();
    decim::write_csv(&mut buf, &dec)?;
    art.add("decimated.csv", buf);
    if a.trace {
        art.add("trace.csv", trace_csv(&tr, m.substeps)?);
    }
    let report = SimulateReport {
        tool_version: tool_version(),
        ones_density: tr.q.ones_density(),
        mean_q: tr.q.mean(),
        overload_events: tr.overload_events.len(),
        overload_fraction: tr.overload_fraction(),
        bitstream: SnrSection::new(&snr, sp.n_fft, sp.window, sp.segments),
        decimated,
        config: cfg.clone(),
    };
    art.add_toml("report.toml", &report)?;
    art.commit(out)?;

    println!("SNR {:.2} dB, ENOB {:.1} bits", snr.snr_db, snr.enob_bits);
    if tr.overload_fraction() > cfg.limits.max_overload_fraction {
        eprintln!(
            "overload in {:.2}% of sampling periods exceeds the limit of {:.2}%",
            100.0 * tr.overload_fraction(),
            100.0 * cfg.limits.max_overload_fraction
        );
        return Ok(2);
    }
    Ok(0)
}

/// SNR of the decimated stream over one coherent power-of-two block after
/// the filter transient, or `None` when the stream is too short.
fn decimated_snr(dec: &crate::sigproc::SampleStream, cfg: &RunConfig, settings: SnrSettings) -> Result<Option<SnrSection>> {
    let skip = cfg.decimation.stages + 1;
    if dec.len() <= skip + 64 {
        return Ok(None);
    }
    let avail = dec.len() - skip;
    let n = 1usize << (usize::BITS - 1 - avail.leading_zeros());
    let body = dec.slice(skip, n)?;
    let bw = (cfg.analysis.bw_hz).min(dec.rate_hz() / 2.0);
    if !(cfg.stimulus.freq_hz < bw) {
        return Ok(None);
    }
    let sp = periodogram(&body, n, cfg.analysis.window)?;
    match snr_enob_with(&sp, cfg.stimulus.freq_hz, bw, settings) {
        Ok(r) => Ok(Some(SnrSection::new(&r, n, sp.window, sp.segments))),
        Err(Error::SignalNotResolved { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn trace_csv(tr: &ModTrace, substeps: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    tr.write_csv(&mut buf, substeps)?;
    Ok(buf)
}

fn cmd_noise_psd(cfg: RunConfig, out: &Path, a: &NoisePsdArgs) -> Result<i32> {
    let p = cfg.noise_params()?;
    let f_hi = a.f_hi_hz.unwrap_or(cfg.modulator.fs_hz / 2.0);
    if !(a.f_lo_hz > 0.0 && f_hi > a.f_lo_hz) || a.points_per_decade == 0 {
        return Err(Error::InvalidParameter("need 0 < f_lo_hz < f_hi_hz and points_per_decade >= 1".into()));
    }
    let freqs = log_sweep(a.f_lo_hz, f_hi, a.points_per_decade);
    let clamp = cfg.modulator.fs_hz / cfg.analysis.n_fft as f64 / 2.0;
    let mut art = Artifacts::new(&cfg)?;
    for (name, chopped) in [("noise_psd_unchopped.csv", false), ("noise_psd_chopped.csv", true)] {
        let mut buf = Vec::new();
        write_psd_csv(&mut buf, &p, &freqs, chopped, clamp)?;
        art.add(name, buf);
    }
    #[derive(Serialize)]
    struct Report {
        tool_version: String,
        resistor_psd_v2_per_hz: f64,
        chopper_clamp_hz: f64,
        config: RunConfig,
    }
    art.add_toml(
        "report.toml",
        &Report { tool_version: tool_version(), resistor_psd_v2_per_hz: p.resistor_psd(), chopper_clamp_hz: clamp, config: cfg.clone() },
    )?;
    art.commit(out)?;
    Ok(0)
}

fn cmd_linmodel(cfg: RunConfig, out: &Path, a: &LinmodelArgs) -> Result<i32> {
    let m = &cfg.modulator;
    let rc = a.rc_s.unwrap_or(m.r_ohm * m.c_farad);
    let ip = IntegratorParams::new(a.a_i.unwrap_or(m.a_i), a.a_f.unwrap_or(m.a_f), m.r_ohm, rc / m.r_ohm)?;
    let lp = LoopParams::new(m.g, a.n_atten, ip.skew())?;
    if a.points_per_decade == 0 {
        return Err(Error::InvalidParameter("points_per_decade must be >= 1".into()));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let f_pole = ip.pole_rad_s() / two_pi;
    let f_zero = ip.zero_rad_s() / two_pi;
    let freqs = log_sweep(f_pole / 1e3, f_zero * 1e3, a.points_per_decade);
    let hi: Vec<_> = freqs.iter().map(|&f| (f, dda_integrator_response(&ip, f).h_i)).collect();
    let hf: Vec<_> = freqs.iter().map(|&f| (f, dda_integrator_response(&ip, f).h_f)).collect();

    let loop_f = log_sweep(m.fs_hz * 1e-6, m.fs_hz / 2.0, a.points_per_decade);
    let mut stf = Vec::with_capacity(loop_f.len());
    let mut ntf = Vec::with_capacity(loop_f.len());
    for &f in &loop_f {
        let z = unit_circle(f / m.fs_hz);
        let r = if (lp.n_skew - 1.0).abs() <= 1e-12 { stf_ntf_exact(&lp, z)? } else { stf_ntf_dc_approx(&lp, z)? };
        stf.push((f, r.stf));
        ntf.push((f, r.ntf));
    }

    let mut art = Artifacts::new(&cfg)?;
    for (name, rows) in [("integrator_hi.csv", &hi), ("integrator_hf.csv", &hf), ("loop_stf.csv", &stf), ("loop_ntf.csv", &ntf)] {
        let mut buf = Vec::new();
        write_response_csv(&mut buf, rows)?;
        art.add(name, buf);
    }
    let pz = format!(
        "kind,freq_hz,rad_per_s\npole,{f_pole:.10e},{:.10e}\nzero,{f_zero:.10e},{:.10e}\n",
        ip.pole_rad_s(),
        ip.zero_rad_s()
    );
    art.add("poles_zeros.csv", pz.into_bytes());
    art.commit(out)?;
    println!("pole {f_pole:.4} Hz, zero {f_zero:.4} Hz");
    Ok(0)
}

fn cmd_sweep(cfg: RunConfig, out: &Path) -> Result<i32> {
    let m = cfg.modulator_config();
    let noise = if cfg.noise.enabled { Some(cfg.noise_params()?) } else { None };
    let curve = dr_sweep(&m, &cfg.sweep.amps_dbfs, &cfg.analysis_settings(), noise.as_ref())?;
    let mut art = Artifacts::new(&cfg)?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    art.add("dr_curve.csv", buf);
    #[derive(Serialize)]
    struct Report {
        tool_version: String,
        dr_db: f64,
        peak_snr_db: f64,
        peak_amp_dbfs: f64,
        a_max_dbfs: f64,
        a_min_dbfs: f64,
        a_max_mv: f64,
        a_min_mv: f64,
        full_scale_mv: f64,
        config: RunConfig,
    }
    art.add_toml(
        "report.toml",
        &Report {
            tool_version: tool_version(),
            dr_db: curve.dr_db,
            peak_snr_db: curve.peak_snr_db,
            peak_amp_dbfs: curve.peak_amp_dbfs,
            a_max_dbfs: curve.a_max_dbfs,
            a_min_dbfs: curve.a_min_dbfs,
            a_max_mv: curve.amp_mv(curve.a_max_dbfs),
            a_min_mv: curve.amp_mv(curve.a_min_dbfs),
            full_scale_mv: curve.full_scale_mv,
            config: cfg.clone(),
        },
    )?;
    art.commit(out)?;
    println!("DR {:.2} dB, peak SNR {:.2} dB at {:.1} dBFS", curve.dr_db, curve.peak_snr_db, curve.peak_amp_dbfs);
    Ok(0)
}

fn cmd_fom(cfg: RunConfig, out: &Path, a: &FomArgs) -> Result<i32> {
    let records = match &a.records {
        Some(p) => read_records(fs::File::open(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?)?,
        None => read_records(TABLE_IV_FIXTURE.as_bytes())?,
    };
    let rows = comparison_table(&records)?;
    let text = format_table_text(&rows);
    let mut art = Artifacts::new(&cfg)?;
    let mut buf = Vec::new();
    write_table_csv(&mut buf, &rows)?;
    art.add("comparison.csv", buf);
    art.add("comparison.txt", text.clone().into_bytes());
    art.commit(out)?;
    print!("{text}");
    Ok(0)
}
