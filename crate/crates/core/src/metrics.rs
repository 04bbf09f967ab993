//! Figures of merit, dynamic-range sweeps and comparison tables.

use std::cmp::Ordering;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loopsim::{simulate, BitStream, ModulatorConfig};
use crate::noisemodel::{DeviceNoise, NoiseParams, NoiseSource};
use crate::sigproc::{periodogram, snr_enob_with, SnrReport, SnrSettings, Window};

/// Walden figure of merit in pJ per conversion step.
pub fn fom_walden(power_w: f64, enob_bits: f64, nyquist_sps: f64) -> Result<f64> {
    if !(power_w > 0.0 && nyquist_sps > 0.0 && enob_bits >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need power > 0, nyquist rate > 0, enob >= 0 (got {power_w}, {nyquist_sps}, {enob_bits})"
        )));
    }
    Ok(power_w / (2f64.powf(enob_bits) * nyquist_sps) * 1e12)
}

/// Schreier figure of merit in dB.
pub fn fom_schreier(dr_db: f64, bw_hz: f64, power_w: f64) -> Result<f64> {
    if !(bw_hz > 0.0 && power_w > 0.0 && dr_db.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need finite DR, bw > 0, power > 0 (got {dr_db}, {bw_hz}, {power_w})"
        )));
    }
    Ok(dr_db + 10.0 * (bw_hz / power_w).log10())
}

/// `20·log10(a_max/a_min)`.
pub fn dynamic_range_db(a_max: f64, a_min: f64) -> Result<f64> {
    if !(a_max > 0.0 && a_min > 0.0) {
        return Err(Error::InvalidParameter("amplitudes must be > 0".into()));
    }
    Ok(20.0 * (a_max / a_min).log10())
}

/// Spectral measurement applied to a bitstream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub n_fft: usize,
    pub window: Window,
    pub bw_hz: f64,
    pub sig_freq_hz: f64,
    #[serde(default)]
    pub snr: SnrSettings,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self { n_fft: 1 << 16, window: Window::Hann, bw_hz: 1e3, sig_freq_hz: TEST_TONE_HZ, snr: SnrSettings::default() }
    }
}

/// The 854.5 Hz test tone, snapped to an exact bin of an 8192-point
/// transform at 1 MHz so that it is coherent for every `n_fft ≥ 8192`
/// and for the 2 kHz decimated rate.
pub const TEST_TONE_HZ: f64 = 854.4921875;

impl AnalysisSettings {
    pub fn measure(&self, q: &BitStream) -> Result<SnrReport> {
        let s = q.to_stream(1.0)?;
        let sp = periodogram(&s, self.n_fft, self.window)?;
        snr_enob_with(&sp, self.sig_freq_hz, self.bw_hz, self.snr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrPoint {
    pub amp_dbfs: f64,
    /// `None` when the tone was not resolved above the noise.
    pub snr_db: Option<f64>,
    pub overload_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrCurve {
    pub points: Vec<DrPoint>,
    pub dr_db: f64,
    pub peak_snr_db: f64,
    pub peak_amp_dbfs: f64,
    pub a_max_dbfs: f64,
    pub a_min_dbfs: f64,
    /// Amplitude that 0 dBFS refers to.
    pub full_scale_mv: f64,
}

impl DrCurve {
    /// Build from measured points using the 6 dB-from-peak overload knee
    /// and the smallest amplitude with positive SNR.
    pub fn from_points(points: Vec<DrPoint>, full_scale_mv: f64) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidParameter(format!("need >= 3 amplitudes, got {}", points.len())));
        }
        if points.windows(2).any(|w| !(w[1].amp_dbfs > w[0].amp_dbfs)) {
            return Err(Error::InvalidParameter("amplitudes must be strictly increasing".into()));
        }
        let resolved: Vec<(f64, f64)> = points.iter().filter_map(|p| p.snr_db.map(|s| (p.amp_dbfs, s))).collect();
        let (peak_amp, peak_snr) = resolved
            .iter()
            .copied()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
            .ok_or_else(|| Error::InvalidParameter("no amplitude produced a resolved tone".into()))?;
        let a_max = resolved.iter().filter(|p| p.1 >= peak_snr - 6.0).map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let a_min = resolved
            .iter()
            .find(|p| p.1 > 0.0)
            .map(|p| p.0)
            .ok_or_else(|| Error::InvalidParameter("no amplitude with SNR > 0 dB".into()))?;
        Ok(Self {
            points,
            dr_db: a_max - a_min,
            peak_snr_db: peak_snr,
            peak_amp_dbfs: peak_amp,
            a_max_dbfs: a_max,
            a_min_dbfs: a_min,
            full_scale_mv,
        })
    }

    /// Amplitude in mV of a dBFS level on this curve's scale.
    pub fn amp_mv(&self, amp_dbfs: f64) -> f64 {
        self.full_scale_mv * 10f64.powf(amp_dbfs / 20.0)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "amp_dbfs,snr_db")?;
        for p in &self.points {
            match p.snr_db {
                Some(s) => writeln!(w, "{:.4},{:.6}", p.amp_dbfs, s)?,
                None => writeln!(w, "{:.4},", p.amp_dbfs)?,
            }
        }
        Ok(())
    }
}

/// Simulate one tone per amplitude (in parallel) and measure SNR.
pub fn dr_sweep(
    cfg: &ModulatorConfig,
    amps_dbfs: &[f64],
    analysis: &AnalysisSettings,
    noise: Option<&NoiseParams>,
) -> Result<DrCurve> {
    cfg.validate()?;
    let points = amps_dbfs
        .par_iter()
        .map(|&amp| -> Result<DrPoint> {
            let x = cfg.tone(amp, analysis.sig_freq_hz)?;
            let mut src = match noise {
                Some(p) => Some(DeviceNoise::new(p, cfg.fs_hz, cfg.substeps, cfg.duration_samples, cfg.seed)?),
                None => None,
            };
            let tr = simulate(cfg, &x, src.as_mut().map(|s| s as &mut dyn NoiseSource))?;
            let snr_db = match analysis.measure(&tr.q) {
                Ok(r) => Some(r.snr_db),
                Err(Error::SignalNotResolved { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(DrPoint { amp_dbfs: amp, snr_db, overload_events: tr.overload_events.len() })
        })
        .collect::<Result<Vec<_>>>()?;
    DrCurve::from_points(points, cfg.vfb_mv)
}

/// One row of a converter survey. Missing ENOB or DR leave the
/// corresponding figure of merit blank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverterRecord {
    pub label: String,
    #[serde(default)]
    pub process: String,
    pub bw_hz: f64,
    #[serde(default)]
    pub fs_hz: Option<f64>,
    pub power_w: f64,
    pub enob_bits: Option<f64>,
    pub dr_db: Option<f64>,
    #[serde(default)]
    pub printed_fom_s_db: Option<f64>,
    #[serde(default)]
    pub printed_fom_w_pj: Option<f64>,
}

impl ConverterRecord {
    pub fn nyquist_sps(&self) -> f64 {
        2.0 * self.bw_hz
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub record: ConverterRecord,
    pub fom_w_pj: Option<f64>,
    pub fom_s_db: Option<f64>,
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<ConverterRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(|e| Error::Parse(e.to_string()))).collect()
}

/// Recompute both figures of merit per record, sorted by FOM_S
/// descending (blank last), ties broken by label.
pub fn comparison_table(records: &[ConverterRecord]) -> Result<Vec<ComparisonRow>> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("no records".into()));
    }
    let mut rows = records
        .iter()
        .map(|r| {
            Ok(ComparisonRow {
                record: r.clone(),
                fom_w_pj: r.enob_bits.map(|e| fom_walden(r.power_w, e, r.nyquist_sps())).transpose()?,
                fom_s_db: r.dr_db.map(|d| fom_schreier(d, r.bw_hz, r.power_w)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| match (a.fom_s_db, b.fom_s_db) {
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then_with(|| a.record.label.cmp(&b.record.label)));
    Ok(rows)
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map(|x| format!("{x:.prec$}")).unwrap_or_default()
}

const HEADER: [&str; 9] =
    ["label", "bw_hz", "power_w", "enob_bits", "dr_db", "fom_w_pj", "fom_s_db", "printed_fom_w_pj", "printed_fom_s_db"];

fn cells(r: &ComparisonRow) -> [String; 9] {
    let c = &r.record;
    [
        c.label.clone(),
        format!("{}", c.bw_hz),
        format!("{:e}", c.power_w),
        opt(c.enob_bits, 1),
        opt(c.dr_db, 1),
        opt(r.fom_w_pj, 2),
        opt(r.fom_s_db, 2),
        opt(c.printed_fom_w_pj, 1),
        opt(c.printed_fom_s_db, 0),
    ]
}

pub fn write_table_csv<W: Write>(w: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wr.write_record(HEADER).map_err(io)?;
    for r in rows {
        wr.write_record(cells(r)).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn format_table_text(rows: &[ComparisonRow]) -> String {
    let body: Vec<[String; 9]> = rows.iter().map(cells).collect();
    let mut widths: Vec<usize> = HEADER.iter().map(|h| h.len()).collect();
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: Vec<String>| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cols.iter().zip(&widths).enumerate() {
            if i == 0 {
                s.push_str(&format!("{c:<w$}"));
            } else {
                s.push_str(&format!("  {c:>w$}"));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(HEADER.iter().map(|h| h.to_string()).collect());
    for r in body {
        out.push_str(&line(r.to_vec()));
    }
    out
}
