//! Device noise of the chopped DDA R-C integrator.
//!
//! Two families of sources are modelled:
//!
//! * thermal noise of the integrator resistors, `8kTR` V²/Hz, entering at
//!   the inverting (feedback) port;
//! * DDA noise referred to the noninverting port, `S_th·(1 + f_c/f)`,
//!   entering at the signal port and optionally chopped.
//!
//! The analytic PSDs keep only the first chopper harmonic. The synthesised
//! time-domain sources contain every harmonic because chopping is applied
//! sample by sample.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::{dda_integrator_response, IntegratorParams};
use crate::sigproc::SampleStream;

pub const BOLTZMANN: f64 = 1.380649e-23;

/// Defaults used until calibrated.
pub const DEFAULT_S_DDA_TH: f64 = 1e-16;
pub const DEFAULT_FC_HZ: f64 = 10e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub temperature_k: f64,
    /// DDA thermal PSD referred to the noninverting input (V²/Hz, one-sided).
    pub s_dda_th: f64,
    /// Flicker corner (Hz).
    pub fc_hz: f64,
    pub f_ch_hz: f64,
    pub integrator: IntegratorParams,
}

impl NoiseParams {
    pub fn new(temperature_k: f64, s_dda_th: f64, fc_hz: f64, f_ch_hz: f64, integrator: IntegratorParams) -> Result<Self> {
        let p = Self { temperature_k, s_dda_th, fc_hz, f_ch_hz, integrator };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if !(self.temperature_k > 0.0 && self.s_dda_th > 0.0 && self.fc_hz > 0.0 && self.f_ch_hz > 0.0) {
            return Err(Error::InvalidParameter("noise parameters must be strictly positive".into()));
        }
        if !(self.fc_hz < self.f_ch_hz) {
            return Err(Error::InvalidParameter(format!(
                "flicker corner {} Hz must lie below the chopper frequency {} Hz",
                self.fc_hz, self.f_ch_hz
            )));
        }
        Ok(())
    }

    /// Differential resistor thermal noise `8kTR` (V²/Hz).
    pub fn resistor_psd(&self) -> f64 {
        8.0 * BOLTZMANN * self.temperature_k * self.integrator.r_ohm
    }
}

fn lorentz(f: f64, t: f64) -> f64 {
    1.0 + (2.0 * PI * f * t).powi(2)
}

/// Output-referred device noise PSD at the integrator output (V²/Hz).
///
/// Unchopped: `8kTR·A_f²/L(f,τ) + S_th(1+f_c/f)·A_i²·L(f,RC)/L(f,τ)`.
/// Chopped: the DDA term becomes `(8/π²)·S_th(1+f_c/|f−f_ch|)` with the
/// gain evaluated at `f − f_ch`. Here `L(f,t) = 1 + (2πft)²` and
/// `τ = (A_f+1)RC`.
pub fn out_psd(p: &NoiseParams, f_hz: f64, chopped: bool) -> Result<f64> {
    out_psd_clamped(p, f_hz, chopped, 0.0)
}

/// As [`out_psd`], with `|f − f_ch|` clamped to at least `min_offset_hz`.
pub fn out_psd_clamped(p: &NoiseParams, f_hz: f64, chopped: bool, min_offset_hz: f64) -> Result<f64> {
    let ip = &p.integrator;
    let (rc, tau) = (ip.rc(), ip.tau());
    let resistor = p.resistor_psd() * ip.a_f * ip.a_f / lorentz(f_hz, tau);
    let dda = if chopped {
        let off = chop_offset(p, f_hz, min_offset_hz)?;
        8.0 / (PI * PI) * p.s_dda_th * (1.0 + p.fc_hz / off) * ip.a_i * ip.a_i * lorentz(off, rc) / lorentz(off, tau)
    } else {
        check_positive(f_hz)?;
        p.s_dda_th * (1.0 + p.fc_hz / f_hz) * ip.a_i * ip.a_i * lorentz(f_hz, rc) / lorentz(f_hz, tau)
    };
    Ok(resistor + dda)
}

/// Device noise referred to the noninverting port (V²/Hz).
///
/// Chopped: `8kTR·(A_f/A_i)²/L(f,RC) + (8/π²)(1+f_c/|f−f_ch|)·S_th·
/// L(f−f_ch,RC)·L(f,τ)/(L(f−f_ch,τ)·L(f,RC))`. Unchopped is
/// `out_psd/|H_i|²` of the unchopped output PSD.
pub fn in_psd(p: &NoiseParams, f_hz: f64, chopped: bool) -> Result<f64> {
    in_psd_clamped(p, f_hz, chopped, 0.0)
}

pub fn in_psd_clamped(p: &NoiseParams, f_hz: f64, chopped: bool, min_offset_hz: f64) -> Result<f64> {
    let ip = &p.integrator;
    let (rc, tau) = (ip.rc(), ip.tau());
    let ratio = ip.a_f / ip.a_i;
    let resistor = p.resistor_psd() * ratio * ratio / lorentz(f_hz, rc);
    let dda = if chopped {
        let off = chop_offset(p, f_hz, min_offset_hz)?;
        8.0 / (PI * PI) * (1.0 + p.fc_hz / off) * p.s_dda_th * lorentz(off, rc) * lorentz(f_hz, tau)
            / (lorentz(off, tau) * lorentz(f_hz, rc))
    } else {
        check_positive(f_hz)?;
        p.s_dda_th * (1.0 + p.fc_hz / f_hz)
    };
    Ok(resistor + dda)
}

fn check_positive(f_hz: f64) -> Result<()> {
    if f_hz == 0.0 {
        return Err(Error::FlickerDivergence);
    }
    if !(f_hz > 0.0) {
        return Err(Error::InvalidParameter(format!("frequency must be > 0, got {f_hz}")));
    }
    Ok(())
}

fn chop_offset(p: &NoiseParams, f_hz: f64, min_offset_hz: f64) -> Result<f64> {
    check_positive(f_hz)?;
    let off = (f_hz - p.f_ch_hz).abs().max(min_offset_hz);
    if off == 0.0 {
        return Err(Error::FlickerDivergence);
    }
    Ok(off)
}

/// Analytic sweep CSV, `freq_hz,out_psd,in_psd`.
pub fn write_psd_csv<W: Write>(mut w: W, p: &NoiseParams, freqs: &[f64], chopped: bool, min_offset_hz: f64) -> Result<()> {
    writeln!(w, "freq_hz,out_psd,in_psd")?;
    for &f in freqs {
        let o = out_psd_clamped(p, f, chopped, min_offset_hz)?;
        let i = in_psd_clamped(p, f, chopped, min_offset_hz)?;
        writeln!(w, "{f:.10e},{o:.10e},{i:.10e}")?;
    }
    Ok(())
}

/// Seeded white Gaussian generator with one-sided PSD `psd` at `rate_hz`.
#[derive(Debug, Clone)]
pub struct ThermalGen {
    rng: ChaCha8Rng,
    sigma: f64,
}

impl ThermalGen {
    pub fn new(psd: f64, rate_hz: f64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, sigma: (psd.max(0.0) * rate_hz / 2.0).sqrt() }
    }

    #[inline]
    pub fn next_sample(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        self.sigma * z
    }
}

/// I.i.d. zero-mean Gaussian samples of variance `psd·rate/2`.
pub fn synth_thermal(psd: f64, rate_hz: f64, n: usize, seed: u64) -> Result<SampleStream> {
    if !(psd >= 0.0) {
        return Err(Error::InvalidParameter(format!("psd must be >= 0, got {psd}")));
    }
    let mut g = ThermalGen::new(psd, rate_hz, seed, 0);
    SampleStream::new(rate_hz, (0..n).map(|_| g.next_sample()).collect(), "thermal")
}

/// Gaussian noise with one-sided PSD `s_th·fc/f` over `[rate/n, rate/2]`.
///
/// White noise of density `s_th` is shaped in the frequency domain by
/// `sqrt(fc/f)`; the DC bin is removed.
pub fn synth_flicker(s_th: f64, fc_hz: f64, rate_hz: f64, n: usize, seed: u64) -> Result<SampleStream> {
    synth_flicker_stream(s_th, fc_hz, rate_hz, n, seed, 0)
}

fn synth_flicker_stream(s_th: f64, fc_hz: f64, rate_hz: f64, n: usize, seed: u64, stream: u64) -> Result<SampleStream> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    if !(fc_hz > 0.0 && fc_hz < rate_hz / 2.0) {
        return Err(Error::InvalidParameter(format!("fc must lie in (0, rate/2), got {fc_hz}")));
    }
    let mut g = ThermalGen::new(s_th, rate_hz, seed, stream);
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(g.next_sample(), 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    let df = rate_hz / n as f64;
    for k in 1..=n / 2 {
        let gain = (fc_hz / (k as f64 * df)).sqrt();
        buf[k] *= gain;
        if k != n - k {
            buf[n - k] *= gain;
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let inv = 1.0 / n as f64;
    SampleStream::new(rate_hz, buf.iter().map(|c| c.re * inv).collect(), "flicker")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChopPhase {
    Zero,
    Half,
}

/// Multiply by a ±1, 50 % duty square wave at `f_ch_hz`.
pub fn chop_modulate(x: &SampleStream, f_ch_hz: f64, phase: ChopPhase) -> Result<SampleStream> {
    let rate = x.rate_hz();
    if !(f_ch_hz > 0.0 && f_ch_hz <= rate / 2.0) {
        return Err(Error::InvalidParameter(format!("chopper frequency must lie in (0, rate/2], got {f_ch_hz}")));
    }
    let half = rate / (2.0 * f_ch_hz);
    if (half - half.round()).abs() > 1e-9 {
        return Err(Error::ChopperAlignment(half));
    }
    let half = half.round() as usize;
    let offset = match phase {
        ChopPhase::Zero => 0,
        ChopPhase::Half => half,
    };
    let samples = x
        .samples()
        .iter()
        .enumerate()
        .map(|(i, v)| if ((i + offset) / half) % 2 == 0 { *v } else { -*v })
        .collect();
    SampleStream::new(rate, samples, format!("{} (chopped)", x.label))
}

/// Per-substep noise at the two DDA ports (V).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PortNoise {
    /// DDA noise at the noninverting port, before any chopping.
    pub dda: f64,
    /// Resistor noise at the inverting (feedback) port.
    pub feedback: f64,
}

/// Noise injected into the simulator, one call per CT sub-step.
pub trait NoiseSource {
    fn next_noise(&mut self) -> PortNoise;
}

/// Seeded thermal + flicker device noise for one simulation run.
///
/// Thermal terms are drawn per sub-step; flicker is synthesised at the
/// sampling rate and held across the sub-steps of each period.
#[derive(Debug, Clone)]
pub struct DeviceNoise {
    resistor: ThermalGen,
    dda_thermal: ThermalGen,
    flicker: Vec<f64>,
    substeps: usize,
    index: usize,
    /// Reference ratio `A_f/A_i` for input referral.
    referral: f64,
}

impl DeviceNoise {
    pub fn new(p: &NoiseParams, fs_hz: f64, substeps: usize, n_samples: usize, seed: u64) -> Result<Self> {
        p.validate()?;
        if substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be >= 1".into()));
        }
        let rate = fs_hz * substeps as f64;
        let n_fft = n_samples.max(2).next_power_of_two();
        let flicker = synth_flicker_stream(p.s_dda_th, p.fc_hz, fs_hz, n_fft, seed, 3)?.into_samples();
        Ok(Self {
            resistor: ThermalGen::new(p.resistor_psd(), rate, seed, 1),
            dda_thermal: ThermalGen::new(p.s_dda_th, rate, seed, 2),
            flicker,
            substeps,
            index: 0,
            referral: p.integrator.a_f / p.integrator.a_i,
        })
    }

    fn next_parts(&mut self) -> (f64, f64, f64) {
        let fl = self.flicker[(self.index / self.substeps) % self.flicker.len()];
        self.index += 1;
        (self.resistor.next_sample(), self.dda_thermal.next_sample(), fl)
    }
}

impl NoiseSource for DeviceNoise {
    #[inline]
    fn next_noise(&mut self) -> PortNoise {
        let (r, th, fl) = self.next_parts();
        PortNoise { dda: th + fl, feedback: r }
    }
}

/// Materialised device noise at the sub-step rate, referred to the
/// noninverting input.
///
/// The resistor component is referred through the DC port-gain ratio
/// `A_f/A_i`, exact below the integrator zero `1/(2πRC)`.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    pub input_referred: SampleStream,
    pub resistor_thermal: SampleStream,
    pub dda_thermal: SampleStream,
    pub dda_flicker: SampleStream,
}

impl NoiseRealization {
    /// Same draws as [`DeviceNoise::new`] with identical arguments produces.
    pub fn realize(p: &NoiseParams, fs_hz: f64, substeps: usize, n_samples: usize, seed: u64) -> Result<Self> {
        let mut src = DeviceNoise::new(p, fs_hz, substeps, n_samples, seed)?;
        let len = n_samples * substeps;
        let (mut r, mut th, mut fl) = (Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len));
        for _ in 0..len {
            let (a, b, c) = src.next_parts();
            r.push(a * src.referral);
            th.push(b);
            fl.push(c);
        }
        let total: Vec<f64> = r.iter().zip(&th).zip(&fl).map(|((a, b), c)| a + b + c).collect();
        let rate = fs_hz * substeps as f64;
        Ok(Self {
            input_referred: SampleStream::new(rate, total, "input_referred")?,
            resistor_thermal: SampleStream::new(rate, r, "resistor_thermal")?,
            dda_thermal: SampleStream::new(rate, th, "dda_thermal")?,
            dda_flicker: SampleStream::new(rate, fl, "dda_flicker")?,
        })
    }
}

/// Noise power implied by a target SNR for a sine of amplitude `amp_v`.
pub fn noise_budget(amp_v: f64, snr_db: f64) -> f64 {
    amp_v * amp_v / 2.0 / 10f64.powf(snr_db / 10.0)
}

/// Result of fitting `S_th` to an in-band noise budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub s_dda_th: f64,
    pub fc_hz: f64,
    pub budget_v2: f64,
    /// Integrated resistor contribution (V²).
    pub resistor_v2: f64,
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub chopped: bool,
}

/// Solve for `S_th` (with `fc` held) such that `∫ in_psd df` over
/// `[f_lo, f_hi]` equals `budget_v2`.
///
/// `in_psd` is affine in `S_th`, so the solution is closed-form.
pub fn calibrate_s_dda_th(template: &NoiseParams, budget_v2: f64, f_lo: f64, f_hi: f64, chopped: bool) -> Result<Calibration> {
    if !(f_lo > 0.0 && f_hi > f_lo) {
        return Err(Error::InvalidParameter(format!("bad band [{f_lo}, {f_hi}]")));
    }
    let mut zero = *template;
    zero.s_dda_th = 0.0;
    let mut unit = *template;
    unit.s_dda_th = 1.0;
    let resistor_v2 = integrate(|f| in_psd(&zero, f, chopped), f_lo, f_hi)?;
    let with_unit = integrate(|f| in_psd(&unit, f, chopped), f_lo, f_hi)?;
    let per_unit = with_unit - resistor_v2;
    if !(budget_v2 > resistor_v2) {
        return Err(Error::InvalidParameter(format!(
            "budget {budget_v2:e} V² is below the resistor floor {resistor_v2:e} V²"
        )));
    }
    Ok(Calibration {
        s_dda_th: (budget_v2 - resistor_v2) / per_unit,
        fc_hz: template.fc_hz,
        budget_v2,
        resistor_v2,
        f_lo_hz: f_lo,
        f_hi_hz: f_hi,
        chopped,
    })
}

/// Composite Simpson on a uniform grid.
pub(crate) fn integrate(mut f: impl FnMut(f64) -> Result<f64>, a: f64, b: f64) -> Result<f64> {
    let m = 20_000;
    let h = (b - a) / m as f64;
    let mut acc = f(a)? + f(b)?;
    for i in 1..m {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h)?;
    }
    Ok(acc * h / 3.0)
}

/// Which device sources drive a stand-alone integrator noise run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceMask {
    pub resistor: bool,
    pub dda: bool,
}

impl SourceMask {
    pub const ALL: Self = Self { resistor: true, dda: true };
    pub const RESISTOR: Self = Self { resistor: true, dda: false };
}

/// Integrator output noise with zero signal, at `rate_hz = 2·f_ch`.
///
/// Resistor noise drives the feedback port; DDA thermal + flicker noise
/// drives the signal port and is optionally chopped at `f_ch`. The first
/// `warmup` samples are discarded.
pub fn ct_output_noise(
    p: &NoiseParams,
    rate_hz: f64,
    n: usize,
    warmup: usize,
    seed: u64,
    chopped: bool,
    mask: SourceMask,
) -> Result<SampleStream> {
    p.validate()?;
    let total = (n + warmup).next_power_of_two();
    let mut dda = synth_flicker_stream(p.s_dda_th, p.fc_hz, rate_hz, total, seed, 3)?;
    let mut th = ThermalGen::new(p.s_dda_th, rate_hz, seed, 2);
    let summed: Vec<f64> = dda.samples().iter().map(|v| v + th.next_sample()).collect();
    dda = SampleStream::new(rate_hz, summed, "dda")?;
    if chopped {
        dda = chop_modulate(&dda, p.f_ch_hz, ChopPhase::Zero)?;
    }
    let mut res = ThermalGen::new(p.resistor_psd(), rate_hz, seed, 1);
    let stepper = crate::loopsim::CtStepper::new(&p.integrator, 1.0 / rate_hz);
    let mut st = crate::loopsim::CtState::default();
    let mut out = Vec::with_capacity(n);
    for (i, d) in dda.samples()[..n + warmup].iter().enumerate() {
        let v_f = res.next_sample();
        let v_i = if mask.dda { *d } else { 0.0 };
        let y = stepper.step(&mut st, v_i, if mask.resistor { v_f } else { 0.0 });
        if i >= warmup {
            out.push(y);
        }
    }
    SampleStream::new(rate_hz, out, "integrator output noise")
}

/// `|H_i(f)|²` of the integrator signal port.
pub fn signal_port_gain_sq(ip: &IntegratorParams, f_hz: f64) -> f64 {
    dda_integrator_response(ip, f_hz).h_i.norm_sqr()
}
