//! Sample-accurate simulation of the hybrid CT/DT second-order loop.
//!
//! Timeline of one sampling period `k` of length `T = 1/f_s`:
//!
//! 1. the DAC holds `y[k]·v_fb` on the CT integrator feedback port (NRZ);
//! 2. the CT integrator is advanced over `substeps` exact zero-order-hold
//!    sub-steps, with chopped DDA noise added at the signal port;
//! 3. the DT integrator samples `w1` one sub-step after mid-period and
//!    updates `w2[k+1] = w2[k] + G·(w1_s − y[k]·v_fb)`;
//! 4. the comparator produces `y[k+1] = sign(w2[k+1])`.
//!
//! The chopper toggles at `T/4` and `3T/4`, the midpoints of the two
//! clock phases, when `f_ch = f_s`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::IntegratorParams;
use crate::noisemodel::NoiseSource;
use crate::sigproc::{gen_sine, SampleStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulatorConfig {
    pub fs_hz: f64,
    pub substeps: usize,
    pub g: f64,
    pub r_ohm: f64,
    pub c_farad: f64,
    pub a_i: f64,
    pub a_f: f64,
    pub vfb_mv: f64,
    pub chopper_on: bool,
    pub f_ch_hz: f64,
    pub seed: u64,
    pub duration_samples: usize,
    /// Integrator clip bound as a multiple of the feedback level.
    pub clip_factor: f64,
}

impl Default for ModulatorConfig {
    fn default() -> Self {
        Self {
            fs_hz: 1e6,
            substeps: 16,
            g: 0.5,
            r_ohm: 100e3,
            c_farad: 20e-12,
            a_i: 1000.0,
            a_f: 1000.0,
            vfb_mv: 100.0,
            chopper_on: true,
            f_ch_hz: 1e6,
            seed: 0,
            duration_samples: 1 << 20,
            clip_factor: 10.0,
        }
    }
}

impl ModulatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.fs_hz > 0.0 && self.fs_hz.is_finite()) {
            return bad(format!("fs_hz must be > 0, got {}", self.fs_hz));
        }
        if self.substeps < 4 || self.substeps % 4 != 0 {
            return bad(format!("substeps must be a multiple of 4 and >= 4, got {}", self.substeps));
        }
        if !(self.g > 0.0 && self.g <= 1.0) {
            return bad(format!("G must lie in (0, 1], got {}", self.g));
        }
        self.integrator().validate()?;
        let ugf = 1.0 / (self.r_ohm * self.c_farad);
        let want = self.g * self.fs_hz;
        if ((ugf - want) / want).abs() > 1e-9 {
            return bad(format!(
                "integrator unity-gain frequency 1/RC = {ugf} rad/s must equal G·fs = {want}"
            ));
        }
        if !(self.vfb_mv > 0.0) {
            return bad(format!("vfb_mv must be > 0, got {}", self.vfb_mv));
        }
        if !(self.clip_factor > 1.0) {
            return bad(format!("clip_factor must be > 1, got {}", self.clip_factor));
        }
        if self.chopper_on {
            self.chop_period_substeps()?;
        }
        Ok(())
    }

    pub fn integrator(&self) -> IntegratorParams {
        IntegratorParams { a_i: self.a_i, a_f: self.a_f, r_ohm: self.r_ohm, c_farad: self.c_farad }
    }

    pub fn vfb_v(&self) -> f64 {
        self.vfb_mv * 1e-3
    }

    pub fn substep_rate_hz(&self) -> f64 {
        self.fs_hz * self.substeps as f64
    }

    /// Sine of the given level relative to full scale `vfb`.
    pub fn tone(&self, amp_dbfs: f64, freq_hz: f64) -> Result<SampleStream> {
        let amp = self.vfb_v() * 10f64.powf(amp_dbfs / 20.0);
        gen_sine(amp, freq_hz, self.fs_hz, self.duration_samples, 0.0)
    }

    fn chop_period_substeps(&self) -> Result<usize> {
        if !(self.f_ch_hz > 0.0) {
            return Err(Error::InvalidParameter(format!("f_ch_hz must be > 0, got {}", self.f_ch_hz)));
        }
        let half = self.substep_rate_hz() / (2.0 * self.f_ch_hz);
        if half < 1.0 || (half - half.round()).abs() > 1e-9 {
            return Err(Error::ChopperAlignment(half));
        }
        Ok(2 * half.round() as usize)
    }
}

/// ±1 modulator output.
#[derive(Debug, Clone, PartialEq)]
pub struct BitStream {
    rate_hz: f64,
    bits: Vec<i8>,
}

impl BitStream {
    pub fn new(rate_hz: f64, bits: Vec<i8>) -> Result<Self> {
        if !(rate_hz > 0.0) {
            return Err(Error::InvalidParameter(format!("rate must be > 0, got {rate_hz}")));
        }
        if let Some(b) = bits.iter().find(|b| **b != 1 && **b != -1) {
            return Err(Error::InvalidParameter(format!("bit value {b} not in {{-1, +1}}")));
        }
        Ok(Self { rate_hz, bits })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn bits(&self) -> &[i8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.bits.iter().map(|b| *b as f64).sum::<f64>() / self.bits.len().max(1) as f64
    }

    pub fn ones_density(&self) -> f64 {
        self.bits.iter().filter(|b| **b > 0).count() as f64 / self.bits.len().max(1) as f64
    }

    /// Bits as volts, `±scale`.
    pub fn to_stream(&self, scale: f64) -> Result<SampleStream> {
        SampleStream::new(self.rate_hz, self.bits.iter().map(|b| *b as f64 * scale).collect(), "bitstream")
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "rate_hz={}", self.rate_hz)?;
        let mut line = Vec::with_capacity(65);
        for chunk in self.bits.chunks(64) {
            line.clear();
            line.extend(chunk.iter().map(|b| if *b > 0 { b'1' } else { b'0' }));
            line.push(b'\n');
            w.write_all(&line)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty bitstream file".into()))??;
        let rate = header
            .strip_prefix("rate_hz=")
            .ok_or_else(|| Error::Parse(format!("bad header {header:?}")))?
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("rate_hz: {e}")))?;
        let mut bits = Vec::new();
        for line in lines {
            for c in line?.trim_end().bytes() {
                bits.push(match c {
                    b'1' => 1,
                    b'0' => -1,
                    _ => return Err(Error::Parse(format!("unexpected character {:?}", c as char))),
                });
            }
        }
        Self::new(rate, bits)
    }
}

/// Simulation result. Integrator waveforms are present only when
/// recording was requested.
#[derive(Debug, Clone)]
pub struct ModTrace {
    /// First integrator output at the sub-step rate.
    pub w1: Option<SampleStream>,
    /// Second integrator output at `f_s`, after each update.
    pub w2: Option<SampleStream>,
    pub q: BitStream,
    /// Sampling periods in which an integrator was clipped.
    pub overload_events: Vec<usize>,
}

impl ModTrace {
    pub fn overload_fraction(&self) -> f64 {
        self.overload_events.len() as f64 / self.q.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W, substeps: usize) -> std::io::Result<()> {
        writeln!(w, "index,q,w2_v,w1_sampled_v")?;
        let w1 = self.w1.as_ref().map(|s| s.samples());
        let w2 = self.w2.as_ref().map(|s| s.samples());
        for (k, q) in self.q.bits().iter().enumerate() {
            let a = w2.map(|s| format!("{:.10e}", s[k])).unwrap_or_default();
            let b = w1.map(|s| format!("{:.10e}", s[k * substeps + substeps / 2])).unwrap_or_default();
            writeln!(w, "{k},{q},{a},{b}")?;
        }
        Ok(())
    }
}

/// State of the one-pole realisation of the DDA integrator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CtState {
    pub x: f64,
}

/// Precomputed exact-ZOH coefficients for a fixed step.
#[derive(Debug, Clone, Copy)]
pub struct CtStepper {
    decay: f64,
    gain: f64,
    feedthrough: f64,
    a_i_eff: f64,
    a_f: f64,
}

impl CtStepper {
    pub fn new(p: &IntegratorParams, dt: f64) -> Self {
        let tau = p.tau();
        Self {
            decay: (-dt / tau).exp(),
            gain: -(-dt / tau).exp_m1(),
            feedthrough: p.a_i / (p.a_f + 1.0),
            a_i_eff: p.a_f * p.a_i / (p.a_f + 1.0),
            a_f: p.a_f,
        }
    }

    #[inline]
    pub fn step(&self, s: &mut CtState, v_i: f64, v_f: f64) -> f64 {
        s.x = s.x * self.decay + self.gain * (self.a_i_eff * v_i - self.a_f * v_f);
        self.feedthrough * v_i + s.x
    }

    pub fn feedthrough(&self) -> f64 {
        self.feedthrough
    }
}

/// One exact zero-order-hold step of the DDA integrator. Returns the new
/// state and the output at the end of the step.
pub fn ct_stage_step(state: CtState, v_i: f64, v_f: f64, dt: f64, p: &IntegratorParams) -> (CtState, f64) {
    let mut s = state;
    let out = CtStepper::new(p, dt).step(&mut s, v_i, v_f);
    (s, out)
}

/// Delaying switched-capacitor integrator.
#[inline]
pub fn dt_stage_step(w2_prev: f64, u_sampled: f64, v_fb: f64, g: f64) -> f64 {
    w2_prev + g * (u_sampled - v_fb)
}

/// Comparator and NRZ DAC. A tie at exactly zero resolves to `+1`.
#[inline]
pub fn quantize_and_dac(w2: f64, vfb_amp: f64) -> (i8, f64) {
    if w2 >= 0.0 {
        (1, vfb_amp)
    } else {
        (-1, -vfb_amp)
    }
}

/// Chopper polarity for global sub-step `i`: `+1` on `[S/4, S/4 + P/2)`
/// modulo the chopper period `P`.
#[inline]
fn chop_sign(i: usize, period: usize, quarter: usize) -> f64 {
    if (i + period - quarter % period) % period < period / 2 {
        1.0
    } else {
        -1.0
    }
}

/// Run the loop without recording integrator waveforms.
pub fn simulate(cfg: &ModulatorConfig, input: &SampleStream, noise: Option<&mut dyn NoiseSource>) -> Result<ModTrace> {
    simulate_with(cfg, input, noise, false)
}

/// Run the loop. `input` is sampled at `f_s` (held across sub-steps) or
/// at the sub-step rate.
pub fn simulate_with(
    cfg: &ModulatorConfig,
    input: &SampleStream,
    mut noise: Option<&mut dyn NoiseSource>,
    record: bool,
) -> Result<ModTrace> {
    cfg.validate()?;
    let s = cfg.substeps;
    let per_sub = if rate_matches(input.rate_hz(), cfg.fs_hz) {
        false
    } else if rate_matches(input.rate_hz(), cfg.substep_rate_hz()) {
        if input.len() % s != 0 {
            return Err(Error::InvalidParameter(format!(
                "sub-step-rate input length {} is not a multiple of {s}",
                input.len()
            )));
        }
        true
    } else {
        return Err(Error::InvalidParameter(format!(
            "input rate {} Hz matches neither fs nor fs·substeps",
            input.rate_hz()
        )));
    };
    let n = if per_sub { input.len() / s } else { input.len() };
    let x = input.samples();

    let stepper = CtStepper::new(&cfg.integrator(), 1.0 / cfg.substep_rate_hz());
    let vfb = cfg.vfb_v();
    let clip = cfg.clip_factor * vfb;
    let chop = if cfg.chopper_on { Some((cfg.chop_period_substeps()?, s / 4)) } else { None };
    let sample_at = s / 2;

    let mut ct = CtState::default();
    let mut w2 = 0.0;
    let (mut y, mut level) = quantize_and_dac(w2, vfb);
    let mut bits = Vec::with_capacity(n);
    let mut overload = Vec::new();
    let mut w1_rec = Vec::with_capacity(if record { n * s } else { 0 });
    let mut w2_rec = Vec::with_capacity(if record { n } else { 0 });

    for k in 0..n {
        bits.push(y);
        let mut clipped = false;
        let mut w1_s = 0.0;
        for j in 0..s {
            let u = if per_sub { x[k * s + j] } else { x[k] };
            let (v_i, v_f) = match noise.as_deref_mut() {
                Some(src) => {
                    let pn = src.next_noise();
                    let c = chop.map_or(1.0, |(p, q)| chop_sign(k * s + j, p, q));
                    (u + c * pn.dda, level + pn.feedback)
                }
                None => (u, level),
            };
            let mut w1 = stepper.step(&mut ct, v_i, v_f);
            if w1.abs() > clip {
                w1 = w1.clamp(-clip, clip);
                ct.x = w1 - stepper.feedthrough() * v_i;
                clipped = true;
            }
            if j == sample_at {
                w1_s = w1;
            }
            if record {
                w1_rec.push(w1);
            }
        }
        w2 = dt_stage_step(w2, w1_s, level, cfg.g);
        if w2.abs() > clip {
            w2 = w2.clamp(-clip, clip);
            clipped = true;
        }
        if clipped {
            overload.push(k);
        }
        if record {
            w2_rec.push(w2);
        }
        (y, level) = quantize_and_dac(w2, vfb);
    }

    Ok(ModTrace {
        w1: if record { Some(SampleStream::new(cfg.substep_rate_hz(), w1_rec, "w1")?) } else { None },
        w2: if record { Some(SampleStream::new(cfg.fs_hz, w2_rec, "w2")?) } else { None },
        q: BitStream::new(cfg.fs_hz, bits)?,
        overload_events: overload,
    })
}

fn rate_matches(a: f64, b: f64) -> bool {
    ((a - b) / b).abs() < 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ideal_cfg() -> ModulatorConfig {
        ModulatorConfig { a_i: 1e6, a_f: 1e6, chopper_on: false, ..Default::default() }
    }

    fn dc(cfg: &ModulatorConfig, v: f64, n: usize) -> SampleStream {
        SampleStream::new(cfg.fs_hz, vec![v; n], "dc").unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        ModulatorConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_mismatched_rc() {
        let cfg = ModulatorConfig { c_farad: 10e-12, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModulatorConfig { substeps: 6, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModulatorConfig { vfb_mv: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModulatorConfig { f_ch_hz: 3e5, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::ChopperAlignment(_))));
    }

    #[test]
    fn homogeneous_decay() {
        let p = IntegratorParams::symmetric(1000.0, 100e3, 20e-12).unwrap();
        let (s, _) = ct_stage_step(CtState { x: 1.0 }, 0.0, 0.0, 1e-3, &p);
        assert!((s.x - (-1e-3 / p.tau()).exp()).abs() < 1e-15);
    }

    #[test]
    fn inverting_integration_small_t() {
        let p = IntegratorParams::symmetric(1000.0, 100e3, 20e-12).unwrap();
        let t = 1e-7;
        let (_, out) = ct_stage_step(CtState::default(), 0.0, 0.1, t, &p);
        let want = -0.1 * t / p.rc() * 1000.0 / 1001.0;
        assert!((out / want - 1.0).abs() < 1e-4, "{out} vs {want}");
    }

    /// Forward Euler on `τ·dx/dt = −x + A_f·A_i/(A_f+1)·v_i − A_f·v_f`.
    fn euler(p: &IntegratorParams, x0: f64, v_i: f64, v_f: f64, dt: f64, fine: usize) -> f64 {
        let h = dt / fine as f64;
        let tau = p.tau();
        let drive = p.a_f * p.a_i / (p.a_f + 1.0) * v_i - p.a_f * v_f;
        let mut x = x0;
        for _ in 0..fine {
            x += h / tau * (drive - x);
        }
        x
    }

    #[test]
    fn exact_step_matches_dense_euler() {
        let p = IntegratorParams::new(1000.0, 500.0, 100e3, 20e-12).unwrap();
        let dt = 1e-6 / 16.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut s, mut xe) = (CtState::default(), 0.0);
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for _ in 0..100 * 16 {
            let v_i = rng.gen_range(-0.1..0.1);
            let v_f = rng.gen_range(-0.1..0.1);
            let (ns, out) = ct_stage_step(s, v_i, v_f, dt, &p);
            s = ns;
            xe = euler(&p, xe, v_i, v_f, dt, 1000);
            let oe = p.a_i / (p.a_f + 1.0) * v_i + xe;
            scale = scale.max(oe.abs());
            worst = worst.max((out - oe).abs());
        }
        assert!(worst / scale < 1e-6, "{}", worst / scale);
    }

    #[test]
    fn dt_stage_examples() {
        assert_eq!(dt_stage_step(0.7, 0.1, 0.1, 0.5), 0.7);
        let mut w = 0.0;
        for _ in 0..10 {
            w = dt_stage_step(w, 1.0, 0.0, 0.5);
        }
        assert_eq!(w, 5.0);
    }

    #[test]
    fn dt_stage_equals_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = 0.5;
        let mut w = 0.0;
        for k in 0..200 {
            // impulse response of G·z⁻¹/(1−z⁻¹) is G for every lag >= 1
            let conv: f64 = (0..k).map(|j| g * (u[j] - v[j])).sum();
            assert!((w - conv).abs() <= 1e-12 * (1.0 + conv.abs()));
            w = dt_stage_step(w, u[k], v[k], g);
        }
    }

    #[test]
    fn quantizer_sign_and_tie() {
        assert_eq!(quantize_and_dac(0.3, 0.1), (1, 0.1));
        assert_eq!(quantize_and_dac(-1e-12, 0.1), (-1, -0.1));
        assert_eq!(quantize_and_dac(0.0, 0.1), (1, 0.1));
    }

    #[test]
    fn chopper_toggles_at_quarter_periods() {
        let signs: Vec<f64> = (0..16).map(|i| chop_sign(i, 8, 2)).collect();
        assert_eq!(
            signs,
            [-1.0, -1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0]
        );
    }

    #[test]
    fn zero_input_is_balanced() {
        let cfg = ideal_cfg();
        let t = simulate(&cfg, &dc(&cfg, 0.0, 1 << 18), None).unwrap();
        assert!((t.q.ones_density() - 0.5).abs() < 0.01);
        assert!(t.overload_events.is_empty());
    }

    #[test]
    fn loop_average_follows_input() {
        let cfg = ModulatorConfig { chopper_on: false, ..Default::default() };
        let t = simulate(&cfg, &dc(&cfg, 0.01, 1 << 18), None).unwrap();
        let avg = t.q.mean() * cfg.vfb_v();
        assert!((avg / 0.01 - 1.0).abs() < 0.02, "{avg}");
    }

    #[test]
    fn port_skew_multiplies_gain() {
        let cfg = ModulatorConfig { a_i: 2000.0, a_f: 1000.0, chopper_on: false, ..Default::default() };
        let t = simulate(&cfg, &dc(&cfg, 0.01, 1 << 18), None).unwrap();
        let avg = t.q.mean() * cfg.vfb_v();
        assert!((avg / 0.02 - 1.0).abs() < 0.02, "{avg}");
    }

    #[test]
    fn substep_rate_input_equals_held_input() {
        let cfg = ModulatorConfig { duration_samples: 4096, ..ideal_cfg() };
        let a = cfg.tone(-6.0, 1000.0).unwrap();
        let held: Vec<f64> = a.samples().iter().flat_map(|v| std::iter::repeat(*v).take(cfg.substeps)).collect();
        let b = SampleStream::new(cfg.substep_rate_hz(), held, "b").unwrap();
        let ta = simulate(&cfg, &a, None).unwrap();
        let tb = simulate(&cfg, &b, None).unwrap();
        assert_eq!(ta.q, tb.q);
    }

    #[test]
    fn recording_has_consistent_lengths() {
        let cfg = ModulatorConfig { duration_samples: 1000, ..Default::default() };
        let t = simulate_with(&cfg, &cfg.tone(-3.0, 1000.0).unwrap(), None, true).unwrap();
        assert_eq!(t.w1.as_ref().unwrap().len(), 1000 * cfg.substeps);
        assert_eq!(t.w2.as_ref().unwrap().len(), 1000);
        assert_eq!(t.q.len(), 1000);
    }

    #[test]
    fn overload_is_recorded_and_clipped() {
        let cfg = ModulatorConfig { chopper_on: false, ..Default::default() };
        let t = simulate_with(&cfg, &dc(&cfg, 0.5, 2000), None, true).unwrap();
        assert!(!t.overload_events.is_empty());
        let clip = cfg.clip_factor * cfg.vfb_v();
        assert!(t.w2.unwrap().samples().iter().all(|v| v.abs() <= clip));
    }

    #[test]
    fn rejects_unrelated_input_rate() {
        let cfg = ModulatorConfig::default();
        let x = SampleStream::new(3e5, vec![0.0; 10], "x").unwrap();
        assert!(simulate(&cfg, &x, None).is_err());
    }

    #[test]
    fn bitstream_roundtrip() {
        let bits: Vec<i8> = (0..150).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        let q = BitStream::new(1e6, bits).unwrap();
        let mut buf = Vec::new();
        q.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("rate_hz=1000000\n100100"));
        assert_eq!(text.lines().nth(1).unwrap().len(), 64);
        assert_eq!(BitStream::read_from(&buf[..]).unwrap(), q);
        assert!(BitStream::new(1.0, vec![0]).is_err());
    }
}
