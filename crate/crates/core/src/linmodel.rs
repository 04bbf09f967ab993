//! Closed-form s- and z-domain models of the front-end.
//!
//! The DDA R-C integrator has two input ports. The noninverting port
//! carries the sensor signal, the inverting port closes the R-C loop and
//! receives the feedback DAC. Per-port DC gains `A_i` and `A_f` share the
//! pole `1/((A_f+1)·R·C)`; the signal path adds a zero at `1/(R·C)`.
//!
//! The loop-level model treats the continuous-time first stage as a
//! delaying integrator with pre-gain `G`, followed by a second delaying
//! integrator with the same pre-gain and a 1-bit quantizer modelled as
//! additive white error. Feedback is attenuated by `1/N` (programmable
//! gain) and, at the first stage only, by a further `1/n` (port-gain skew).

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// DDA R-C integrator parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorParams {
    /// Noninverting-port DC gain (V/V).
    pub a_i: f64,
    /// Inverting-port DC gain (V/V).
    pub a_f: f64,
    pub r_ohm: f64,
    pub c_farad: f64,
}

impl IntegratorParams {
    pub fn new(a_i: f64, a_f: f64, r_ohm: f64, c_farad: f64) -> Result<Self> {
        let p = Self { a_i, a_f, r_ohm, c_farad };
        p.validate()?;
        Ok(p)
    }

    /// Equal port gains.
    pub fn symmetric(a: f64, r_ohm: f64, c_farad: f64) -> Result<Self> {
        Self::new(a, a, r_ohm, c_farad)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_f > 0.0 && self.a_i >= self.a_f && self.a_i.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "port gains need A_i >= A_f > 0 (A_i = {}, A_f = {})",
                self.a_i, self.a_f
            )));
        }
        if !(self.r_ohm > 0.0 && self.c_farad > 0.0) {
            return Err(Error::InvalidParameter("R and C must be positive".into()));
        }
        Ok(())
    }

    pub fn rc(&self) -> f64 {
        self.r_ohm * self.c_farad
    }

    /// Closed-loop time constant `(A_f+1)·R·C`.
    pub fn tau(&self) -> f64 {
        (self.a_f + 1.0) * self.rc()
    }

    /// Skew ratio `n = A_i/A_f`.
    pub fn skew(&self) -> f64 {
        self.a_i / self.a_f
    }

    pub fn pole_rad_s(&self) -> f64 {
        1.0 / self.tau()
    }

    pub fn zero_rad_s(&self) -> f64 {
        1.0 / self.rc()
    }
}

/// Port transfer functions evaluated at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortResponse {
    pub h_i: Complex64,
    pub h_f: Complex64,
}

/// `H_i = A_i(1+sRC)/(1+(A_f+1)sRC)`, `H_f = −A_f/(1+(A_f+1)sRC)` at `s = j2πf`.
pub fn dda_integrator_response(p: &IntegratorParams, f_hz: f64) -> PortResponse {
    let s = Complex64::new(0.0, 2.0 * PI * f_hz);
    let den = 1.0 + s * p.tau();
    PortResponse {
        h_i: p.a_i * (1.0 + s * p.rc()) / den,
        h_f: -p.a_f / den,
    }
}

/// Loop-level parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopParams {
    /// Integrator pre-gain `G`.
    pub g: f64,
    /// Feedback attenuation `N` (signal gain).
    pub n_atten: f64,
    /// Port-gain skew `n`.
    pub n_skew: f64,
}

impl LoopParams {
    pub fn new(g: f64, n_atten: f64, n_skew: f64) -> Result<Self> {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::InvalidParameter(format!("G must lie in (0, 1], got {g}")));
        }
        if !(n_atten >= 1.0 && n_skew >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "N and n must be >= 1 (N = {n_atten}, n = {n_skew})"
            )));
        }
        Ok(Self { g, n_atten, n_skew })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopResponse {
    pub stf: Complex64,
    pub ntf: Complex64,
}

/// Point on the unit circle at normalised frequency `f/f_s`.
pub fn unit_circle(f_over_fs: f64) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * f_over_fs)
}

fn check_unit_circle(z: Complex64) -> Result<()> {
    if (z.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("|z| must be 1, got {}", z.norm())));
    }
    Ok(())
}

/// Exact cascaded-integrator transfer functions (port skew `n = 1`).
///
/// `STF = G²N z⁻²/D`, `NTF = N(1−z⁻¹)²/D`,
/// `D = (G²−G+N)z⁻² + (G−2N)z⁻¹ + N`.
pub fn stf_ntf_exact(lp: &LoopParams, z: Complex64) -> Result<LoopResponse> {
    check_unit_circle(z)?;
    if (lp.n_skew - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter("the exact loop model requires n = 1".into()));
    }
    let (g, n) = (lp.g, lp.n_atten);
    let zi = z.inv();
    let d = (g * g - g + n) * zi * zi + (g - 2.0 * n) * zi + n;
    if d.norm() < 1e-14 * n {
        return Err(Error::Resonance);
    }
    let one_minus = 1.0 - zi;
    Ok(LoopResponse {
        stf: g * g * n * zi * zi / d,
        ntf: n * one_minus * one_minus / d,
    })
}

/// Low-frequency approximation valid near `z = 1`:
/// `STF = nN z⁻²`, `NTF = (1−z⁻¹)²·nN/G²`.
pub fn stf_ntf_dc_approx(lp: &LoopParams, z: Complex64) -> Result<LoopResponse> {
    check_unit_circle(z)?;
    let k = lp.n_skew * lp.n_atten;
    let zi = z.inv();
    let one_minus = 1.0 - zi;
    Ok(LoopResponse {
        stf: k * zi * zi,
        ntf: one_minus * one_minus * k / (lp.g * lp.g),
    })
}

fn loop_response(lp: &LoopParams, z: Complex64) -> Result<LoopResponse> {
    if (lp.n_skew - 1.0).abs() <= 1e-12 {
        stf_ntf_exact(lp, z)
    } else {
        stf_ntf_dc_approx(lp, z)
    }
}

/// Quantizer step of the ±1 output.
pub const QUANTIZER_STEP: f64 = 2.0;

/// Linearised signal-to-quantisation-noise prediction in dB.
///
/// Signal amplitude is `10^(amp_dbfs/20)` in units of the unit DAC level
/// and is weighted by the DC signal gain. Quantisation error is white with
/// one-sided density `Δ²/(12·f_s/2)`, shaped by `|NTF|²` and integrated up to
/// `f_s/(2·osr)`. The exact loop model is used when `n = 1`, the near-DC
/// approximation otherwise.
pub fn sqnr_predict(lp: &LoopParams, osr: f64, amp_dbfs: f64) -> Result<f64> {
    if !(osr >= 8.0) {
        return Err(Error::InvalidParameter(format!("osr must be >= 8, got {osr}")));
    }
    let amp = 10f64.powf(amp_dbfs / 20.0);
    let stf_dc = loop_response(lp, Complex64::new(1.0, 0.0))?.stf.norm();
    let signal = stf_dc * stf_dc * amp * amp / 2.0;

    // ∫ |NTF|² dν over ν = f/f_s ∈ [0, 1/(2·osr)], composite Simpson
    let nu_max = 0.5 / osr;
    let m = 4096;
    let h = nu_max / m as f64;
    let mut acc = 0.0;
    for i in 0..=m {
        let w = if i == 0 || i == m {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * loop_response(lp, unit_circle(i as f64 * h))?.ntf.norm_sqr();
    }
    let integral = acc * h / 3.0;
    // one-sided density Δ²/(12·f_s/2) times df = f_s·dν
    let noise = QUANTIZER_STEP * QUANTIZER_STEP / 6.0 * integral;
    Ok(10.0 * (signal / noise).log10())
}

/// Rows of a frequency-response table.
pub fn write_response_csv<W: Write>(mut w: W, rows: &[(f64, Complex64)]) -> std::io::Result<()> {
    writeln!(w, "freq_hz,mag_db,phase_deg")?;
    for (f, h) in rows {
        writeln!(w, "{:.10e},{:.10e},{:.10e}", f, 20.0 * h.norm().max(1e-300).log10(), h.arg().to_degrees())?;
    }
    Ok(())
}

/// Log-spaced frequencies, `points_per_decade` per decade, inclusive ends.
pub fn log_sweep(f_lo: f64, f_hi: f64, points_per_decade: usize) -> Vec<f64> {
    let decades = (f_hi / f_lo).log10();
    let n = (decades * points_per_decade as f64).ceil() as usize;
    (0..=n).map(|i| f_lo * 10f64.powf(decades * i as f64 / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig4() -> IntegratorParams {
        // 60 dB DC gain, integrator UGF 5e4 rad/s
        IntegratorParams::symmetric(1000.0, 100e3, 200e-12).unwrap()
    }

    #[test]
    fn dc_gains() {
        let r = dda_integrator_response(&fig4(), 0.0);
        assert!((r.h_i - Complex64::new(1000.0, 0.0)).norm() < 1e-9);
        assert!((r.h_f - Complex64::new(-1000.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn fig4_pole_and_zero() {
        let p = fig4();
        assert!((p.pole_rad_s() - 49.95).abs() < 0.01, "{}", p.pole_rad_s());
        assert!((p.zero_rad_s() - 5e4).abs() < 1e-6);
    }

    #[test]
    fn high_frequency_limit() {
        let p = fig4();
        let f = 1e6 / (2.0 * PI * p.rc());
        let r = dda_integrator_response(&p, f);
        assert!((r.h_i.norm() / (1000.0 / 1001.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn symmetric_case_is_the_textbook_form() {
        let p = IntegratorParams::symmetric(750.0, 1e5, 2e-11).unwrap();
        for f in [0.1, 10.0, 1e3, 1e5, 1e7] {
            let s = Complex64::new(0.0, 2.0 * PI * f);
            let a = 750.0;
            let rc = p.rc();
            let hi = a * (1.0 + s * rc) / (1.0 + (a + 1.0) * s * rc);
            let hf = -a / (1.0 + (a + 1.0) * s * rc);
            let r = dda_integrator_response(&p, f);
            assert!((r.h_i - hi).norm() <= 1e-14 * hi.norm());
            assert!((r.h_f - hf).norm() <= 1e-14 * hf.norm());
        }
    }

    #[test]
    fn integrator_slope_between_pole_and_zero() {
        let p = fig4();
        let fp = p.pole_rad_s() / (2.0 * PI);
        let fz = p.zero_rad_s() / (2.0 * PI);
        let pts: Vec<(f64, f64)> = log_sweep(10.0 * fp, 0.1 * fz, 20)
            .into_iter()
            .map(|f| (f.log10(), 20.0 * dda_integrator_response(&p, f).h_i.norm().log10()))
            .collect();
        let slope = crate::sigproc::linear_fit(&pts).0;
        assert!((slope + 20.0).abs() < 0.5, "{slope}");
    }

    #[test]
    fn rejects_bad_params() {
        assert!(IntegratorParams::new(10.0, 20.0, 1.0, 1.0).is_err());
        assert!(IntegratorParams::new(10.0, 0.0, 1.0, 1.0).is_err());
        assert!(IntegratorParams::new(10.0, 10.0, -1.0, 1.0).is_err());
        assert!(LoopParams::new(0.0, 1.0, 1.0).is_err());
        assert!(LoopParams::new(0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn exact_at_dc() {
        for n in [1.0, 2.0, 7.5] {
            let lp = LoopParams::new(0.5, n, 1.0).unwrap();
            let r = stf_ntf_exact(&lp, Complex64::new(1.0, 0.0)).unwrap();
            assert_eq!(r.ntf.norm(), 0.0);
            assert!((r.stf - Complex64::new(n, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn exact_matches_block_diagram_algebra() {
        // second route: solve the cascaded-integrator loop directly
        let lp = LoopParams::new(0.5, 1.0, 1.0).unwrap();
        let z = unit_circle(0.001);
        let i = z.inv() / (1.0 - z.inv());
        let (g, n) = (lp.g, lp.n_atten);
        let loop_gain = 1.0 + g * g * i * i / n + g * i / n;
        let stf = g * g * i * i / loop_gain;
        let ntf = 1.0 / loop_gain;
        let r = stf_ntf_exact(&lp, z).unwrap();
        assert!((r.stf - stf).norm() / stf.norm() < 1e-12);
        assert!((r.ntf - ntf).norm() / ntf.norm() < 1e-12);
    }

    #[test]
    fn exact_requires_unit_skew_and_unit_circle() {
        let lp = LoopParams::new(0.5, 1.0, 2.0).unwrap();
        assert!(stf_ntf_exact(&lp, Complex64::new(1.0, 0.0)).is_err());
        let lp = LoopParams::new(0.5, 1.0, 1.0).unwrap();
        assert!(stf_ntf_exact(&lp, Complex64::new(0.5, 0.0)).is_err());
    }

    #[test]
    fn dc_approx_values() {
        let lp = LoopParams::new(0.5, 5.0, 2.0).unwrap();
        let r = stf_ntf_dc_approx(&lp, Complex64::new(1.0, 0.0)).unwrap();
        assert!((r.stf - Complex64::new(10.0, 0.0)).norm() < 1e-12);
        assert_eq!(r.ntf.norm(), 0.0);
    }

    #[test]
    fn dc_approx_tracks_exact_near_dc() {
        let lp = LoopParams::new(0.5, 1.0, 1.0).unwrap();
        for f in log_sweep(1e-6, 1e-3, 10) {
            let z = unit_circle(f);
            let a = stf_ntf_exact(&lp, z).unwrap().ntf.norm();
            let b = stf_ntf_dc_approx(&lp, z).unwrap().ntf.norm();
            assert!((a / b - 1.0).abs() < 0.01, "f = {f}: {a} vs {b}");
        }
    }

    #[test]
    fn ntf_is_high_pass_near_dc() {
        for n in [1.0, 1.5, 2.0, 2.5] {
            let lp = LoopParams::new(0.5, n, 1.0).unwrap();
            let mut prev = 0.0;
            for i in 1..=500 {
                let m = stf_ntf_exact(&lp, unit_circle(0.05 * i as f64 / 500.0)).unwrap().ntf.norm();
                assert!(m >= prev, "N = {n}, step {i}");
                prev = m;
            }
        }
    }

    #[test]
    fn n_keeps_ntf_zeros_and_scales_dc_gain() {
        for n in [1.0, 2.0, 4.0, 10.0] {
            let lp = LoopParams::new(0.5, n, 1.0).unwrap();
            let dc = stf_ntf_exact(&lp, Complex64::new(1.0, 0.0)).unwrap();
            assert_eq!(dc.ntf.norm(), 0.0);
            assert!((dc.stf.re - n).abs() < 1e-12 * n);
            // double zero: |NTF| ~ f² near DC
            let a = stf_ntf_exact(&lp, unit_circle(1e-5)).unwrap().ntf.norm();
            let b = stf_ntf_exact(&lp, unit_circle(2e-5)).unwrap().ntf.norm();
            assert!((b / a - 4.0).abs() < 1e-3);
        }
    }

    #[test]
    fn stf_peak_moves_toward_dc_as_n_grows() {
        let peak = |n: f64| {
            let lp = LoopParams::new(0.5, n, 1.0).unwrap();
            (0..=2000)
                .map(|i| i as f64 / 4000.0)
                .max_by(|a, b| {
                    let ma = stf_ntf_exact(&lp, unit_circle(*a)).unwrap().stf.norm();
                    let mb = stf_ntf_exact(&lp, unit_circle(*b)).unwrap().stf.norm();
                    ma.partial_cmp(&mb).unwrap()
                })
                .unwrap()
        };
        let (p1, p4, p10) = (peak(1.0), peak(4.0), peak(10.0));
        assert!(p1 > p4 && p4 > p10, "{p1} {p4} {p10}");
    }

    #[test]
    fn sqnr_osr_doubling_adds_15_db() {
        let lp = LoopParams::new(0.5, 1.0, 1.0).unwrap();
        let a = sqnr_predict(&lp, 250.0, -3.0).unwrap();
        let b = sqnr_predict(&lp, 500.0, -3.0).unwrap();
        assert!((b - a - 15.05).abs() < 0.2, "{}", b - a);
    }

    #[test]
    fn ntf_peaks_inside_low_band_for_large_n() {
        // pole radius² = 1 − (G − G²)/N approaches 1 as N grows
        let lp = LoopParams::new(0.5, 4.0, 1.0).unwrap();
        let m = |f: f64| stf_ntf_exact(&lp, unit_circle(f)).unwrap().ntf.norm();
        assert!(m(0.041) > m(0.05));
    }

    #[test]
    fn sqnr_nearly_independent_of_n() {
        // N cancels exactly at DC; the residual comes from D(z) away from z = 1
        let a = sqnr_predict(&LoopParams::new(0.5, 1.0, 1.0).unwrap(), 500.0, -3.0).unwrap();
        let b = sqnr_predict(&LoopParams::new(0.5, 4.0, 1.0).unwrap(), 500.0, -3.0).unwrap();
        assert!((a - b).abs() < 0.01, "{a} {b}");
    }

    #[test]
    fn sqnr_linear_in_amplitude() {
        let lp = LoopParams::new(0.5, 1.0, 1.0).unwrap();
        let a = sqnr_predict(&lp, 500.0, -3.0).unwrap();
        let b = sqnr_predict(&lp, 500.0, -13.0).unwrap();
        assert!((a - b - 10.0).abs() < 1e-9);
        assert!(sqnr_predict(&lp, 4.0, -3.0).is_err());
    }

    #[test]
    fn response_csv_header() {
        let mut out = Vec::new();
        write_response_csv(&mut out, &[(1.0, Complex64::new(10.0, 0.0))]).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("freq_hz,mag_db,phase_deg\n1.0000000000e0,2.0000000000e1,0.0000000000e0"));
    }
}
