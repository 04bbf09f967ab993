//! C ABI for the dsm-afe simulator.
//!
//! Every fallible function returns a [`DsmStatus`]; on failure the message is
//! kept per thread and can be read with [`dsm_last_error_message`]. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dsm_afe::loopsim::{simulate, BitStream, ModulatorConfig};
use dsm_afe::metrics::{self, AnalysisSettings};
use dsm_afe::noisemodel::{DeviceNoise, NoiseParams, NoiseSource, DEFAULT_FC_HZ, DEFAULT_S_DDA_TH};
use dsm_afe::sigproc::Window;
use dsm_afe::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    SignalNotResolved = 3,
    BufferTooSmall = 4,
    Internal = 5,
}

/// Modulator and noise settings.
pub struct DsmConfig {
    modulator: ModulatorConfig,
    noise_enabled: bool,
    temperature_k: f64,
    s_dda_th: f64,
    fc_hz: f64,
}

/// A simulated 1-bit output sequence.
pub struct DsmBitstream {
    bits: BitStream,
    overload_events: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(e: Error) -> DsmStatus {
    let status = match e {
        Error::SignalNotResolved { .. } => DsmStatus::SignalNotResolved,
        Error::Io(_) => DsmStatus::Internal,
        _ => DsmStatus::InvalidParameter,
    };
    set_error(e.to_string());
    status
}

fn guard(f: impl FnOnce() -> DsmStatus) -> DsmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic".into());
            DsmStatus::Internal
        }
    }
}

fn null() -> DsmStatus {
    set_error("null pointer argument".into());
    DsmStatus::NullPointer
}

/// Copies the last error message of the calling thread into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the length of the
/// full message excluding the terminator. `buf` may be null to query the
/// length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dsm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// New configuration with default values (1 MHz, 100 mV feedback, chopper
/// on, noise off). Never returns null.
#[no_mangle]
pub extern "C" fn dsm_config_new() -> *mut DsmConfig {
    Box::into_raw(Box::new(DsmConfig {
        modulator: ModulatorConfig::default(),
        noise_enabled: false,
        temperature_k: 300.0,
        s_dda_th: DEFAULT_S_DDA_TH,
        fc_hz: DEFAULT_FC_HZ,
    }))
}

/// # Safety
/// `cfg` must be null or a pointer from [`dsm_config_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dsm_config_free(cfg: *mut DsmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn with_config(cfg: *mut DsmConfig, f: impl FnOnce(&mut DsmConfig) -> Result<(), Error>) -> DsmStatus {
    let Some(c) = cfg.as_mut() else { return null() };
    guard(|| {
        let mut next = DsmConfig { modulator: c.modulator.clone(), ..*c };
        if let Err(e) = f(&mut next).and_then(|_| next.modulator.validate()) {
            return fail(e);
        }
        *c = next;
        DsmStatus::Ok
    })
}

/// Feedback reference (full scale) in millivolts.
///
/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dsm_config_set_vfb_mv(cfg: *mut DsmConfig, vfb_mv: f64) -> DsmStatus {
    with_config(cfg, |c| {
        c.modulator.vfb_mv = vfb_mv;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dsm_config_set_seed(cfg: *mut DsmConfig, seed: u64) -> DsmStatus {
    with_config(cfg, |c| {
        c.modulator.seed = seed;
        Ok(())
    })
}

/// Number of output bits to simulate.
///
/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dsm_config_set_duration(cfg: *mut DsmConfig, samples: usize) -> DsmStatus {
    with_config(cfg, |c| {
        c.modulator.duration_samples = samples;
        Ok(())
    })
}

/// DDA open-loop gains at the input and feedback ports.
///
/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dsm_config_set_dda_gains(cfg: *mut DsmConfig, a_i: f64, a_f: f64) -> DsmStatus {
    with_config(cfg, |c| {
        c.modulator.a_i = a_i;
        c.modulator.a_f = a_f;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dsm_config_set_chopper(cfg: *mut DsmConfig, enabled: bool, f_ch_hz: f64) -> DsmStatus {
    with_config(cfg, |c| {
        c.modulator.chopper_on = enabled;
        c.modulator.f_ch_hz = f_ch_hz;
        Ok(())
    })
}

/// Enables device noise with the given DDA thermal density (V²/Hz) and
/// flicker corner (Hz).
///
/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn dsm_config_set_noise(cfg: *mut DsmConfig, enabled: bool, s_dda_th: f64, fc_hz: f64) -> DsmStatus {
    with_config(cfg, |c| {
        c.noise_enabled = enabled;
        c.s_dda_th = s_dda_th;
        c.fc_hz = fc_hz;
        if enabled {
            noise_params(c)?;
        }
        Ok(())
    })
}

fn noise_params(c: &DsmConfig) -> Result<NoiseParams, Error> {
    NoiseParams::new(c.temperature_k, c.s_dda_th, c.fc_hz, c.modulator.f_ch_hz, c.modulator.integrator())
}

/// Simulates a sine input of `amp_dbfs` (relative to the feedback level) at
/// `freq_hz` and stores a new bitstream handle in `*out`.
///
/// # Safety
/// `cfg` must be a live configuration handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dsm_simulate_sine(
    cfg: *const DsmConfig,
    amp_dbfs: f64,
    freq_hz: f64,
    out: *mut *mut DsmBitstream,
) -> DsmStatus {
    let (Some(c), false) = (cfg.as_ref(), out.is_null()) else { return null() };
    guard(|| {
        let run = || -> Result<DsmBitstream, Error> {
            let m = &c.modulator;
            let input = m.tone(amp_dbfs, freq_hz)?;
            let mut noise =
                if c.noise_enabled { Some(DeviceNoise::new(&noise_params(c)?, m.fs_hz, m.substeps, m.duration_samples, m.seed)?) } else { None };
            let trace = simulate(m, &input, noise.as_mut().map(|n| n as &mut dyn NoiseSource))?;
            Ok(DsmBitstream { overload_events: trace.overload_events.len(), bits: trace.q })
        };
        match run() {
            Ok(b) => {
                *out = Box::into_raw(Box::new(b));
                DsmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `bs` must be null or a handle from [`dsm_simulate_sine`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dsm_bitstream_free(bs: *mut DsmBitstream) {
    if !bs.is_null() {
        drop(Box::from_raw(bs));
    }
}

/// Number of bits, or 0 for a null handle.
///
/// # Safety
/// `bs` must be null or a live bitstream handle.
#[no_mangle]
pub unsafe extern "C" fn dsm_bitstream_len(bs: *const DsmBitstream) -> usize {
    bs.as_ref().map_or(0, |b| b.bits.len())
}

/// Sampling periods in which an integrator was clipped.
///
/// # Safety
/// `bs` must be null or a live bitstream handle.
#[no_mangle]
pub unsafe extern "C" fn dsm_bitstream_overload_events(bs: *const DsmBitstream) -> usize {
    bs.as_ref().map_or(0, |b| b.overload_events)
}

/// Copies the ±1 bits into `dst`, which must hold at least
/// [`dsm_bitstream_len`] elements.
///
/// # Safety
/// `bs` must be a live bitstream handle and `dst` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dsm_bitstream_copy(bs: *const DsmBitstream, dst: *mut i8, len: usize) -> DsmStatus {
    let (Some(b), false) = (bs.as_ref(), dst.is_null()) else { return null() };
    let bits = b.bits.bits();
    if len < bits.len() {
        set_error(format!("buffer holds {len} bits, need {}", bits.len()));
        return DsmStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(bits.as_ptr(), dst, bits.len());
    DsmStatus::Ok
}

/// Hann-windowed in-band SNR and ENOB of a bitstream, using the first
/// `n_fft` bits.
///
/// # Safety
/// `bs` must be a live bitstream handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsm_bitstream_snr(
    bs: *const DsmBitstream,
    n_fft: usize,
    sig_freq_hz: f64,
    bw_hz: f64,
    snr_db: *mut f64,
    enob_bits: *mut f64,
) -> DsmStatus {
    let (Some(b), false, false) = (bs.as_ref(), snr_db.is_null(), enob_bits.is_null()) else { return null() };
    guard(|| {
        let a = AnalysisSettings { n_fft, window: Window::Hann, bw_hz, sig_freq_hz, ..Default::default() };
        match a.measure(&b.bits) {
            Ok(r) => {
                *snr_db = r.snr_db;
                *enob_bits = r.enob_bits;
                DsmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Walden figure of merit in pJ per conversion step.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dsm_fom_walden(power_w: f64, enob_bits: f64, nyquist_sps: f64, out: *mut f64) -> DsmStatus {
    if out.is_null() {
        return null();
    }
    match metrics::fom_walden(power_w, enob_bits, nyquist_sps) {
        Ok(v) => {
            *out = v;
            DsmStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Schreier figure of merit in dB.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dsm_fom_schreier(dr_db: f64, bw_hz: f64, power_w: f64, out: *mut f64) -> DsmStatus {
    if out.is_null() {
        return null();
    }
    match metrics::fom_schreier(dr_db, bw_hz, power_w) {
        Ok(v) => {
            *out = v;
            DsmStatus::Ok
        }
        Err(e) => fail(e),
    }
}
