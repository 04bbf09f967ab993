#ifndef DSM_AFE_H
#define DSM_AFE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsmStatus {
  DSM_STATUS_OK = 0,
  DSM_STATUS_NULL_POINTER = 1,
  DSM_STATUS_INVALID_PARAMETER = 2,
  DSM_STATUS_SIGNAL_NOT_RESOLVED = 3,
  DSM_STATUS_BUFFER_TOO_SMALL = 4,
  DSM_STATUS_INTERNAL = 5,
} DsmStatus;

/**
 * A simulated 1-bit output sequence.
 */
typedef struct DsmBitstream DsmBitstream;

/**
 * Modulator and noise settings.
 */
typedef struct DsmConfig DsmConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of the calling thread into `buf` as a
 * NUL-terminated string, truncating if needed. Returns the length of the
 * full message excluding the terminator. `buf` may be null to query the
 * length.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t dsm_last_error_message(char *buf, size_t len);

/**
 * New configuration with default values (1 MHz, 100 mV feedback, chopper
 * on, noise off). Never returns null.
 */
struct DsmConfig *dsm_config_new(void);

/**
 * # Safety
 * `cfg` must be null or a pointer from [`dsm_config_new`] not yet freed.
 */
void dsm_config_free(struct DsmConfig *cfg);

/**
 * Feedback reference (full scale) in millivolts.
 *
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum DsmStatus dsm_config_set_vfb_mv(struct DsmConfig *cfg, double vfb_mv);

/**
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum DsmStatus dsm_config_set_seed(struct DsmConfig *cfg, uint64_t seed);

/**
 * Number of output bits to simulate.
 *
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum DsmStatus dsm_config_set_duration(struct DsmConfig *cfg, size_t samples);

/**
 * DDA open-loop gains at the input and feedback ports.
 *
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum DsmStatus dsm_config_set_dda_gains(struct DsmConfig *cfg, double a_i, double a_f);

/**
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum DsmStatus dsm_config_set_chopper(struct DsmConfig *cfg, bool enabled, double f_ch_hz);

/**
 * Enables device noise with the given DDA thermal density (V²/Hz) and
 * flicker corner (Hz).
 *
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum DsmStatus dsm_config_set_noise(struct DsmConfig *cfg,
                                    bool enabled,
                                    double s_dda_th,
                                    double fc_hz);

/**
 * Simulates a sine input of `amp_dbfs` (relative to the feedback level) at
 * `freq_hz` and stores a new bitstream handle in `*out`.
 *
 * # Safety
 * `cfg` must be a live configuration handle and `out` a valid pointer.
 */
enum DsmStatus dsm_simulate_sine(const struct DsmConfig *cfg,
                                 double amp_dbfs,
                                 double freq_hz,
                                 struct DsmBitstream **out);

/**
 * # Safety
 * `bs` must be null or a handle from [`dsm_simulate_sine`] not yet freed.
 */
void dsm_bitstream_free(struct DsmBitstream *bs);

/**
 * Number of bits, or 0 for a null handle.
 *
 * # Safety
 * `bs` must be null or a live bitstream handle.
 */
size_t dsm_bitstream_len(const struct DsmBitstream *bs);

/**
 * Sampling periods in which an integrator was clipped.
 *
 * # Safety
 * `bs` must be null or a live bitstream handle.
 */
size_t dsm_bitstream_overload_events(const struct DsmBitstream *bs);

/**
 * Copies the ±1 bits into `dst`, which must hold at least
 * [`dsm_bitstream_len`] elements.
 *
 * # Safety
 * `bs` must be a live bitstream handle and `dst` valid for `len` writes.
 */
enum DsmStatus dsm_bitstream_copy(const struct DsmBitstream *bs, int8_t *dst, size_t len);

/**
 * Hann-windowed in-band SNR and ENOB of a bitstream, using the first
 * `n_fft` bits.
 *
 * # Safety
 * `bs` must be a live bitstream handle; the output pointers must be valid.
 */
enum DsmStatus dsm_bitstream_snr(const struct DsmBitstream *bs,
                                 size_t n_fft,
                                 double sig_freq_hz,
                                 double bw_hz,
                                 double *snr_db,
                                 double *enob_bits);

/**
 * Walden figure of merit in pJ per conversion step.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DsmStatus dsm_fom_walden(double power_w, double enob_bits, double nyquist_sps, double *out);

/**
 * Schreier figure of merit in dB.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DsmStatus dsm_fom_schreier(double dr_db, double bw_hz, double power_w, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSM_AFE_H */
