use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Model input rate.
pub const TARGET_RATE: f64 = 100.0;
const TAPS: usize = 63;
const CUTOFF_FRACTION: f64 = 0.45;

/// Hamming-windowed sinc low-pass with unit DC gain; `cutoff` in cycles/sample.
fn lowpass_kernel(cutoff: f64) -> Vec<f64> {
    let mid = (TAPS / 2) as f64;
    let mut h: Vec<f64> = (0..TAPS)
        .map(|i| {
            let n = i as f64 - mid;
            let sinc = if n == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * n).sin() / (PI * n) };
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (TAPS - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let total: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= total);
    h
}

/// FIR filter with edge replication. Written as `x[n] + Σ h[k]·(x[n+k-mid] - x[n])`,
/// which equals the plain convolution for a unit-gain kernel and leaves constant
/// input untouched bit for bit.
fn filter(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mid = (h.len() / 2) as isize;
    let last = x.len() as isize - 1;
    (0..x.len() as isize)
        .map(|n| {
            let centre = x[n as usize];
            let mut acc = 0.0;
            for (k, &hk) in h.iter().enumerate() {
                let j = (n + k as isize - mid).clamp(0, last) as usize;
                acc += hk * (x[j] - centre);
            }
            centre + acc
        })
        .collect()
}

/// Resamples by linear interpolation, low-pass filtering first when downsampling.
///
/// Output length is `round(len · dst/src)`; output sample `j` sits at source time
/// `j / dst_rate`.
pub fn resample(samples: &[f64], src_rate: f64, dst_rate: f64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot resample an empty sequence"));
    }
    if !(src_rate > 0.0 && dst_rate > 0.0) {
        return Err(Error::invalid(format!("rates must be positive: {src_rate} -> {dst_rate}")));
    }
    if src_rate == dst_rate {
        return Ok(samples.to_vec());
    }
    let ratio = dst_rate / src_rate;
    let source = if ratio < 1.0 {
        filter(samples, &lowpass_kernel(CUTOFF_FRACTION * ratio))
    } else {
        samples.to_vec()
    };
    let n_out = (samples.len() as f64 * ratio).round() as usize;
    let last = source.len() - 1;
    Ok((0..n_out)
        .map(|j| {
            let t = j as f64 * src_rate / dst_rate;
            let i = (t.floor() as usize).min(last);
            let frac = t - i as f64;
            if i >= last || frac == 0.0 {
                source[i]
            } else {
                source[i] + frac * (source[i + 1] - source[i])
            }
        })
        .collect())
}
