//! Multi-axis discrete Fourier transforms over grid tensors.
//!
//! Normalization convention, fixed once: unnormalized forward transform,
//! 1/N on the inverse. Parseval then reads sum v^2 = (1/N) sum |v_hat|^2.

use super::Tensor;
use crate::error::{CoreError, Result};
use num_complex::Complex;
use rustfft::FftPlanner;
use std::cell::RefCell;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place complex FFT along one axis of a row-major array.
pub fn fft_along_axis(data: &mut [Complex<f64>], dims: &[usize], axis: usize, forward: bool) {
    let len = dims[axis];
    if len <= 1 {
        return;
    }
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if forward {
            p.plan_fft_forward(len)
        } else {
            p.plan_fft_inverse(len)
        }
    });
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let inner_block = stride * len;
    let mut lane = vec![Complex::new(0.0, 0.0); len];
    for o in 0..outer {
        for s in 0..stride {
            let base = o * inner_block + s;
            if stride == 1 {
                fft.process(&mut data[base..base + len]);
            } else {
                for (k, v) in lane.iter_mut().enumerate() {
                    *v = data[base + k * stride];
                }
                fft.process(&mut lane);
                for (k, v) in lane.iter().enumerate() {
                    data[base + k * stride] = *v;
                }
            }
        }
    }
}

/// Full multi-axis complex FFT; `forward = false` is unnormalized inverse.
pub fn fftn(data: &mut [Complex<f64>], dims: &[usize], forward: bool) {
    for axis in 0..dims.len() {
        fft_along_axis(data, dims, axis, forward);
    }
}

/// Forward transform of a real grid tensor. Returns the full complex mode
/// cube; conjugate symmetry of the coefficients is implied by the real input.
pub fn rfft_modes(v: &Tensor) -> Result<Vec<Complex<f64>>> {
    if v.shape().is_empty() || v.shape().len() > 3 {
        return Err(CoreError::dimension(
            "rfft_modes expects rank 1..3",
            3,
            v.shape().len(),
        ));
    }
    let mut buf: Vec<Complex<f64>> = v.data().iter().map(|&x| Complex::new(x, 0.0)).collect();
    fftn(&mut buf, v.shape(), true);
    Ok(buf)
}

/// Inverse of [`rfft_modes`]: applies 1/N and returns the real part.
pub fn irfft_modes(modes: &[Complex<f64>], shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if modes.len() != n {
        return Err(CoreError::dimension("irfft_modes", n, modes.len()));
    }
    let mut buf = modes.to_vec();
    fftn(&mut buf, shape, false);
    let scale = 1.0 / n as f64;
    Tensor::new(shape.to_vec(), buf.iter().map(|c| c.re * scale).collect())
}

/// Frequency index along an axis of length `p`: 0..p/2 then negative.
#[inline]
pub fn freq_of(idx: usize, p: usize) -> i64 {
    if idx <= p / 2 {
        idx as i64
    } else {
        idx as i64 - p as i64
    }
}

/// Zeroes every mode with |freq| > k_max on any axis and transforms back.
pub fn lowpass(v: &Tensor, k_max: &[usize]) -> Result<Tensor> {
    let dims = v.shape().to_vec();
    if k_max.len() != dims.len() {
        return Err(CoreError::dimension("lowpass k_max", dims.len(), k_max.len()));
    }
    let mut modes = rfft_modes(v)?;
    let mut idx = vec![0usize; dims.len()];
    for (flat, m) in modes.iter_mut().enumerate() {
        let mut rem = flat;
        for a in (0..dims.len()).rev() {
            idx[a] = rem % dims[a];
            rem /= dims[a];
        }
        let keep = (0..dims.len()).all(|a| freq_of(idx[a], dims[a]).unsigned_abs() as usize <= k_max[a]);
        if !keep {
            *m = Complex::new(0.0, 0.0);
        }
    }
    irfft_modes(&modes, &dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn wavy(n: usize) -> Tensor {
        Tensor::from_vec((0..n).map(|i| (i as f64 * 0.37).sin() + 0.2 * (i as f64 * 1.9).cos()).collect())
    }

    #[test]
    fn constant_field_has_only_dc_mode() {
        let v = Tensor::new(vec![4, 4], vec![3.0; 16]).unwrap();
        let modes = rfft_modes(&v).unwrap();
        assert_relative_eq!(modes[0].re, 48.0, epsilon = 1e-12);
        for m in &modes[1..] {
            assert!(m.norm() < 1e-12);
        }
    }

    #[test]
    fn pure_cosine_hits_two_conjugate_bins() {
        let n = 16;
        let k = 3;
        let v = Tensor::from_vec(
            (0..n)
                .map(|i| (2.0 * PI * k as f64 * i as f64 / n as f64).cos())
                .collect(),
        );
        let modes = rfft_modes(&v).unwrap();
        for (i, m) in modes.iter().enumerate() {
            if i == k || i == n - k {
                assert_relative_eq!(m.re, n as f64 / 2.0, epsilon = 1e-10);
                assert!(m.im.abs() < 1e-10);
            } else {
                assert!(m.norm() < 1e-10, "bin {i} = {m}");
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let v = Tensor::new(vec![4, 3, 5], (0..60).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let modes = rfft_modes(&v).unwrap();
        let back = irfft_modes(&modes, v.shape()).unwrap();
        for (a, b) in v.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_under_documented_normalization() {
        let v = wavy(64);
        let modes = rfft_modes(&v).unwrap();
        let lhs: f64 = v.data().iter().map(|x| x * x).sum();
        let rhs: f64 = modes.iter().map(|m| m.norm_sqr()).sum::<f64>() / 64.0;
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn lowpass_keeps_band_limited_fields() {
        let n = 32;
        let v = Tensor::from_vec(
            (0..n)
                .map(|i| {
                    let x = 2.0 * PI * i as f64 / n as f64;
                    1.0 + (2.0 * x).cos() + 0.5 * (3.0 * x).sin()
                })
                .collect(),
        );
        let lp = lowpass(&v, &[3]).unwrap();
        for (a, b) in v.data().iter().zip(lp.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // And cutting below mode 3 changes it.
        let lp2 = lowpass(&v, &[2]).unwrap();
        let diff: f64 = v
            .data()
            .iter()
            .zip(lp2.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!(diff > 1e-6);
    }
}
