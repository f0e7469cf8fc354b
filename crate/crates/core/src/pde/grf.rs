//! Periodic Gaussian random fields by spectral synthesis.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex64, FftPlanner};

use super::PdeError;

/// Signed integer wavenumber of FFT bin `i` on `n` points.
fn wavenumber(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Inverse 2D FFT in place over a row-major `n x n` buffer.
pub(crate) fn ifft2(buf: &mut [Complex64], n: usize) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_inverse(n);
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = buf[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            buf[i * n + j] = col[i];
        }
    }
}

/// Random field on an `n x n` periodic grid with power spectrum `(1 + |k|^2)^(-alpha/2)`,
/// `k` the integer wavenumber vector. The result has zero mean and unit (population)
/// standard deviation.
pub fn sample_grf(grid_n: usize, alpha: f64, seed: u64) -> Result<Array2<f64>, PdeError> {
    if grid_n < 8 {
        return Err(PdeError::GridTooSmall(grid_n));
    }
    let n = grid_n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        let kx = wavenumber(i, n);
        for j in 0..n {
            let ky = wavenumber(j, n);
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            if i == 0 && j == 0 {
                continue;
            }
            let amp = (1.0 + kx * kx + ky * ky).powf(-alpha / 4.0);
            buf[i * n + j] = Complex64::new(re, im) * amp;
        }
    }
    ifft2(&mut buf, n);
    let mut field = Array2::from_shape_vec((n, n), buf.iter().map(|c| c.re).collect()).expect("n*n buffer");
    let mean = field.mean().expect("non-empty");
    field -= mean;
    let std = (field.iter().map(|v| v * v).sum::<f64>() / (n * n) as f64).sqrt();
    field /= std;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_energy(f: &Array2<f64>) -> f64 {
        let n = f.nrows();
        let mut e = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dx = f[[(i + 1) % n, j]] - f[[i, j]];
                let dy = f[[i, (j + 1) % n]] - f[[i, j]];
                e += dx * dx + dy * dy;
            }
        }
        e
    }

    #[test]
    fn normalized_moments() {
        let f = sample_grf(64, 5.0, 3).unwrap();
        let n = f.len() as f64;
        let mean = f.sum() / n;
        let std = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-12);
    }

    #[test]
    fn steeper_spectrum_is_smoother() {
        for seed in 0..5 {
            let smooth = sample_grf(64, 5.0, seed).unwrap();
            let rough = sample_grf(64, 1.0, seed).unwrap();
            assert!(gradient_energy(&smooth) < gradient_energy(&rough));
        }
    }

    #[test]
    fn seed_determinism() {
        assert_eq!(sample_grf(32, 5.0, 9).unwrap(), sample_grf(32, 5.0, 9).unwrap());
        assert_ne!(sample_grf(32, 5.0, 9).unwrap(), sample_grf(32, 5.0, 10).unwrap());
    }

    #[test]
    fn rejects_tiny_grid() {
        assert!(matches!(sample_grf(4, 5.0, 0), Err(PdeError::GridTooSmall(4))));
    }
}
