//! Plain (non-recorded) numeric kernels. The tape ops in [`super::tape`]
//! call into the same row kernels so both paths stay in lockstep.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Numerically stable masked softmax over a slice, written into `out`.
/// Masked positions come out exactly zero.
pub(crate) fn softmax_into(xs: &[f64], mask: &[bool], out: &mut [f64]) {
    debug_assert_eq!(xs.len(), mask.len());
    debug_assert_eq!(xs.len(), out.len());
    let max = xs
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for i in 0..xs.len() {
        if mask[i] {
            let e = (xs[i] - max).exp();
            out[i] = e;
            denom += e;
        } else {
            out[i] = 0.0;
        }
    }
    for v in out.iter_mut() {
        *v /= denom;
    }
}

/// Masked softmax of a `1xn` row. At least one position must be unmasked.
pub fn softmax_row(x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if x.rows() != 1 || x.cols() != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_row",
            lhs: x.shape(),
            rhs: (1, mask.len()),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::DegenerateMask);
    }
    let mut out = vec![0.0; x.cols()];
    softmax_into(x.data(), mask, &mut out);
    Ok(Tensor::row(out))
}

/// Truncation radius of the Gaussian kernel: `ceil(3*sigma)`.
pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Unnormalized Gaussian kernel weight at integer distance `d`.
pub fn kernel_weight(d: usize, sigma: f64) -> f64 {
    let d = d as f64;
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// Row-stochastic smoothing matrix for a masked sequence of length `n`.
///
/// Row `i` holds the kernel centered at position `i`, truncated at the
/// radius, zeroed at masked positions, and renormalized to sum to one, so
/// smoothing a uniform distribution returns it unchanged. Rows for masked
/// positions are all zero.
pub fn smoothing_matrix(n: usize, sigma: f64, mask: &[bool]) -> Result<Tensor> {
    if sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if mask.len() != n {
        return Err(Error::ShapeMismatch {
            op: "smoothing_matrix",
            lhs: (1, n),
            rhs: (1, mask.len()),
        });
    }
    let radius = kernel_radius(sigma);
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        let mut z = 0.0;
        for j in lo..=hi {
            if mask[j] {
                z += kernel_weight(i.abs_diff(j), sigma);
            }
        }
        // mask[i] is true, so z >= kernel_weight(0) = 1
        for j in lo..=hi {
            if mask[j] {
                out.set(i, j, kernel_weight(i.abs_diff(j), sigma) / z);
            }
        }
    }
    Ok(out)
}

/// Renormalize a row to sum to one over unmasked positions; masked
/// positions come out exactly zero.
pub(crate) fn normalize_row_into(xs: &[f64], mask: &[bool], out: &mut [f64]) {
    let mut total = 0.0;
    for i in 0..xs.len() {
        if mask[i] {
            total += xs[i];
        }
    }
    for i in 0..xs.len() {
        out[i] = if mask[i] { xs[i] / total } else { 0.0 };
    }
}

/// Smooth a probability distribution over positions with a truncated
/// Gaussian kernel, then renormalize so unmasked mass sums to one.
pub fn gaussian_smooth_1d(dist: &Tensor, sigma: f64, mask: &[bool]) -> Result<Tensor> {
    if dist.rows() != 1 || dist.cols() != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "gaussian_smooth_1d",
            lhs: dist.shape(),
            rhs: (1, mask.len()),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::DegenerateMask);
    }
    let a = smoothing_matrix(dist.cols(), sigma, mask)?;
    // out_i = sum_j A[i][j] * dist_j  ==  dist * A^T
    let mixed = dist.matmul(&a.transpose())?;
    let mut out = vec![0.0; dist.cols()];
    normalize_row_into(mixed.data(), mask, &mut out);
    Ok(Tensor::row(out))
}

/// Tanh-approximation GELU; smooth everywhere, which keeps the
/// finite-difference gradient checks honest.
pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_deriv(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_symmetric() {
        let out = softmax_row(&Tensor::row(vec![0.0, 0.0]), &[true, true]).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_large_logit_is_stable() {
        let out = softmax_row(&Tensor::row(vec![100.0, 0.0]), &[true, true]).unwrap();
        assert!(out.is_finite());
        assert!(out.get(0, 0) > 1.0 - 1e-9);
        assert!(out.get(0, 1) < 1e-9);
    }

    #[test]
    fn softmax_masked_middle() {
        // direct formula: [1/(1+e^2), 0, e^2/(1+e^2)]
        let e2 = 2.0f64.exp();
        let out = softmax_row(&Tensor::row(vec![1.0, 2.0, 3.0]), &[true, false, true]).unwrap();
        assert_abs_diff_eq!(out.get(0, 0), 1.0 / (1.0 + e2), epsilon = 1e-12);
        assert_eq!(out.get(0, 1), 0.0);
        assert_abs_diff_eq!(out.get(0, 2), e2 / (1.0 + e2), epsilon = 1e-12);
    }

    #[test]
    fn softmax_all_masked_is_degenerate() {
        let err = softmax_row(&Tensor::row(vec![1.0, 2.0]), &[false, false]).unwrap_err();
        assert!(matches!(err, Error::DegenerateMask));
    }

    /// Direct kernel-formula oracle: accumulate truncated Gaussian weights
    /// per output position, renormalizing the kernel over the unmasked
    /// window and then the output over unmasked positions.
    fn smooth_oracle(dist: &[f64], sigma: f64, mask: &[bool]) -> Vec<f64> {
        let n = dist.len();
        let radius = (3.0 * sigma).ceil() as usize;
        let g = |d: usize| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp();
        let mut mixed = vec![0.0; n];
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let mut z = 0.0;
            let mut acc = 0.0;
            for j in 0..n {
                if mask[j] && i.abs_diff(j) <= radius {
                    z += g(i.abs_diff(j));
                    acc += g(i.abs_diff(j)) * dist[j];
                }
            }
            mixed[i] = acc / z;
        }
        let total: f64 = mixed.iter().sum();
        mixed.iter().map(|v| v / total).collect()
    }

    #[test]
    fn smooth_delta_spreads_symmetrically() {
        let dist = Tensor::row(vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let mask = [true; 5];
        let out = gaussian_smooth_1d(&dist, 1.0, &mask).unwrap();
        let want = smooth_oracle(dist.data(), 1.0, &mask);
        // frozen from the oracle
        let frozen = [
            0.07207552871452097,
            0.23998508700637974,
            0.3758787685581986,
            0.23998508700637974,
            0.07207552871452097,
        ];
        for i in 0..5 {
            assert_abs_diff_eq!(out.get(0, i), want[i], epsilon = 1e-12);
            assert_abs_diff_eq!(out.get(0, i), frozen[i], epsilon = 1e-12);
        }
        // symmetric around the delta, peak stays at the delta
        assert_eq!(out.get(0, 0), out.get(0, 4));
        assert_eq!(out.get(0, 1), out.get(0, 3));
        assert!(out.get(0, 2) > out.get(0, 1));
    }

    #[test]
    fn smooth_uniform_is_fixed_point() {
        for &n in &[3usize, 7, 12] {
            let dist = Tensor::row(vec![1.0 / n as f64; n]);
            let mask = vec![true; n];
            for &sigma in &[0.5, 1.0, 2.5] {
                let out = gaussian_smooth_1d(&dist, sigma, &mask).unwrap();
                for i in 0..n {
                    assert_abs_diff_eq!(out.get(0, i), 1.0 / n as f64, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn smooth_tiny_sigma_is_identity() {
        let dist = Tensor::row(vec![0.1, 0.2, 0.3, 0.4]);
        let out = gaussian_smooth_1d(&dist, 1e-6, &[true; 4]).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(out.get(0, i), dist.get(0, i), epsilon = 1e-6);
        }
    }

    #[test]
    fn smooth_rejects_nonpositive_sigma() {
        let dist = Tensor::row(vec![1.0]);
        for sigma in [0.0, -1.0] {
            let err = gaussian_smooth_1d(&dist, sigma, &[true]).unwrap_err();
            assert!(matches!(err, Error::InvalidParameter(_)));
        }
    }

    #[test]
    fn smooth_skips_masked_positions() {
        let dist = Tensor::row(vec![0.0, 1.0, 0.0, 0.0]);
        let mask = [true, true, false, true];
        let out = gaussian_smooth_1d(&dist, 1.0, &mask).unwrap();
        assert_eq!(out.get(0, 2), 0.0);
        let total: f64 = out.data().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        let want = smooth_oracle(dist.data(), 1.0, &mask);
        for i in 0..4 {
            assert_abs_diff_eq!(out.get(0, i), want[i], epsilon = 1e-12);
        }
    }
}
