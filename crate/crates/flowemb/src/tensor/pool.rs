//! Generalized-mean global pooling with a trainable exponent.
//!
//! `y[b,c] = (mean_l x[b,l,c]^p)^(1/p)` after clamping inputs to at least
//! `eps`; p = 1 is average pooling and large p approaches the maximum. The
//! clamp keeps fractional powers away from the 0^p gradient singularity
//! (the block feeds post-activation non-negative values).

use super::{Scalar, Tensor, TensorError};
use crate::parallel;

/// Forward state reused by the backward pass.
pub struct GemCache {
    /// ln of the clamped inputs.
    ln_x: Vec<f64>,
    /// x^p of the clamped inputs.
    x_pow: Vec<f64>,
    /// Per-(b,c) mean of x^p.
    s: Vec<f64>,
    clamped: Vec<bool>,
    p: f64,
    eps: f64,
}

/// `x[b,l,c]`, scalar `p` -> `y[b,c]`.
pub fn gem_pool<T: Scalar>(
    x: &Tensor<T>,
    p: f64,
    eps: f64,
) -> Result<(Tensor<T>, GemCache), TensorError> {
    if x.shape().len() != 3 {
        return Err(TensorError::ShapeMismatch(format!(
            "gem_pool expects [b,l,c], got {:?}",
            x.shape()
        )));
    }
    if !(p.is_finite() && p > 0.0) {
        return Err(TensorError::InvalidArgument(format!(
            "gem_pool exponent must be positive and finite, got {p}"
        )));
    }
    let (b, l, c) = (x.dim(0), x.dim(1), x.dim(2));
    let xd = x.data();
    let n = xd.len();
    let mut ln_x = vec![0.0f64; n];
    let mut x_pow = vec![0.0f64; n];
    let mut clamped = vec![false; n];
    {
        // One owner per element; ln/exp are the hot cost, so split in blocks.
        let lnp: &mut [f64] = &mut ln_x;
        parallel::for_each_chunk_mut(lnp, l * c, |bi, chunk| {
            for (i, v) in chunk.iter_mut().enumerate() {
                let raw = xd[bi * l * c + i].to_f64();
                *v = raw.max(eps).ln();
            }
        });
        let xpw: &mut [f64] = &mut x_pow;
        parallel::for_each_chunk_mut(xpw, l * c, |bi, chunk| {
            for (i, v) in chunk.iter_mut().enumerate() {
                *v = (p * ln_x[bi * l * c + i]).exp();
            }
        });
        for (i, cl) in clamped.iter_mut().enumerate() {
            *cl = xd[i].to_f64() < eps;
        }
    }
    let mut s = vec![0.0f64; b * c];
    parallel::for_each_chunk_mut(&mut s, c, |bi, srow| {
        for pos in 0..l {
            let base = (bi * l + pos) * c;
            for (ch, sv) in srow.iter_mut().enumerate() {
                *sv += x_pow[base + ch];
            }
        }
        for sv in srow.iter_mut() {
            *sv /= l as f64;
        }
    });
    let mut y = Tensor::zeros(&[b, c]);
    parallel::for_each_chunk_mut(y.data_mut(), c, |bi, yrow| {
        for (ch, yv) in yrow.iter_mut().enumerate() {
            *yv = T::from_f64(s[bi * c + ch].powf(1.0 / p));
        }
    });
    Ok((
        y,
        GemCache {
            ln_x,
            x_pow,
            s,
            clamped,
            p,
            eps: eps.max(f64::MIN_POSITIVE),
        },
    ))
}

/// Gradients (dx, dp) for [`gem_pool`].
pub fn gem_pool_backward<T: Scalar>(
    x: &Tensor<T>,
    cache: &GemCache,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, f64), TensorError> {
    let (b, l, c) = (x.dim(0), x.dim(1), x.dim(2));
    if dy.shape() != [b, c] {
        return Err(TensorError::ShapeMismatch(format!(
            "gem_pool backward: dy shape {:?}, want [{b}, {c}]",
            dy.shape()
        )));
    }
    let p = cache.p;
    let dyd = dy.data();
    // w[b,c] = dy * s^(1/p - 1) / l, so dx = w * x^(p-1) on unclamped entries.
    let w: Vec<f64> = parallel::map_indices(b * c, |i| {
        let s = cache.s[i];
        dyd[i].to_f64() * s.powf(1.0 / p - 1.0) / l as f64
    });
    let mut dx = Tensor::zeros(x.shape());
    let xd = x.data();
    parallel::for_each_chunk_mut(dx.data_mut(), l * c, |bi, chunk| {
        for (i, dv) in chunk.iter_mut().enumerate() {
            let idx = bi * l * c + i;
            if cache.clamped[idx] {
                *dv = T::ZERO;
            } else {
                let ch = i % c;
                // x^(p-1) = x^p / x
                let xpow1 = cache.x_pow[idx] / xd[idx].to_f64().max(cache.eps);
                *dv = T::from_f64(w[bi * c + ch] * xpow1);
            }
        }
    });

    // dp: y = exp(ln(s)/p); dy/dp = y * ((ds/dp)/(s p) - ln(s)/p^2),
    // ds/dp = mean_l x^p ln x. Sequential f64 accumulation over (b,c).
    let mut dp = 0.0f64;
    for bi in 0..b {
        for ch in 0..c {
            let s = cache.s[bi * c + ch];
            let mut ds_dp = 0.0f64;
            for pos in 0..l {
                let idx = (bi * l + pos) * c + ch;
                ds_dp += cache.x_pow[idx] * cache.ln_x[idx];
            }
            ds_dp /= l as f64;
            let y = s.powf(1.0 / p);
            let dyp = y * (ds_dp / (s * p) - s.ln() / (p * p));
            dp += dyd[bi * c + ch].to_f64() * dyp;
        }
    }
    Ok((dx, dp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p1_is_arithmetic_mean() {
        let x = Tensor::<f64>::from_vec(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = gem_pool(&x, 1.0, 1e-6).unwrap();
        assert!((y.data()[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn large_p_approaches_max() {
        let x = Tensor::<f64>::from_vec(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = gem_pool(&x, 64.0, 1e-6).unwrap();
        let v = y.data()[0];
        // Direct evaluation: (mean([1,2,3,4]^64))^(1/64) = 4 * (1/4)^(1/64)
        let oracle = ((1f64.powi(64) + 2f64.powi(64) + 3f64.powi(64) + 4f64.powi(64)) / 4.0)
            .powf(1.0 / 64.0);
        assert!((v - oracle).abs() < 1e-9, "got {v}, oracle {oracle}");
        assert!((v - 4.0).abs() / 4.0 < 0.025, "got {v}, max 4");
    }

    #[test]
    fn constant_input_is_fixed_point() {
        for &p in &[1.0, 2.5, 3.0, 10.0] {
            let x = Tensor::<f64>::filled(&[2, 5, 3], 0.7);
            let (y, _) = gem_pool(&x, p, 1e-6).unwrap();
            for &v in y.data() {
                assert!((v - 0.7).abs() < 1e-9, "p={p} v={v}");
            }
        }
    }
}
