//! Batch normalization and row-wise L2 normalization.

use super::{Scalar, Tensor, TensorError};
use crate::parallel;

/// Per-channel running statistics, kept at f64.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Saved forward state needed by the batch-statistics gradient.
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<f64>,
    m: usize,
}

const STAT_BLOCK: usize = 512;

fn bn_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize), TensorError> {
    // [b, l, c] or [b, c]; statistics are per channel over the other axes.
    match x.shape() {
        [b, l, c] => Ok((b * l, *c)),
        [b, c] => Ok((*b, *c)),
        s => Err(TensorError::ShapeMismatch(format!(
            "batchnorm expects [b,l,c] or [b,c], got {s:?}"
        ))),
    }
}

/// Per-channel sums over rows with fixed-size block partials, so the f64
/// accumulation order never depends on the thread count.
fn channel_sums<T: Scalar, F: Fn(T) -> (f64, f64) + Sync + Send>(
    data: &[T],
    rows: usize,
    c: usize,
    f: F,
) -> (Vec<f64>, Vec<f64>) {
    let nblocks = rows.div_ceil(STAT_BLOCK);
    let partials = parallel::map_indices(nblocks, |blk| {
        let lo = blk * STAT_BLOCK;
        let hi = ((blk + 1) * STAT_BLOCK).min(rows);
        let mut s1 = vec![0.0f64; c];
        let mut s2 = vec![0.0f64; c];
        for r in lo..hi {
            let row = &data[r * c..(r + 1) * c];
            for (ch, &v) in row.iter().enumerate() {
                let (a, b) = f(v);
                s1[ch] += a;
                s2[ch] += b;
            }
        }
        (s1, s2)
    });
    let mut s1 = vec![0.0f64; c];
    let mut s2 = vec![0.0f64; c];
    for (p1, p2) in partials {
        for ch in 0..c {
            s1[ch] += p1[ch];
            s2[ch] += p2[ch];
        }
    }
    (s1, s2)
}

/// Training-mode batch normalization; updates `stats` in place.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>), TensorError> {
    let (m, c) = bn_dims(x)?;
    if m < 2 {
        return Err(TensorError::InvalidArgument(format!(
            "batchnorm train mode needs at least 2 values per channel, got {m}"
        )));
    }
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c {
        return Err(TensorError::ShapeMismatch(format!(
            "batchnorm parameter length mismatch for {c} channels"
        )));
    }

    let (sums, sqsums) = channel_sums(x.data(), m, c, |v| {
        let v = v.to_f64();
        (v, v * v)
    });
    let mf = m as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s / mf).collect();
    let var: Vec<f64> = sqsums
        .iter()
        .zip(mean.iter())
        .map(|(sq, mu)| (sq / mf - mu * mu).max(0.0))
        .collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    for ch in 0..c {
        stats.mean[ch] = (1.0 - momentum) * stats.mean[ch] + momentum * mean[ch];
        let unbiased = var[ch] * mf / (mf - 1.0);
        stats.var[ch] = (1.0 - momentum) * stats.var[ch] + momentum * unbiased;
    }

    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let g = gamma.data();
    let b = beta.data();
    {
        let xh = xhat.data_mut();
        parallel::for_each_chunk_mut(y.data_mut(), STAT_BLOCK * c, |blk, ychunk| {
            let lo = blk * STAT_BLOCK * c;
            for (i, yv) in ychunk.iter_mut().enumerate() {
                let idx = lo + i;
                let ch = idx % c;
                let h = (xd[idx].to_f64() - mean[ch]) * inv_std[ch];
                *yv = T::from_f64(h * g[ch].to_f64() + b[ch].to_f64());
            }
        });
        parallel::for_each_chunk_mut(xh, STAT_BLOCK * c, |blk, hchunk| {
            let lo = blk * STAT_BLOCK * c;
            for (i, hv) in hchunk.iter_mut().enumerate() {
                let idx = lo + i;
                let ch = idx % c;
                *hv = T::from_f64((xd[idx].to_f64() - mean[ch]) * inv_std[ch]);
            }
        });
    }
    Ok((y, BnCache { xhat, inv_std, m }))
}

/// Evaluation-mode batch normalization using running statistics.
pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats,
    eps: f64,
) -> Result<Tensor<T>, TensorError> {
    let (_, c) = bn_dims(x)?;
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c {
        return Err(TensorError::ShapeMismatch(format!(
            "batchnorm parameter length mismatch for {c} channels"
        )));
    }
    let scale: Vec<f64> = (0..c)
        .map(|ch| gamma.data()[ch].to_f64() / (stats.var[ch] + eps).sqrt())
        .collect();
    let shift: Vec<f64> = (0..c)
        .map(|ch| beta.data()[ch].to_f64() - stats.mean[ch] * scale[ch])
        .collect();
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    parallel::for_each_chunk_mut(y.data_mut(), STAT_BLOCK * c, |blk, ychunk| {
        let lo = blk * STAT_BLOCK * c;
        for (i, yv) in ychunk.iter_mut().enumerate() {
            let idx = lo + i;
            let ch = idx % c;
            *yv = T::from_f64(xd[idx].to_f64() * scale[ch] + shift[ch]);
        }
    });
    Ok(y)
}

/// Full batch-statistics gradient: returns (dx, dgamma, dbeta).
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), TensorError> {
    let (m, c) = bn_dims(dy)?;
    if m != cache.m || cache.xhat.shape() != dy.shape() {
        return Err(TensorError::ShapeMismatch(
            "batchnorm backward: dy does not match cached forward shape".into(),
        ));
    }
    let xh = cache.xhat.data();
    let dyd = dy.data();
    // dbeta = sum(dy), dgamma = sum(dy * xhat), per channel
    let nblocks = m.div_ceil(STAT_BLOCK);
    let partials = parallel::map_indices(nblocks, |blk| {
        let lo = blk * STAT_BLOCK;
        let hi = ((blk + 1) * STAT_BLOCK).min(m);
        let mut db = vec![0.0f64; c];
        let mut dg = vec![0.0f64; c];
        for r in lo..hi {
            for ch in 0..c {
                let g = dyd[r * c + ch].to_f64();
                db[ch] += g;
                dg[ch] += g * xh[r * c + ch].to_f64();
            }
        }
        (db, dg)
    });
    let mut dbeta_s = vec![0.0f64; c];
    let mut dgamma_s = vec![0.0f64; c];
    for (db, dg) in partials {
        for ch in 0..c {
            dbeta_s[ch] += db[ch];
            dgamma_s[ch] += dg[ch];
        }
    }

    let mf = m as f64;
    let g = gamma.data();
    let mut dx = Tensor::zeros(dy.shape());
    parallel::for_each_chunk_mut(dx.data_mut(), STAT_BLOCK * c, |blk, chunk| {
        let lo = blk * STAT_BLOCK * c;
        for (i, dv) in chunk.iter_mut().enumerate() {
            let idx = lo + i;
            let ch = idx % c;
            let dxhat = dyd[idx].to_f64() * g[ch].to_f64();
            let term = dxhat - dbeta_s[ch] * g[ch].to_f64() / mf
                - xh[idx].to_f64() * dgamma_s[ch] * g[ch].to_f64() / mf;
            *dv = T::from_f64(cache.inv_std[ch] * term);
        }
    });
    let dgamma = Tensor::from_vec(&[c], dgamma_s.iter().map(|&v| T::from_f64(v)).collect())?;
    let dbeta = Tensor::from_vec(&[c], dbeta_s.iter().map(|&v| T::from_f64(v)).collect())?;
    Ok((dx, dgamma, dbeta))
}

/// Row-wise L2 normalization of `x[rows, d]`; `eps` is added to the norm.
pub fn l2_normalize_rows<T: Scalar>(
    x: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Vec<f64>), TensorError> {
    if x.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch(format!(
            "l2_normalize expects [rows, d], got {:?}",
            x.shape()
        )));
    }
    let (rows, d) = (x.dim(0), x.dim(1));
    let xd = x.data();
    let norms: Vec<f64> = parallel::map_indices(rows, |r| {
        let mut s = 0.0f64;
        for &v in &xd[r * d..(r + 1) * d] {
            let v = v.to_f64();
            s += v * v;
        }
        s.sqrt()
    });
    let mut y = Tensor::zeros(x.shape());
    parallel::for_each_chunk_mut(y.data_mut(), d, |r, row| {
        let inv = 1.0 / (norms[r] + eps);
        for (i, v) in row.iter_mut().enumerate() {
            *v = T::from_f64(xd[r * d + i].to_f64() * inv);
        }
    });
    Ok((y, norms))
}

/// Projection-Jacobian backward for [`l2_normalize_rows`].
pub fn l2_normalize_rows_backward<T: Scalar>(
    x: &Tensor<T>,
    norms: &[f64],
    dy: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>, TensorError> {
    if x.shape() != dy.shape() {
        return Err(TensorError::ShapeMismatch(
            "l2_normalize backward shape mismatch".into(),
        ));
    }
    let (rows, d) = (x.dim(0), x.dim(1));
    let xd = x.data();
    let dyd = dy.data();
    let mut dx = Tensor::zeros(x.shape());
    parallel::for_each_chunk_mut(dx.data_mut(), d, |r, row| {
        let n = norms[r];
        let denom = n + eps;
        let mut dot = 0.0f64;
        for i in 0..d {
            dot += dyd[r * d + i].to_f64() * xd[r * d + i].to_f64();
        }
        // y = x / (n + eps); dn/dx = x / n
        let coef = if n > 0.0 { dot / (n * denom * denom) } else { 0.0 };
        for (i, v) in row.iter_mut().enumerate() {
            *v = T::from_f64(dyd[r * d + i].to_f64() / denom - xd[r * d + i].to_f64() * coef);
        }
    });
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_standardizes() {
        let mut rng = crate::rng::DetRng::child(9, "bn");
        let (b, l, c) = (8, 5, 3);
        let x = Tensor::<f64>::from_vec(
            &[b, l, c],
            (0..b * l * c).map(|_| rng.uniform_range(-2.0, 5.0)).collect(),
        )
        .unwrap();
        let gamma = Tensor::filled(&[c], 1.0);
        let beta = Tensor::zeros(&[c]);
        let mut stats = RunningStats::new(c);
        let (y, _) = batchnorm_train(&x, &gamma, &beta, &mut stats, 0.1, 1e-5).unwrap();
        let m = (b * l) as f64;
        for ch in 0..c {
            let mean: f64 = (0..b * l).map(|r| y.data()[r * c + ch]).sum::<f64>() / m;
            let var: f64 = (0..b * l)
                .map(|r| (y.data()[r * c + ch] - mean).powi(2))
                .sum::<f64>()
                / m;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn eval_mode_is_affine_with_unit_stats() {
        let x = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let gamma = Tensor::from_vec(&[2], vec![2.0, 0.5]).unwrap();
        let beta = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let stats = RunningStats::new(2);
        let y = batchnorm_eval(&x, &gamma, &beta, &stats, 0.0).unwrap();
        assert!((y.data()[0] - 3.0).abs() < 1e-12);
        assert!((y.data()[1] - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn train_mode_rejects_single_row() {
        let x = Tensor::<f64>::zeros(&[1, 3]);
        let gamma = Tensor::filled(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let mut stats = RunningStats::new(3);
        assert!(batchnorm_train(&x, &gamma, &beta, &mut stats, 0.1, 1e-5).is_err());
    }

    #[test]
    fn l2_rows_become_unit() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        let (y, _) = l2_normalize_rows(&x, 1e-12).unwrap();
        assert!((y.data()[0] - 0.6).abs() < 1e-9);
        assert!((y.data()[1] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn l2_unit_vector_unchanged() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![0.6, 0.8]).unwrap();
        let (y, _) = l2_normalize_rows(&x, 1e-12).unwrap();
        assert!((y.data()[0] - 0.6).abs() < 1e-9);
        assert!((y.data()[1] - 0.8).abs() < 1e-9);
    }
}
