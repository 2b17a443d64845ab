//! Linear layer, activations, dropout, and embedding lookups.

use super::matmul::{matmul_abt, transpose};
use super::{Scalar, Tensor, TensorError};
use crate::parallel;
use crate::rng::DetRng;

/// `x[b, in] * w[out, in]^T + bias[out]`.
pub fn linear<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    if x.shape().len() != 2 || w.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch(format!(
            "linear expects x[b,in] and w[out,in], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (b, d_in) = (x.dim(0), x.dim(1));
    let (d_out, d_in2) = (w.dim(0), w.dim(1));
    if d_in != d_in2 || bias.len() != d_out {
        return Err(TensorError::ShapeMismatch(format!(
            "linear dims: x[{b},{d_in}] w[{d_out},{d_in2}] bias[{}]",
            bias.len()
        )));
    }
    let mut y = Tensor::zeros(&[b, d_out]);
    matmul_abt(x.data(), w.data(), b, d_out, d_in, y.data_mut());
    let bd = bias.data();
    parallel::for_each_chunk_mut(y.data_mut(), d_out, |_, row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = T::from_f64(v.to_f64() + bd[j].to_f64());
        }
    });
    Ok(y)
}

/// Gradients (dx, dw, dbias) for [`linear`].
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), TensorError> {
    let (b, d_in) = (x.dim(0), x.dim(1));
    let (d_out, _) = (w.dim(0), w.dim(1));
    if dy.shape() != [b, d_out] {
        return Err(TensorError::ShapeMismatch(format!(
            "linear backward: dy shape {:?}, want [{b}, {d_out}]",
            dy.shape()
        )));
    }
    let mut dx = Tensor::zeros(&[b, d_in]);
    let w_t = transpose(w.data(), d_out, d_in);
    matmul_abt(dy.data(), &w_t, b, d_in, d_out, dx.data_mut());

    let dy_t = transpose(dy.data(), b, d_out);
    let x_t = transpose(x.data(), b, d_in);
    let mut dw = Tensor::zeros(&[d_out, d_in]);
    matmul_abt(&dy_t, &x_t, d_out, d_in, b, dw.data_mut());

    let mut dbias = Tensor::zeros(&[d_out]);
    {
        let dbd: &mut [T] = dbias.data_mut();
        let dyd = dy.data();
        for r in 0..b {
            for j in 0..d_out {
                dbd[j] = T::from_f64(dbd[j].to_f64() + dyd[r * d_out + j].to_f64());
            }
        }
    }
    Ok((dx, dw, dbias))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    parallel::for_each_chunk_mut(y.data_mut(), 4096, |_, chunk| {
        for v in chunk.iter_mut() {
            if *v < T::ZERO {
                *v = T::ZERO;
            }
        }
    });
    y
}

/// dx = dy where the forward input was positive.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    assert_eq!(x.shape(), dy.shape(), "relu backward shape mismatch");
    let mut dx = dy.clone();
    let xd = x.data();
    parallel::for_each_chunk_mut(dx.data_mut(), 4096, |blk, chunk| {
        let lo = blk * 4096;
        for (i, v) in chunk.iter_mut().enumerate() {
            if xd[lo + i] <= T::ZERO {
                *v = T::ZERO;
            }
        }
    });
    dx
}

/// Keep/drop decisions drawn once on a single stream, applied in parallel.
pub struct DropoutMask {
    keep: Vec<bool>,
    scale: f64,
    /// Channel masks broadcast over this many trailing elements.
    span: usize,
}

impl DropoutMask {
    pub fn is_identity(&self) -> bool {
        self.keep.is_empty()
    }
}

/// Elementwise inverted dropout. `rate == 0` is the identity and consumes
/// no randomness.
pub fn dropout_elementwise<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut DetRng,
) -> Result<(Tensor<T>, DropoutMask), TensorError> {
    make_dropout(x, rate, 1, rng)
}

/// Channel dropout on `x[b,l,c]`: one keep/drop decision per (batch,
/// channel), zeroing entire feature maps.
pub fn dropout_channels<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut DetRng,
) -> Result<(Tensor<T>, DropoutMask), TensorError> {
    if x.shape().len() != 3 {
        return Err(TensorError::ShapeMismatch(format!(
            "channel dropout expects [b,l,c], got {:?}",
            x.shape()
        )));
    }
    make_dropout(x, rate, x.dim(1), rng)
}

fn make_dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    broadcast_l: usize,
    rng: &mut DetRng,
) -> Result<(Tensor<T>, DropoutMask), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok((
            x.clone(),
            DropoutMask {
                keep: Vec::new(),
                scale: 1.0,
                span: 1,
            },
        ));
    }
    let (b, l, c) = match x.shape() {
        [b, l, c] => (*b, *l, *c),
        [b, c] => (*b, 1, *c),
        s => {
            return Err(TensorError::ShapeMismatch(format!(
                "dropout expects [b,l,c] or [b,c], got {s:?}"
            )))
        }
    };
    let per_channel = broadcast_l > 1;
    let decisions = if per_channel { b * c } else { b * l * c };
    let keep: Vec<bool> = (0..decisions).map(|_| rng.uniform() >= rate).collect();
    let scale = 1.0 / (1.0 - rate);
    let mask = DropoutMask {
        keep,
        scale,
        span: if per_channel { l } else { 1 },
    };
    let y = apply_dropout(x, &mask, b, l, c);
    Ok((y, mask))
}

fn apply_dropout<T: Scalar>(
    x: &Tensor<T>,
    mask: &DropoutMask,
    _b: usize,
    l: usize,
    c: usize,
) -> Tensor<T> {
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    parallel::for_each_chunk_mut(y.data_mut(), l * c, |bi, chunk| {
        for (i, v) in chunk.iter_mut().enumerate() {
            let idx = bi * l * c + i;
            let decision = if mask.span > 1 {
                bi * c + (i % c)
            } else {
                idx
            };
            if mask.keep[decision] {
                *v = T::from_f64(xd[idx].to_f64() * mask.scale);
            }
        }
    });
    y
}

/// dx = dy masked and rescaled identically to the forward pass.
pub fn dropout_backward<T: Scalar>(dy: &Tensor<T>, mask: &DropoutMask) -> Tensor<T> {
    if mask.is_identity() {
        return dy.clone();
    }
    let (l, c) = match dy.shape() {
        [_, l, c] => (*l, *c),
        [_, c] => (1, *c),
        s => panic!("dropout backward shape {s:?}"),
    };
    apply_dropout(dy, mask, 0, l, c)
}

/// Gather rows: `table[v, e]`, `indices[b, l]` -> `[b, l, e]`.
pub fn embedding_lookup<T: Scalar>(
    table: &Tensor<T>,
    indices: &[usize],
    out_shape: (usize, usize),
) -> Result<Tensor<T>, TensorError> {
    let (b, l) = out_shape;
    if indices.len() != b * l {
        return Err(TensorError::ShapeMismatch(format!(
            "embedding lookup: {} indices for shape [{b}, {l}]",
            indices.len()
        )));
    }
    let (v, e) = (table.dim(0), table.dim(1));
    if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
        return Err(TensorError::IndexOutOfRange { index: bad, size: v });
    }
    let td = table.data();
    let mut y = Tensor::zeros(&[b, l, e]);
    parallel::for_each_chunk_mut(y.data_mut(), l * e, |bi, chunk| {
        for pos in 0..l {
            let row = indices[bi * l + pos];
            chunk[pos * e..(pos + 1) * e].copy_from_slice(&td[row * e..(row + 1) * e]);
        }
    });
    Ok(y)
}

/// Scatter-add upstream gradients into the table gradient; a row referenced
/// several times accumulates every contribution.
pub fn embedding_lookup_backward<T: Scalar>(
    table_shape: (usize, usize),
    indices: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (v, e) = table_shape;
    let mut dtable = Tensor::zeros(&[v, e]);
    let dyd = dy.data();
    let dt: &mut [T] = dtable.data_mut();
    // Sequential scatter keeps every row single-writer.
    for (i, &row) in indices.iter().enumerate() {
        for j in 0..e {
            let idx = row * e + j;
            dt[idx] = T::from_f64(dt[idx].to_f64() + dyd[i * e + j].to_f64());
        }
    }
    dtable
}

/// `indices[n]` -> one-hot `[n, depth]`.
pub fn one_hot<T: Scalar>(indices: &[usize], depth: usize) -> Result<Tensor<T>, TensorError> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= depth) {
        return Err(TensorError::IndexOutOfRange {
            index: bad,
            size: depth,
        });
    }
    let mut y = Tensor::zeros(&[indices.len(), depth]);
    for (r, &i) in indices.iter().enumerate() {
        y.data_mut()[r * depth + i] = T::ONE;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::<f64>::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = DetRng::child(1, "dropout");
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let (y, mask) = dropout_elementwise(&x, 0.0, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(mask.is_identity());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = DetRng::child(2, "dropout-mc");
        let x = Tensor::<f64>::filled(&[1, 1000], 1.0);
        let mut total = 0.0;
        let runs = 200;
        for _ in 0..runs {
            let (y, _) = dropout_elementwise(&x, 0.3, &mut rng).unwrap();
            total += y.data().iter().sum::<f64>() / 1000.0;
        }
        let mean = total / runs as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn channel_dropout_zeroes_whole_maps() {
        let mut rng = DetRng::child(3, "dropout-ch");
        let x = Tensor::<f64>::filled(&[4, 5, 8], 1.0);
        let (y, _) = dropout_channels(&x, 0.5, &mut rng).unwrap();
        for bi in 0..4 {
            for ch in 0..8 {
                let vals: Vec<f64> = (0..5).map(|l| y.data()[(bi * 5 + l) * 8 + ch]).collect();
                let all_zero = vals.iter().all(|&v| v == 0.0);
                let all_scaled = vals.iter().all(|&v| (v - 2.0).abs() < 1e-12);
                assert!(all_zero || all_scaled, "mixed channel {vals:?}");
            }
        }
    }

    #[test]
    fn lookup_gathers_and_backward_scatter_adds() {
        let table = Tensor::<f64>::from_vec(&[3, 2], vec![0., 1., 10., 11., 20., 21.]).unwrap();
        let y = embedding_lookup(&table, &[0, 0, 1], (1, 3)).unwrap();
        assert_eq!(y.data(), &[0., 1., 0., 1., 10., 11.]);
        // lookup([0,0,1]) with grads g0,g1,g2 => row0 = g0+g1, row1 = g2
        let dy = Tensor::<f64>::from_vec(&[1, 3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let dt = embedding_lookup_backward((3, 2), &[0, 0, 1], &dy);
        assert_eq!(dt.data(), &[4., 6., 5., 6., 0., 0.]);
    }

    #[test]
    fn lookup_rejects_out_of_range() {
        let table = Tensor::<f64>::zeros(&[3, 2]);
        assert!(embedding_lookup(&table, &[3], (1, 1)).is_err());
    }

    #[test]
    fn one_hot_basics() {
        let y = one_hot::<f64>(&[1, 0], 3).unwrap();
        assert_eq!(y.data(), &[0., 1., 0., 1., 0., 0.]);
        assert!(one_hot::<f64>(&[5], 3).is_err());
    }

    #[test]
    fn linear_matches_reference() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let w = Tensor::<f64>::from_vec(&[2, 3], vec![1., 0., -1., 0.5, 0.5, 0.5]).unwrap();
        let bias = Tensor::<f64>::from_vec(&[2], vec![10., -10.]).unwrap();
        let y = linear(&x, &w, &bias).unwrap();
        assert_eq!(y.data(), &[8.0, -7.0, 8.0, -2.5]);
    }
}
