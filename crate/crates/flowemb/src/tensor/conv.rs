//! Length-preserving 1-D convolution (cross-correlation), no bias.
//!
//! Activations are `[batch, length, channels]`; weights are
//! `[c_out, c_in, k]` with odd `k`, stride 1 and symmetric zero padding of
//! `(k-1)/2`. Pointwise (`k=1`) convolutions multiply directly; larger
//! kernels gather patches into a column buffer first, so both directions
//! reduce to [`matmul_abt`].

use super::matmul::{matmul_abt, transpose};
use super::{Scalar, Tensor, TensorError};
use crate::parallel;

fn check_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize), TensorError> {
    if x.shape().len() != 3 || w.shape().len() != 3 {
        return Err(TensorError::ShapeMismatch(format!(
            "conv1d expects x[b,l,c] and w[co,ci,k], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (b, l, c_in) = (x.dim(0), x.dim(1), x.dim(2));
    let (c_out, ci_w, k) = (w.dim(0), w.dim(1), w.dim(2));
    if ci_w != c_in {
        return Err(TensorError::ShapeMismatch(format!(
            "conv1d channel mismatch: x has {c_in}, w has {ci_w}"
        )));
    }
    if k % 2 == 0 {
        return Err(TensorError::InvalidArgument(format!(
            "conv1d kernel size must be odd, got {k}"
        )));
    }
    if k > 2 * l {
        return Err(TensorError::InvalidArgument(format!(
            "conv1d kernel {k} too large for length {l}"
        )));
    }
    Ok((b, l, c_in, c_out, k))
}

/// Gather `[b*l, k*c_in]` patches (tap-major) with zero padding at the ends.
fn im2col<T: Scalar>(x: &[T], b: usize, l: usize, c_in: usize, k: usize) -> Vec<T> {
    let pad = (k - 1) / 2;
    let row = k * c_in;
    let mut col = vec![T::ZERO; b * l * row];
    parallel::for_each_chunk_mut(&mut col, l * row, |bi, chunk| {
        let xb = &x[bi * l * c_in..(bi + 1) * l * c_in];
        for pos in 0..l {
            let dst = &mut chunk[pos * row..(pos + 1) * row];
            for t in 0..k {
                let src = pos + t;
                if src >= pad && src - pad < l {
                    let s = (src - pad) * c_in;
                    dst[t * c_in..(t + 1) * c_in].copy_from_slice(&xb[s..s + c_in]);
                }
            }
        }
    });
    col
}

/// Repack `w[co, ci, k]` into tap-major rows `[co, k*c_in]` matching im2col.
fn pack_weights<T: Scalar>(w: &[T], c_out: usize, c_in: usize, k: usize) -> Vec<T> {
    let mut packed = vec![T::ZERO; c_out * k * c_in];
    for co in 0..c_out {
        for ci in 0..c_in {
            for t in 0..k {
                packed[co * k * c_in + t * c_in + ci] = w[(co * c_in + ci) * k + t];
            }
        }
    }
    packed
}

/// `x[b,l,c_in] * w[c_out,c_in,k] -> y[b,l,c_out]`.
pub fn conv1d_same<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (b, l, c_in, c_out, k) = check_shapes(x, w)?;
    let mut y = Tensor::zeros(&[b, l, c_out]);
    if k == 1 {
        matmul_abt(x.data(), w.data(), b * l, c_out, c_in, y.data_mut());
    } else {
        let col = im2col(x.data(), b, l, c_in, k);
        let packed = pack_weights(w.data(), c_out, c_in, k);
        matmul_abt(&col, &packed, b * l, c_out, k * c_in, y.data_mut());
    }
    Ok(y)
}

/// Gradients w.r.t. input and weights for [`conv1d_same`].
pub fn conv1d_same_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    let (b, l, c_in, c_out, k) = check_shapes(x, w)?;
    if dy.shape() != [b, l, c_out] {
        return Err(TensorError::ShapeMismatch(format!(
            "conv1d backward: dy has shape {:?}, want [{b}, {l}, {c_out}]",
            dy.shape()
        )));
    }
    let pad = (k - 1) / 2;
    let row = k * c_in;
    let bl = b * l;

    let packed = if k == 1 {
        w.data().to_vec()
    } else {
        pack_weights(w.data(), c_out, c_in, k)
    };

    // dx: dcol = dy * packed, then scatter the taps back onto the length axis.
    let packed_t = transpose(&packed, c_out, row);
    let mut dx = Tensor::zeros(&[b, l, c_in]);
    if k == 1 {
        matmul_abt(dy.data(), &packed_t, bl, c_in, c_out, dx.data_mut());
    } else {
        let mut dcol = vec![T::ZERO; bl * row];
        matmul_abt(dy.data(), &packed_t, bl, row, c_out, &mut dcol);
        parallel::for_each_chunk_mut(dx.data_mut(), l * c_in, |bi, dxb| {
            let dcb = &dcol[bi * l * row..(bi + 1) * l * row];
            for pos in 0..l {
                for t in 0..k {
                    let src = pos + t;
                    if src >= pad && src - pad < l {
                        let d0 = (src - pad) * c_in;
                        let s0 = pos * row + t * c_in;
                        for ci in 0..c_in {
                            let v = dxb[d0 + ci].to_f64() + dcb[s0 + ci].to_f64();
                            dxb[d0 + ci] = T::from_f64(v);
                        }
                    }
                }
            }
        });
    }

    // dw: contraction over the b*l rows via two transposes.
    let dy_t = transpose(dy.data(), bl, c_out);
    let dpacked = if k == 1 {
        let x_t = transpose(x.data(), bl, c_in);
        let mut dp = vec![T::ZERO; c_out * c_in];
        matmul_abt(&dy_t, &x_t, c_out, c_in, bl, &mut dp);
        dp
    } else {
        let col = im2col(x.data(), b, l, c_in, k);
        let col_t = transpose(&col, bl, row);
        let mut dp = vec![T::ZERO; c_out * row];
        matmul_abt(&dy_t, &col_t, c_out, row, bl, &mut dp);
        dp
    };
    let mut dw = Tensor::zeros(&[c_out, c_in, k]);
    {
        let dwd = dw.data_mut();
        for co in 0..c_out {
            for ci in 0..c_in {
                for t in 0..k {
                    dwd[(co * c_in + ci) * k + t] = dpacked[co * row + t * c_in + ci];
                }
            }
        }
    }
    Ok((dx, dw))
}
