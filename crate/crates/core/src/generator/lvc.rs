//! Location-variable convolution.
//!
//! The input sequence is split into windows of `hop` samples, one per
//! condition frame. Window `t` is convolved with frame `t`'s kernel and
//! bias. Each window reads its neighbours' samples at the borders, and the
//! whole sequence is zero-padded at its ends, so a frame-constant kernel
//! reproduces an ordinary "same"-padded dilated convolution.

use crate::error::{Error, Result};
use crate::tensor::{matmul, Float, Tensor};

#[derive(Clone, Copy)]
struct Geometry {
    c_in: usize,
    k: usize,
    dilation: usize,
    hop: usize,
    frames: usize,
}

impl Geometry {
    fn len(&self) -> usize {
        self.frames * self.hop
    }

    fn ck(&self) -> usize {
        self.c_in * self.k
    }

    fn offset(&self, tap: usize) -> isize {
        (tap * self.dilation) as isize - (self.dilation * (self.k - 1) / 2) as isize
    }

    /// `[c_in·k, hop]` patch matrix of window `f`.
    fn patches<T: Float>(&self, x: &[T], f: usize, cols: &mut [T]) {
        let len = self.len() as isize;
        for i in 0..self.c_in {
            let xrow = &x[i * self.len()..(i + 1) * self.len()];
            for j in 0..self.k {
                let row = &mut cols[(i * self.k + j) * self.hop..][..self.hop];
                let base = (f * self.hop) as isize + self.offset(j);
                for (s, slot) in row.iter_mut().enumerate() {
                    let pos = base + s as isize;
                    *slot = if pos >= 0 && pos < len {
                        xrow[pos as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }

    fn scatter_patches<T: Float>(&self, cols: &[T], f: usize, dx: &mut [T]) {
        let len = self.len() as isize;
        for i in 0..self.c_in {
            for j in 0..self.k {
                let row = &cols[(i * self.k + j) * self.hop..][..self.hop];
                let base = (f * self.hop) as isize + self.offset(j);
                for (s, &v) in row.iter().enumerate() {
                    let pos = base + s as isize;
                    if pos >= 0 && pos < len {
                        dx[i * self.len() + pos as usize] += v;
                    }
                }
            }
        }
    }

    /// Frame `f`'s kernel as a `[c_out, c_in·k]` matrix; kernels are stored
    /// `[c_out·c_in·k, frames]`.
    fn kernel<T: Float>(&self, kernels: &[T], f: usize, out: &mut [T]) {
        for (r, slot) in out.iter_mut().enumerate() {
            *slot = kernels[r * self.frames + f];
        }
    }
}

/// Applies per-frame kernels `[c_out·c_in·k, frames]` (flattened in
/// `(out, in, tap)` order) and biases `[c_out, frames]` to `x: [c_in, T]`.
///
/// `T` must equal `frames · hop`; the output is `[c_out, T]`.
pub fn location_variable_conv<T: Float>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    kernel_size: usize,
    dilation: usize,
    hop: usize,
) -> Result<Tensor<T>> {
    let &[c_in, len] = x.shape() else {
        return Err(Error::Input(format!("LVC input must be [C, T], got {:?}", x.shape())));
    };
    let &[c_out, frames] = bias.shape() else {
        return Err(Error::Input(format!("LVC bias must be [C_out, F], got {:?}", bias.shape())));
    };
    if hop == 0 || len % hop != 0 || len / hop != frames {
        return Err(Error::Alignment(format!(
            "LVC input of {len} samples does not cover {frames} frames of hop {hop}"
        )));
    }
    if kernel_size % 2 == 0 || dilation == 0 {
        return Err(Error::Parameter(format!(
            "LVC needs an odd kernel size and dilation ≥ 1 (got {kernel_size}, {dilation})"
        )));
    }
    if kernels.shape() != [c_out * c_in * kernel_size, frames] {
        return Err(Error::Input(format!(
            "LVC kernels have shape {:?}, expected [{}, {frames}]",
            kernels.shape(),
            c_out * c_in * kernel_size
        )));
    }
    let geo = Geometry {
        c_in,
        k: kernel_size,
        dilation,
        hop,
        frames,
    };
    let ck = geo.ck();
    let mut out = vec![T::zero(); c_out * len];
    {
        let (xd, kd, bd) = (x.data(), kernels.data(), bias.data());
        let mut cols = vec![T::zero(); ck * hop];
        let mut w = vec![T::zero(); c_out * ck];
        let mut seg = vec![T::zero(); c_out * hop];
        for f in 0..frames {
            geo.patches(&xd, f, &mut cols);
            geo.kernel(&kd, f, &mut w);
            matmul(c_out, ck, hop, &w, false, &cols, false, &mut seg, false);
            for o in 0..c_out {
                let b = bd[o * frames + f];
                let dst = &mut out[o * len + f * hop..][..hop];
                for (d, &s) in dst.iter_mut().zip(&seg[o * hop..(o + 1) * hop]) {
                    *d = s + b;
                }
            }
        }
    }
    Ok(Tensor::from_op(
        out,
        &[c_out, len],
        vec![x.clone(), kernels.clone(), bias.clone()],
        move |g: &[T], _: &[T], ps: &[Tensor<T>], needs: &[bool]| {
            let (xd, kd) = (ps[0].data(), ps[1].data());
            let mut dx = needs[0].then(|| vec![T::zero(); c_in * len]);
            let mut dk = needs[1].then(|| vec![T::zero(); c_out * ck * frames]);
            let mut db = needs[2].then(|| vec![T::zero(); c_out * frames]);
            let mut cols = vec![T::zero(); ck * hop];
            let mut w = vec![T::zero(); c_out * ck];
            let mut gseg = vec![T::zero(); c_out * hop];
            let mut tmp = vec![T::zero(); ck * hop];
            let mut dw = vec![T::zero(); c_out * ck];
            for f in 0..frames {
                for o in 0..c_out {
                    gseg[o * hop..(o + 1) * hop].copy_from_slice(&g[o * len + f * hop..][..hop]);
                }
                if let Some(db) = db.as_mut() {
                    for o in 0..c_out {
                        db[o * frames + f] = gseg[o * hop..(o + 1) * hop].iter().copied().sum();
                    }
                }
                if let Some(dk) = dk.as_mut() {
                    geo.patches(&xd, f, &mut cols);
                    matmul(c_out, hop, ck, &gseg, false, &cols, true, &mut dw, false);
                    for (r, &v) in dw.iter().enumerate() {
                        dk[r * frames + f] = v;
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    geo.kernel(&kd, f, &mut w);
                    matmul(ck, c_out, hop, &w, true, &gseg, false, &mut tmp, false);
                    geo.scatter_patches(&tmp, f, dx);
                }
            }
            vec![dx, dk, db]
        },
    ))
}
