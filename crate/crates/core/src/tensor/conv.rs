//! Convolutions lowered to im2col + GEMM.

use super::{dim_err, matmul, Float, Tensor, TensorError, TensorResult};

/// Zero padding applied to the time axis of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Total padding `dilation·(K−1)`, split with the extra sample on the right.
    /// Preserves length at stride 1.
    Same,
    Explicit(usize, usize),
}

impl Padding {
    fn resolve(self, span: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => (span / 2, span - span / 2),
            Padding::Explicit(l, r) => (l, r),
        }
    }
}

/// Output length of a strided, dilated convolution; `None` when the padded
/// input is shorter than the kernel span.
pub fn conv_output_len(
    len: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    pad_total: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = len + pad_total;
    (padded >= span).then(|| (padded - span) / stride + 1)
}

/// Range of output positions `o` for which `o·stride + offset` lies in
/// `[0, len)`.
fn valid_range(offset: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let room = len as isize - offset;
    let hi = if room <= 0 { 0 } else { (room + s - 1) / s };
    let lo = (lo as usize).min(out_len);
    (lo, (hi as usize).clamp(lo, out_len))
}

struct Geom1d {
    cin: usize,
    len: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    pad_left: usize,
    out_len: usize,
}

impl Geom1d {
    fn offset(&self, kk: usize) -> isize {
        (kk * self.dilation) as isize - self.pad_left as isize
    }

    fn im2col<T: Float>(&self, x: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.cin * self.k * self.out_len];
        for ci in 0..self.cin {
            let xrow = &x[ci * self.len..(ci + 1) * self.len];
            for kk in 0..self.k {
                let off = self.offset(kk);
                let (lo, hi) = valid_range(off, self.stride, self.len, self.out_len);
                let row = &mut cols[(ci * self.k + kk) * self.out_len..][..self.out_len];
                for (o, slot) in row.iter_mut().enumerate().take(hi).skip(lo) {
                    *slot = xrow[(o as isize * self.stride as isize + off) as usize];
                }
            }
        }
        cols
    }

    fn col2im<T: Float>(&self, cols: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.cin * self.len];
        for ci in 0..self.cin {
            for kk in 0..self.k {
                let off = self.offset(kk);
                let (lo, hi) = valid_range(off, self.stride, self.len, self.out_len);
                let row = &cols[(ci * self.k + kk) * self.out_len..][..self.out_len];
                let xrow = &mut x[ci * self.len..(ci + 1) * self.len];
                for (o, &v) in row.iter().enumerate().take(hi).skip(lo) {
                    xrow[(o as isize * self.stride as isize + off) as usize] += v;
                }
            }
        }
        x
    }
}

fn check_bias<T: Float>(bias: Option<&Tensor<T>>, channels: usize, op: &'static str) -> TensorResult<()> {
    match bias {
        Some(b) if b.numel() != channels => Err(dim_err(
            op,
            format!("bias has {} entries for {channels} output channels", b.numel()),
        )),
        _ => Ok(()),
    }
}

fn add_bias<T: Float>(out: &mut [T], bias: Option<&Tensor<T>>, spatial: usize) {
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_mut(spatial).zip(b.data().iter()) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Float>(g: &[T], spatial: usize) -> Vec<T> {
    g.chunks(spatial).map(|r| r.iter().copied().sum()).collect()
}

fn parents_of<T: Float>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Vec<Tensor<T>> {
    let mut p = vec![x.clone(), w.clone()];
    if let Some(b) = bias {
        p.push(b.clone());
    }
    p
}

/// 1-D convolution of `x: [C_in, T]` with `w: [C_out, C_in, K]`.
pub fn conv1d<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> TensorResult<Tensor<T>> {
    let (&[cin, len], &[cout, wcin, k]) = (x.shape(), w.shape()) else {
        return Err(dim_err(
            "conv1d",
            format!("expected x [C,T] and w [O,C,K], got {:?} and {:?}", x.shape(), w.shape()),
        ));
    };
    if cin != wcin {
        return Err(dim_err("conv1d", format!("input has {cin} channels, kernel expects {wcin}")));
    }
    if k == 0 || stride == 0 || dilation == 0 {
        return Err(dim_err("conv1d", "kernel, stride and dilation must be ≥ 1"));
    }
    check_bias(bias, cout, "conv1d")?;
    let (pl, pr) = padding.resolve(dilation * (k - 1));
    let out_len = conv_output_len(len, k, stride, dilation, pl + pr)
        .ok_or_else(|| dim_err("conv1d", format!("input of length {len} shorter than kernel span")))?;
    let geom = Geom1d {
        cin,
        len,
        k,
        stride,
        dilation,
        pad_left: pl,
        out_len,
    };
    let ck = cin * k;
    let mut out = vec![T::zero(); cout * out_len];
    {
        let cols = geom.im2col(&x.data());
        matmul(cout, ck, out_len, &w.data(), false, &cols, false, &mut out, false);
    }
    add_bias(&mut out, bias, out_len);
    Ok(Tensor::from_op(
        out,
        &[cout, out_len],
        parents_of(x, w, bias),
        move |g: &[T], _: &[T], ps: &[Tensor<T>], needs: &[bool]| {
            let mut grads = vec![None, None, None];
            if needs[0] {
                let mut dcols = vec![T::zero(); ck * out_len];
                matmul(ck, cout, out_len, &ps[1].data(), true, g, false, &mut dcols, false);
                grads[0] = Some(geom.col2im(&dcols));
            }
            if needs[1] {
                let cols = geom.im2col(&ps[0].data());
                let mut dw = vec![T::zero(); cout * ck];
                matmul(cout, out_len, ck, g, false, &cols, true, &mut dw, false);
                grads[1] = Some(dw);
            }
            if needs.get(2).copied().unwrap_or(false) {
                grads[2] = Some(bias_grad(g, out_len));
            }
            grads.truncate(ps.len());
            grads
        },
    ))
}

/// Transposed 1-D convolution of `x: [C_in, T]` with `w: [C_in, C_out, K]`.
///
/// Output length is `(T−1)·stride − 2·padding + K + output_padding`.
pub fn conv_transpose1d<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> TensorResult<Tensor<T>> {
    let (&[cin, len], &[wcin, cout, k]) = (x.shape(), w.shape()) else {
        return Err(dim_err(
            "conv_transpose1d",
            format!("expected x [C,T] and w [C,O,K], got {:?} and {:?}", x.shape(), w.shape()),
        ));
    };
    if cin != wcin {
        return Err(dim_err(
            "conv_transpose1d",
            format!("input has {cin} channels, kernel expects {wcin}"),
        ));
    }
    if k == 0 || stride == 0 || len == 0 {
        return Err(dim_err("conv_transpose1d", "kernel, stride and length must be ≥ 1"));
    }
    check_bias(bias, cout, "conv_transpose1d")?;
    let full = (len - 1) * stride + k + output_padding;
    if full <= 2 * padding {
        return Err(dim_err("conv_transpose1d", "padding consumes the whole output"));
    }
    let out_len = full - 2 * padding;
    let ok = cout * k;
    // output index of (input t, tap kk) is t·stride + kk − padding
    let scatter = move |cols: &[T], out: &mut [T]| {
        for co in 0..cout {
            for kk in 0..k {
                let row = &cols[(co * k + kk) * len..][..len];
                let orow = &mut out[co * out_len..(co + 1) * out_len];
                for (t, &v) in row.iter().enumerate() {
                    let pos = (t * stride + kk) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < out_len {
                        orow[pos as usize] += v;
                    }
                }
            }
        }
    };
    let gather = move |g: &[T]| {
        let mut cols = vec![T::zero(); ok * len];
        for co in 0..cout {
            for kk in 0..k {
                let row = &mut cols[(co * k + kk) * len..][..len];
                let grow = &g[co * out_len..(co + 1) * out_len];
                for (t, slot) in row.iter_mut().enumerate() {
                    let pos = (t * stride + kk) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < out_len {
                        *slot = grow[pos as usize];
                    }
                }
            }
        }
        cols
    };
    let mut out = vec![T::zero(); cout * out_len];
    {
        let mut cols = vec![T::zero(); ok * len];
        matmul(ok, cin, len, &w.data(), true, &x.data(), false, &mut cols, false);
        scatter(&cols, &mut out);
    }
    add_bias(&mut out, bias, out_len);
    Ok(Tensor::from_op(
        out,
        &[cout, out_len],
        parents_of(x, w, bias),
        move |g: &[T], _: &[T], ps: &[Tensor<T>], needs: &[bool]| {
            let mut grads = vec![None, None, None];
            let gcols = gather(g);
            if needs[0] {
                let mut dx = vec![T::zero(); cin * len];
                matmul(cin, ok, len, &ps[1].data(), false, &gcols, false, &mut dx, false);
                grads[0] = Some(dx);
            }
            if needs[1] {
                let mut dw = vec![T::zero(); cin * ok];
                matmul(cin, len, ok, &ps[0].data(), false, &gcols, true, &mut dw, false);
                grads[1] = Some(dw);
            }
            if needs.get(2).copied().unwrap_or(false) {
                grads[2] = Some(bias_grad(g, out_len));
            }
            grads.truncate(ps.len());
            grads
        },
    ))
}

#[derive(Clone, Copy)]
struct Geom2d {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geom2d {
    /// Calls `f(col, ci, h, ow_lo, ow_hi, j)` for every kernel tap and output
    /// row in `rows`; `col` is the offset of that row inside a column block
    /// starting at `rows.start`.
    fn for_each_tap(
        &self,
        rows: std::ops::Range<usize>,
        mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
    ) {
        let block = rows.len() * self.ow;
        for ci in 0..self.cin {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ci * self.kh + i) * self.kw + j;
                    let woff = j as isize - self.pw as isize;
                    let (lo, hi) = valid_range(woff, self.sw, self.w, self.ow);
                    for o in rows.clone() {
                        let hpos = (o * self.sh + i) as isize - self.ph as isize;
                        if hpos < 0 || hpos as usize >= self.h {
                            continue;
                        }
                        let col = row * block + (o - rows.start) * self.ow;
                        f(col, ci, hpos as usize, lo, hi, j);
                    }
                }
            }
        }
    }

    fn im2col<T: Float>(&self, x: &[T], rows: std::ops::Range<usize>, cols: &mut Vec<T>) {
        cols.clear();
        cols.resize(self.cin * self.kh * self.kw * rows.len() * self.ow, T::zero());
        let g = *self;
        self.for_each_tap(rows, |base, ci, hpos, lo, hi, j| {
            let xrow = &x[(ci * g.h + hpos) * g.w..][..g.w];
            for o in lo..hi {
                cols[base + o] = xrow[o * g.sw + j - g.pw];
            }
        });
    }

    fn col2im<T: Float>(&self, cols: &[T], rows: std::ops::Range<usize>, x: &mut [T]) {
        let g = *self;
        self.for_each_tap(rows, |base, ci, hpos, lo, hi, j| {
            let xrow = &mut x[(ci * g.h + hpos) * g.w..][..g.w];
            for o in lo..hi {
                xrow[o * g.sw + j - g.pw] += cols[base + o];
            }
        });
    }

    /// Output-row blocks whose column matrices stay cache-sized.
    fn row_blocks(&self) -> impl Iterator<Item = std::ops::Range<usize>> {
        const BLOCK_ELEMS: usize = 1 << 17;
        let ck = self.cin * self.kh * self.kw;
        let step = (BLOCK_ELEMS / (ck * self.ow).max(1)).max(1);
        let oh = self.oh;
        (0..oh).step_by(step).map(move |r| r..(r + step).min(oh))
    }
}

/// Copies rows `rows` of every channel of `[c, oh, ow]` into `[c, rows·ow]`.
fn gather_rows<T: Float>(src: &[T], c: usize, spatial: usize, start: usize, len: usize, dst: &mut Vec<T>) {
    dst.clear();
    for ch in 0..c {
        dst.extend_from_slice(&src[ch * spatial + start..][..len]);
    }
}

/// 2-D convolution of `x: [C_in, H, W]` with `w: [C_out, C_in, KH, KW]`
/// and symmetric zero padding.
pub fn conv2d<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> TensorResult<Tensor<T>> {
    let (&[cin, h, wd], &[cout, wcin, kh, kw]) = (x.shape(), w.shape()) else {
        return Err(dim_err(
            "conv2d",
            format!("expected x [C,H,W] and w [O,C,KH,KW], got {:?} and {:?}", x.shape(), w.shape()),
        ));
    };
    if cin != wcin {
        return Err(dim_err("conv2d", format!("input has {cin} channels, kernel expects {wcin}")));
    }
    if kh == 0 || kw == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(dim_err("conv2d", "kernel and stride must be ≥ 1"));
    }
    check_bias(bias, cout, "conv2d")?;
    let too_small = || -> TensorError {
        dim_err("conv2d", format!("input {h}×{wd} smaller than kernel {kh}×{kw}"))
    };
    let oh = conv_output_len(h, kh, stride.0, 1, 2 * padding.0).ok_or_else(too_small)?;
    let ow = conv_output_len(wd, kw, stride.1, 1, 2 * padding.1).ok_or_else(too_small)?;
    let geom = Geom2d {
        cin,
        h,
        w: wd,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
        oh,
        ow,
    };
    let ck = cin * kh * kw;
    let spatial = oh * ow;
    let mut out = vec![T::zero(); cout * spatial];
    {
        let (xd, wd) = (x.data(), w.data());
        let (mut cols, mut block) = (Vec::new(), Vec::new());
        for rows in geom.row_blocks() {
            let (start, n) = (rows.start * ow, rows.len() * ow);
            geom.im2col(&xd, rows, &mut cols);
            block.resize(cout * n, T::zero());
            matmul(cout, ck, n, &wd, false, &cols, false, &mut block, false);
            for co in 0..cout {
                out[co * spatial + start..][..n].copy_from_slice(&block[co * n..][..n]);
            }
        }
    }
    add_bias(&mut out, bias, spatial);
    Ok(Tensor::from_op(
        out,
        &[cout, oh, ow],
        parents_of(x, w, bias),
        move |g: &[T], _: &[T], ps: &[Tensor<T>], needs: &[bool]| {
            let mut grads = vec![None, None, None];
            let (xd, wd) = (ps[0].data(), ps[1].data());
            let mut dx = needs[0].then(|| vec![T::zero(); geom.cin * geom.h * geom.w]);
            let mut dw = needs[1].then(|| vec![T::zero(); cout * ck]);
            let (mut cols, mut gblock) = (Vec::new(), Vec::new());
            for rows in geom.row_blocks() {
                let (start, n) = (rows.start * ow, rows.len() * ow);
                gather_rows(g, cout, spatial, start, n, &mut gblock);
                if let Some(dx) = dx.as_mut() {
                    cols.resize(ck * n, T::zero());
                    matmul(ck, cout, n, &wd, true, &gblock, false, &mut cols, false);
                    geom.col2im(&cols, rows.clone(), dx);
                }
                if let Some(dw) = dw.as_mut() {
                    geom.im2col(&xd, rows, &mut cols);
                    matmul(cout, n, ck, &gblock, false, &cols, true, dw, true);
                }
            }
            grads[0] = dx;
            grads[1] = dw;
            if needs.get(2).copied().unwrap_or(false) {
                grads[2] = Some(bias_grad(g, spatial));
            }
            grads.truncate(ps.len());
            grads
        },
    ))
}
