//! Elementwise, reduction and shape ops.

use super::{dim_err, Float, Tensor, TensorResult};

fn unary_grad<T: Float>(
    g: &[T],
    x: &[T],
    y: &[T],
    df: impl Fn(T, T) -> T,
) -> Vec<Option<Vec<T>>> {
    vec![Some(
        g.iter()
            .zip(x.iter().zip(y))
            .map(|(&g, (&x, &y))| g * df(x, y))
            .collect(),
    )]
}

/// Index into a length-`len` signal for position `i` of its reflect-padded
/// copy with `left` samples prepended.
pub(crate) fn reflect_index(i: usize, left: usize, len: usize) -> usize {
    let j = i as isize - left as isize;
    let last = len as isize - 1;
    let r = if j < 0 {
        -j
    } else if j > last {
        2 * last - j
    } else {
        j
    };
    r as usize
}

impl<T: Float> Tensor<T> {
    fn unary(
        &self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(
            out,
            self.shape(),
            vec![self.clone()],
            move |g: &[T], y: &[T], ps: &[Tensor<T>], _: &[bool]| {
                unary_grad(g, &ps[0].data(), y, &df)
            },
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary(move |x| x + c, |_, _| T::one())
    }

    /// `x` for `x ≥ 0`, `alpha·x` otherwise.
    pub fn leaky_relu(&self, alpha: T) -> Tensor<T> {
        self.unary(
            move |x| if x >= T::zero() { x } else { alpha * x },
            move |x, _| if x >= T::zero() { T::one() } else { alpha },
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    /// Natural log; callers clamp first when zeros can occur.
    pub fn log(&self) -> Tensor<T> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn abs(&self) -> Tensor<T> {
        self.unary(|x| x.abs(), |x, _| sign(x))
    }

    /// `max(x, lo)`; the gradient passes where `x ≥ lo`.
    pub fn clamp_min(&self, lo: T) -> Tensor<T> {
        self.unary(
            move |x| if x >= lo { x } else { lo },
            move |x, _| if x >= lo { T::one() } else { T::zero() },
        )
    }

    fn binary(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        grads: impl Fn(T, T, T) -> (T, T) + 'static,
    ) -> TensorResult<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(dim_err(
                op,
                format!("shapes {:?} and {:?} differ", self.shape(), other.shape()),
            ));
        }
        let out: Vec<T> = {
            let (a, b) = (self.data(), other.data());
            a.iter().zip(b.iter()).map(|(&a, &b)| f(a, b)).collect()
        };
        Ok(Tensor::from_op(
            out,
            self.shape(),
            vec![self.clone(), other.clone()],
            move |g: &[T], _: &[T], ps: &[Tensor<T>], needs: &[bool]| {
                let (a, b) = (ps[0].data(), ps[1].data());
                let n = g.len();
                let mut ga = needs[0].then(|| Vec::with_capacity(n));
                let mut gb = needs[1].then(|| Vec::with_capacity(n));
                for i in 0..n {
                    let (da, db) = grads(g[i], a[i], b[i]);
                    if let Some(v) = ga.as_mut() {
                        v.push(da);
                    }
                    if let Some(v) = gb.as_mut() {
                        v.push(db);
                    }
                }
                vec![ga, gb]
            },
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        self.binary(other, "add", |a, b| a + b, |g, _, _| (g, g))
    }

    pub fn sub(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        self.binary(other, "sub", |a, b| a - b, |g, _, _| (g, -g))
    }

    pub fn mul(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        self.binary(other, "mul", |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    pub fn div(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |g, a, b| (g / b, -g * a / (b * b)),
        )
    }

    fn reduce(
        &self,
        value: T,
        local_grad: impl Fn(T, T) -> T + 'static,
    ) -> Tensor<T> {
        Tensor::from_op(
            vec![value],
            &[],
            vec![self.clone()],
            move |g: &[T], y: &[T], ps: &[Tensor<T>], _: &[bool]| {
                let (g, y) = (g[0], y[0]);
                vec![Some(ps[0].data().iter().map(|&x| g * local_grad(x, y)).collect())]
            },
        )
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        self.reduce(s, |_, _| T::one())
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::lit(self.numel().max(1) as f64);
        let s: T = self.data().iter().copied().sum();
        self.reduce(s / n, move |_, _| T::one() / n)
    }

    /// Σ|x|.
    pub fn l1_norm(&self) -> Tensor<T> {
        let s = self.data().iter().map(|x| x.abs()).sum();
        self.reduce(s, |x, _| sign(x))
    }

    /// sqrt(Σx²); the gradient at the origin is taken as zero.
    pub fn frobenius_norm(&self) -> Tensor<T> {
        let s = self.data().iter().map(|&x| x * x).sum::<T>().sqrt();
        self.reduce(s, |x, y| if y > T::zero() { x / y } else { T::zero() })
    }

    pub fn reshape(&self, shape: &[usize]) -> TensorResult<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(dim_err(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape,
            vec![self.clone()],
            |g: &[T], _: &[T], _: &[Tensor<T>], _: &[bool]| vec![Some(g.to_vec())],
        ))
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn narrow(&self, start: usize, len: usize) -> TensorResult<Tensor<T>> {
        let Some(&rows) = self.shape().first() else {
            return Err(dim_err("narrow", "scalar tensor"));
        };
        if start + len > rows {
            return Err(dim_err(
                "narrow",
                format!("rows {start}..{} out of {rows}", start + len),
            ));
        }
        let inner = self.numel() / rows.max(1);
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        let out = self.data()[start * inner..(start + len) * inner].to_vec();
        let total = self.numel();
        Ok(Tensor::from_op(
            out,
            &shape,
            vec![self.clone()],
            move |g: &[T], _: &[T], _: &[Tensor<T>], _: &[bool]| {
                let mut gx = vec![T::zero(); total];
                gx[start * inner..(start + len) * inner].copy_from_slice(g);
                vec![Some(gx)]
            },
        ))
    }

    /// Reflect-pads the last axis (edge sample not repeated).
    pub fn pad_reflect(&self, left: usize, right: usize) -> TensorResult<Tensor<T>> {
        let Some(&len) = self.shape().last() else {
            return Err(dim_err("pad_reflect", "scalar tensor"));
        };
        if left >= len || right >= len {
            return Err(dim_err(
                "pad_reflect",
                format!("padding ({left}, {right}) needs more than {len} samples"),
            ));
        }
        let rows = self.numel() / len;
        let out_len = len + left + right;
        let map: Vec<usize> = (0..out_len).map(|i| reflect_index(i, left, len)).collect();
        let mut out = Vec::with_capacity(rows * out_len);
        {
            let x = self.data();
            for r in 0..rows {
                let row = &x[r * len..(r + 1) * len];
                out.extend(map.iter().map(|&j| row[j]));
            }
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = out_len;
        Ok(Tensor::from_op(
            out,
            &shape,
            vec![self.clone()],
            move |g: &[T], _: &[T], _: &[Tensor<T>], _: &[bool]| {
                let mut gx = vec![T::zero(); rows * len];
                for r in 0..rows {
                    for (i, &j) in map.iter().enumerate() {
                        gx[r * len + j] += g[r * out_len + i];
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Repeats every element of the last axis `factor` times.
    pub fn repeat_interleave(&self, factor: usize) -> TensorResult<Tensor<T>> {
        let Some(&len) = self.shape().last() else {
            return Err(dim_err("repeat_interleave", "scalar tensor"));
        };
        if factor == 0 {
            return Err(dim_err("repeat_interleave", "factor must be ≥ 1"));
        }
        let out: Vec<T> = self
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, factor))
            .collect();
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = len * factor;
        Ok(Tensor::from_op(
            out,
            &shape,
            vec![self.clone()],
            move |g: &[T], _: &[T], _: &[Tensor<T>], _: &[bool]| {
                vec![Some(g.chunks(factor).map(|c| c.iter().copied().sum()).collect())]
            },
        ))
    }
}

fn sign<T: Float>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Effective weight `g · v / ‖v‖₂`, with the norm taken per slice of the
/// leading axis of `v` and `g` holding one magnitude per slice.
pub fn weight_norm<T: Float>(v: &Tensor<T>, g: &Tensor<T>) -> TensorResult<Tensor<T>> {
    let rows = *v
        .shape()
        .first()
        .ok_or_else(|| dim_err("weight_norm", "scalar direction tensor"))?;
    if g.numel() != rows {
        return Err(dim_err(
            "weight_norm",
            format!("{} magnitudes for {rows} slices", g.numel()),
        ));
    }
    let inner = v.numel() / rows.max(1);
    let norms: Vec<T> = v
        .data()
        .chunks(inner)
        .map(|row| row.iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect();
    let mut out = Vec::with_capacity(v.numel());
    {
        let (vd, gd) = (v.data(), g.data());
        for (r, row) in vd.chunks(inner).enumerate() {
            let s = gd[r] / norms[r];
            out.extend(row.iter().map(|&x| x * s));
        }
    }
    Ok(Tensor::from_op(
        out,
        v.shape(),
        vec![v.clone(), g.clone()],
        move |gw: &[T], _: &[T], ps: &[Tensor<T>], needs: &[bool]| {
            let (vd, gd) = (ps[0].data(), ps[1].data());
            let mut gv = needs[0].then(|| vec![T::zero(); vd.len()]);
            let mut gg = needs[1].then(|| vec![T::zero(); gd.len()]);
            for r in 0..rows {
                let n = norms[r];
                let row = &vd[r * inner..(r + 1) * inner];
                let grow = &gw[r * inner..(r + 1) * inner];
                // projection of the incoming gradient onto the unit direction
                let proj: T = row.iter().zip(grow).map(|(&x, &g)| g * x).sum::<T>() / n;
                if let Some(gg) = gg.as_mut() {
                    gg[r] = proj;
                }
                if let Some(gv) = gv.as_mut() {
                    let s = gd[r] / n;
                    for i in 0..inner {
                        gv[r * inner + i] = s * (grow[i] - row[i] / n * proj);
                    }
                }
            }
            vec![gv, gg]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::param(v.to_vec(), shape).unwrap()
    }

    #[test]
    fn leaky_relu_values() {
        let x = t(&[-1.0, 0.0, 2.0], &[3]);
        assert_eq!(x.leaky_relu(0.2).to_vec(), vec![-0.2, 0.0, 2.0]);
    }

    #[test]
    fn frobenius_of_identity() {
        let x = t(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
        assert!((x.frobenius_norm().item() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let x = t(&[0.0], &[1]);
        x.tanh().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn l1_norm_and_mean() {
        let x = t(&[1.0, -2.0, 3.0, -4.0], &[2, 2]);
        assert_eq!(x.l1_norm().item(), 10.0);
        assert_eq!(x.mean().item(), -0.5);
    }

    #[test]
    fn shape_errors() {
        let a = t(&[1.0, 2.0], &[2]);
        let b = t(&[1.0, 2.0, 3.0], &[3]);
        assert!(a.add(&b).is_err());
        assert!(a.reshape(&[3]).is_err());
        assert!(a.narrow(1, 2).is_err());
        assert!(a.pad_reflect(2, 0).is_err());
    }

    #[test]
    fn reflect_padding_layout() {
        let x = t(&[0.0, 1.0, 2.0, 3.0], &[4]);
        assert_eq!(
            x.pad_reflect(2, 2).unwrap().to_vec(),
            vec![2.0, 1.0, 0.0, 1.0, 2.0, 3.0, 2.0, 1.0]
        );
    }

    #[test]
    fn weight_norm_rows_have_magnitude_g() {
        let v = t(&[3.0, 4.0, 1.0, 0.0, 2.0, 2.0], &[2, 3]);
        let g = t(&[2.0, 0.5], &[2]);
        let w = weight_norm(&v, &g).unwrap().to_vec();
        let n0 = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        let n1 = (w[3] * w[3] + w[4] * w[4] + w[5] * w[5]).sqrt();
        assert!((n0 - 2.0).abs() < 1e-12);
        assert!((n1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn repeat_interleave_layout() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let y = x.repeat_interleave(3).unwrap();
        assert_eq!(y.shape(), &[2, 6]);
        assert_eq!(y.to_vec(), vec![1., 1., 1., 2., 2., 2., 3., 3., 3., 4., 4., 4.]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0; 4]);
    }
}
