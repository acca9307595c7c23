//! Elementwise, reduction and structural operations on [`Var`].
//!
//! Binary operations require identical shapes; there is no broadcasting.
//! Reshape/transpose/slice are explicit operations instead.

use crate::error::{shape_err, Result};
use crate::Real;

use super::tape::Var;

impl<'t, T: Real> Var<'t, T> {
    fn same_shape(&self, other: &Var<'t, T>, op: &'static str) -> Result<Vec<usize>> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(shape_err(op, format!("{a:?} vs {b:?}")));
        }
        Ok(a)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary<F, D>(self, f: F, df: D) -> Var<'t, T>
    where
        F: Fn(T) -> T,
        D: Fn(T, T) -> T + 'static,
    {
        let value: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        self.tape.record(value, self.shape(), &[self], move |a, g| {
            let gx = a
                .grad
                .iter()
                .zip(a.inputs[0])
                .zip(a.out)
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            g[0] = Some(gx);
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = self.same_shape(&other, "add")?;
        let value = zip_map(&self.data(), &other.data(), |a, b| a + b);
        Ok(self.tape.record(value, shape, &[self, other], |a, g| {
            for (i, slot) in g.iter_mut().enumerate() {
                if a.needs[i] {
                    *slot = Some(a.grad.to_vec());
                }
            }
        }))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = self.same_shape(&other, "sub")?;
        let value = zip_map(&self.data(), &other.data(), |a, b| a - b);
        Ok(self.tape.record(value, shape, &[self, other], |a, g| {
            if a.needs[0] {
                g[0] = Some(a.grad.to_vec());
            }
            if a.needs[1] {
                g[1] = Some(a.grad.iter().map(|&v| -v).collect());
            }
        }))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = self.same_shape(&other, "mul")?;
        let value = zip_map(&self.data(), &other.data(), |a, b| a * b);
        Ok(self.tape.record(value, shape, &[self, other], |a, g| {
            if a.needs[0] {
                g[0] = Some(zip_map(a.grad, a.inputs[1], |g, y| g * y));
            }
            if a.needs[1] {
                g[1] = Some(zip_map(a.grad, a.inputs[0], |g, x| g * x));
            }
        }))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        self.unary(|x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        self.unary(|x| x + c, |_, _| T::one())
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// `|x|`; the subgradient at 0 is taken as 0.
    pub fn abs(self) -> Var<'t, T> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn ln(self) -> Var<'t, T> {
        self.unary(|x| x.ln(), |x, _| x.recip())
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    /// `x^p` for `x > 0`.
    pub fn powf(self, p: T) -> Var<'t, T> {
        self.unary(
            move |x| x.powf(p),
            move |x, y| if x > T::zero() { p * y / x } else { T::zero() },
        )
    }

    /// `x` for `x >= 0`, `e^x - 1` otherwise.
    pub fn elu(self) -> Var<'t, T> {
        self.unary(
            |x| if x >= T::zero() { x } else { x.exp_m1() },
            |x, y| if x >= T::zero() { T::one() } else { y + T::one() },
        )
    }

    pub fn sum(self) -> Var<'t, T> {
        let value = vec![self.data().iter().copied().sum()];
        let n = self.numel();
        self.tape.record(value, Vec::new(), &[self], move |a, g| {
            g[0] = Some(vec![a.grad[0]; n]);
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.numel();
        self.sum().scale(T::one() / T::of(n as f64))
    }

    /// Euclidean (Frobenius) norm; the subgradient at 0 is taken as 0.
    pub fn norm(self) -> Var<'t, T> {
        let norm = self.data().iter().map(|&x| x * x).sum::<T>().sqrt();
        self.tape.record(vec![norm], Vec::new(), &[self], |a, g| {
            let n = a.out[0];
            let gx = if n > T::zero() {
                let s = a.grad[0] / n;
                a.inputs[0].iter().map(|&x| x * s).collect()
            } else {
                vec![T::zero(); a.inputs[0].len()]
            };
            g[0] = Some(gx);
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        let value = self.value();
        Ok(self.tape.record(value, shape.to_vec(), &[self], |a, g| {
            g[0] = Some(a.grad.to_vec());
        }))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let &[rows, cols] = shape.as_slice() else {
            return Err(shape_err("transpose", format!("expected 2-D, got {shape:?}")));
        };
        let value = transpose(&self.data(), rows, cols);
        Ok(self.tape.record(value, vec![cols, rows], &[self], move |a, g| {
            g[0] = Some(transpose(a.grad, cols, rows));
        }))
    }

    /// Contiguous range `[start, end)` along the first axis.
    pub fn slice(self, start: usize, end: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let Some(&len) = shape.first() else {
            return Err(shape_err("slice", "cannot slice a scalar"));
        };
        if start > end || end > len {
            return Err(shape_err("slice", format!("[{start}, {end}) of {len}")));
        }
        let inner: usize = shape[1..].iter().product();
        let value = self.data()[start * inner..end * inner].to_vec();
        let total = self.numel();
        let mut out_shape = shape.clone();
        out_shape[0] = end - start;
        Ok(self.tape.record(value, out_shape, &[self], move |a, g| {
            let mut gx = vec![T::zero(); total];
            gx[start * inner..end * inner].copy_from_slice(a.grad);
            g[0] = Some(gx);
        }))
    }

    /// Matrix product `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), other.shape());
        let (&[m, k], &[k2, n]) = (sa.as_slice(), sb.as_slice()) else {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        };
        if k != k2 {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let value = matmul(&self.data(), &other.data(), m, k, n);
        Ok(self.tape.record(value, vec![m, n], &[self, other], move |a, g| {
            if a.needs[0] {
                // dA = dC · Bᵀ
                let bt = transpose(a.inputs[1], k, n);
                g[0] = Some(matmul(a.grad, &bt, m, n, k));
            }
            if a.needs[1] {
                // dB = Aᵀ · dC
                let at = transpose(a.inputs[0], m, k);
                g[1] = Some(matmul(&at, a.grad, k, m, n));
            }
        }))
    }

    /// Softmax over a 1-D vector, computed with max subtraction.
    pub fn softmax(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 1 || shape[0] == 0 {
            return Err(shape_err("softmax", format!("expected non-empty 1-D, got {shape:?}")));
        }
        let value = softmax(&self.data());
        Ok(self.tape.record(value, shape, &[self], |a, g| {
            let dot: T = a.grad.iter().zip(a.out).map(|(&g, &y)| g * y).sum();
            g[0] = Some(
                a.grad
                    .iter()
                    .zip(a.out)
                    .map(|(&g, &y)| y * (g - dot))
                    .collect(),
            );
        }))
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax<T: Real>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Row-major `[m, k] x [k, n]`.
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o = *o + av * bv;
            }
        }
    }
    out
}
