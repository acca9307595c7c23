//! Neural-network building blocks recorded on the tape.

use crate::error::{shape_err, Result};
use crate::Real;

use super::tape::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `(K - 1)·d` zeros on the left; output length equals input length at stride 1.
    Causal,
    /// Symmetric padding; output length is `ceil(T / stride)` for even splits.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn causal(dilation: usize) -> Self {
        Self {
            stride: 1,
            dilation,
            padding: Padding::Causal,
        }
    }

    pub fn same(dilation: usize) -> Self {
        Self {
            stride: 1,
            dilation,
            padding: Padding::Same,
        }
    }

    pub fn strided(stride: usize) -> Self {
        Self {
            stride,
            dilation: 1,
            padding: Padding::Same,
        }
    }

    /// Left and right zero padding for a kernel of size `k`.
    pub fn pads(&self, k: usize) -> (usize, usize) {
        let span = self.dilation * (k - 1);
        match self.padding {
            Padding::Causal => (span, 0),
            Padding::Same => {
                let total = (span + 1).saturating_sub(self.stride);
                (total / 2, total - total / 2)
            }
        }
    }

    pub fn out_len(&self, t: usize, k: usize) -> usize {
        let (l, r) = self.pads(k);
        let span = self.dilation * (k - 1);
        let padded = t + l + r;
        if padded <= span {
            0
        } else {
            (padded - span - 1) / self.stride + 1
        }
    }
}

struct ConvGeom {
    c_in: usize,
    c_out: usize,
    k: usize,
    t_in: usize,
    t_out: usize,
    stride: usize,
    dilation: usize,
    pad_left: usize,
}

impl ConvGeom {
    /// Output index range `[lo, hi)` for which tap `k` reads inside the input,
    /// plus the input offset `to·s + off` of that tap.
    #[inline]
    fn tap_range(&self, k: usize) -> (usize, usize, isize) {
        let off = (k * self.dilation) as isize - self.pad_left as isize;
        let s = self.stride as isize;
        // need 0 <= to·s + off <= t_in - 1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let last = self.t_in as isize - 1 - off;
        let hi = if last < 0 { 0 } else { last / s + 1 };
        let lo = (lo as usize).min(self.t_out);
        let hi = (hi as usize).min(self.t_out);
        (lo, hi.max(lo), off)
    }
}

// Output-time block size for the stride-1 kernels; keeps the working set in cache.
const BLOCK: usize = 2048;

fn conv_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.c_out * g.t_out];
    if let Some(b) = bias {
        for (co, row) in out.chunks_mut(g.t_out.max(1)).enumerate().take(g.c_out) {
            row.fill(b[co]);
        }
    }
    let taps: Vec<(usize, usize, isize)> = (0..g.k).map(|k| g.tap_range(k)).collect();
    if g.stride == 1 {
        let mut b0 = 0;
        while b0 < g.t_out {
            let b1 = (b0 + BLOCK).min(g.t_out);
            for co in 0..g.c_out {
                let orow = &mut out[co * g.t_out..(co + 1) * g.t_out];
                for ci in 0..g.c_in {
                    let xrow = &x[ci * g.t_in..(ci + 1) * g.t_in];
                    let wrow = &w[(co * g.c_in + ci) * g.k..(co * g.c_in + ci + 1) * g.k];
                    for (k, &(lo, hi, off)) in taps.iter().enumerate() {
                        let (lo, hi) = (lo.max(b0), hi.min(b1));
                        if lo >= hi {
                            continue;
                        }
                        let wv = wrow[k];
                        let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                        for (o, &xv) in orow[lo..hi].iter_mut().zip(src) {
                            *o = *o + wv * xv;
                        }
                    }
                }
            }
            b0 = b1;
        }
    } else {
        for co in 0..g.c_out {
            let orow = &mut out[co * g.t_out..(co + 1) * g.t_out];
            for ci in 0..g.c_in {
                let xrow = &x[ci * g.t_in..(ci + 1) * g.t_in];
                for (k, &(lo, hi, off)) in taps.iter().enumerate() {
                    let wv = w[(co * g.c_in + ci) * g.k + k];
                    for to in lo..hi {
                        let ti = (to * g.stride) as isize + off;
                        orow[to] = orow[to] + wv * xrow[ti as usize];
                    }
                }
            }
        }
    }
    out
}

fn conv_grad_input<T: Real>(grad: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let mut gx = vec![T::zero(); g.c_in * g.t_in];
    let taps: Vec<(usize, usize, isize)> = (0..g.k).map(|k| g.tap_range(k)).collect();
    for ci in 0..g.c_in {
        let gxrow = &mut gx[ci * g.t_in..(ci + 1) * g.t_in];
        for co in 0..g.c_out {
            let grow = &grad[co * g.t_out..(co + 1) * g.t_out];
            for (k, &(lo, hi, off)) in taps.iter().enumerate() {
                let wv = w[(co * g.c_in + ci) * g.k + k];
                if g.stride == 1 {
                    let dst =
                        &mut gxrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (d, &gv) in dst.iter_mut().zip(&grow[lo..hi]) {
                        *d = *d + wv * gv;
                    }
                } else {
                    for to in lo..hi {
                        let ti = ((to * g.stride) as isize + off) as usize;
                        gxrow[ti] = gxrow[ti] + wv * grow[to];
                    }
                }
            }
        }
    }
    gx
}

fn conv_grad_weight<T: Real>(grad: &[T], x: &[T], g: &ConvGeom) -> Vec<T> {
    let mut gw = vec![T::zero(); g.c_out * g.c_in * g.k];
    let taps: Vec<(usize, usize, isize)> = (0..g.k).map(|k| g.tap_range(k)).collect();
    for co in 0..g.c_out {
        let grow = &grad[co * g.t_out..(co + 1) * g.t_out];
        for ci in 0..g.c_in {
            let xrow = &x[ci * g.t_in..(ci + 1) * g.t_in];
            for (k, &(lo, hi, off)) in taps.iter().enumerate() {
                let acc = if g.stride == 1 {
                    let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    dot(&grow[lo..hi], src)
                } else {
                    (lo..hi)
                        .map(|to| grow[to] * xrow[((to * g.stride) as isize + off) as usize])
                        .sum()
                };
                gw[(co * g.c_in + ci) * g.k + k] = acc;
            }
        }
    }
    gw
}

/// Dot product with several partial sums so the compiler can vectorise it.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (ac, bc) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for i in 0..8 {
            acc[i] = acc[i] + ac[i] * bc[i];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Dilated 1-D cross-correlation.
///
/// `x: [C_in, T]`, `weight: [C_out, C_in, K]`, `bias: [C_out]` → `[C_out, T']`.
pub fn conv1d<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    spec: ConvSpec,
) -> Result<Var<'t, T>> {
    let (xs, ws) = (x.shape(), weight.shape());
    let (&[c_in, t_in], &[c_out, c_in_w, k]) = (xs.as_slice(), ws.as_slice()) else {
        return Err(shape_err("conv1d", format!("input {xs:?}, weight {ws:?}")));
    };
    if c_in != c_in_w || k == 0 || spec.stride == 0 || spec.dilation == 0 {
        return Err(shape_err(
            "conv1d",
            format!("input {xs:?}, weight {ws:?}, {spec:?}"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(shape_err("conv1d", format!("bias {:?} for {c_out} outputs", b.shape())));
        }
    }
    let (pad_left, _) = spec.pads(k);
    let geom = ConvGeom {
        c_in,
        c_out,
        k,
        t_in,
        t_out: spec.out_len(t_in, k),
        stride: spec.stride,
        dilation: spec.dilation,
        pad_left,
    };
    let value = {
        let bias_data = bias.map(|b| b.data());
        conv_forward(&x.data(), &weight.data(), bias_data.as_deref(), &geom)
    };
    let shape = vec![c_out, geom.t_out];
    let mut parents = vec![x, weight];
    parents.extend(bias);
    Ok(x.tape.record(value, shape, &parents, move |a, g| {
        if a.needs[0] {
            g[0] = Some(conv_grad_input(a.grad, a.inputs[1], &geom));
        }
        if a.needs[1] {
            g[1] = Some(conv_grad_weight(a.grad, a.inputs[0], &geom));
        }
        if a.needs.len() > 2 && a.needs[2] {
            g[2] = Some(
                (0..geom.c_out)
                    .map(|co| a.grad[co * geom.t_out..(co + 1) * geom.t_out].iter().copied().sum())
                    .collect(),
            );
        }
    }))
}

/// `W·x + b` for `x: [N_in]`, `W: [N_out, N_in]`, `b: [N_out]`.
pub fn linear<'t, T: Real>(x: Var<'t, T>, w: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    let (xs, ws) = (x.shape(), w.shape());
    let (&[n_in], &[n_out, n_in_w]) = (xs.as_slice(), ws.as_slice()) else {
        return Err(shape_err("linear", format!("x {xs:?}, W {ws:?}")));
    };
    if n_in != n_in_w || b.shape() != [n_out] {
        return Err(shape_err("linear", format!("x {xs:?}, W {ws:?}, b {:?}", b.shape())));
    }
    w.matmul(x.reshape(&[n_in, 1])?)?.reshape(&[n_out])?.add(b)
}

/// Per-channel affine modulation `gamma[c]·x[c, t] + beta[c]`.
pub fn film<'t, T: Real>(x: Var<'t, T>, gamma: Var<'t, T>, beta: Var<'t, T>) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let &[c, t] = xs.as_slice() else {
        return Err(shape_err("film", format!("x {xs:?}")));
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(
            "film",
            format!("x {xs:?}, gamma {:?}, beta {:?}", gamma.shape(), beta.shape()),
        ));
    }
    let value = {
        let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
        let mut out = Vec::with_capacity(c * t);
        for ch in 0..c {
            out.extend(xd[ch * t..(ch + 1) * t].iter().map(|&v| gd[ch] * v + bd[ch]));
        }
        out
    };
    Ok(x.tape.record(value, vec![c, t], &[x, gamma, beta], move |a, g| {
        let (gr, xd, gd) = (a.grad, a.inputs[0], a.inputs[1]);
        if a.needs[0] {
            let mut gx = Vec::with_capacity(c * t);
            for ch in 0..c {
                gx.extend(gr[ch * t..(ch + 1) * t].iter().map(|&v| v * gd[ch]));
            }
            g[0] = Some(gx);
        }
        if a.needs[1] {
            g[1] = Some(
                (0..c)
                    .map(|ch| dot(&gr[ch * t..(ch + 1) * t], &xd[ch * t..(ch + 1) * t]))
                    .collect(),
            );
        }
        if a.needs[2] {
            g[2] = Some(
                (0..c)
                    .map(|ch| gr[ch * t..(ch + 1) * t].iter().copied().sum())
                    .collect(),
            );
        }
    }))
}

/// Parametric ReLU with a trainable slope per channel; `x: [C, T]`, `slope: [C]`.
pub fn prelu<'t, T: Real>(x: Var<'t, T>, slope: Var<'t, T>) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let (c, t) = match xs.as_slice() {
        &[c, t] => (c, t),
        &[n] => (1, n),
        _ => return Err(shape_err("prelu", format!("x {xs:?}"))),
    };
    if slope.shape() != [c] {
        return Err(shape_err("prelu", format!("x {xs:?}, slope {:?}", slope.shape())));
    }
    let value = {
        let (xd, sd) = (x.data(), slope.data());
        let mut out = Vec::with_capacity(c * t);
        for ch in 0..c {
            let s = sd[ch];
            out.extend(
                xd[ch * t..(ch + 1) * t]
                    .iter()
                    .map(|&v| if v >= T::zero() { v } else { s * v }),
            );
        }
        out
    };
    Ok(x.tape.record(value, xs, &[x, slope], move |a, g| {
        let (gr, xd, sd) = (a.grad, a.inputs[0], a.inputs[1]);
        if a.needs[0] {
            let mut gx = Vec::with_capacity(c * t);
            for ch in 0..c {
                let s = sd[ch];
                gx.extend(
                    gr[ch * t..(ch + 1) * t]
                        .iter()
                        .zip(&xd[ch * t..(ch + 1) * t])
                        .map(|(&gv, &xv)| if xv >= T::zero() { gv } else { s * gv }),
                );
            }
            g[0] = Some(gx);
        }
        if a.needs[1] {
            g[1] = Some(
                (0..c)
                    .map(|ch| {
                        gr[ch * t..(ch + 1) * t]
                            .iter()
                            .zip(&xd[ch * t..(ch + 1) * t])
                            .filter(|(_, &xv)| xv < T::zero())
                            .map(|(&gv, &xv)| gv * xv)
                            .sum()
                    })
                    .collect(),
            );
        }
    }))
}

/// Attention pooling of `frames: [T, D]` into one `[D]` vector.
///
/// `α = softmax_t((query · W_k f_t) / √D)`, output `Σ_t α_t · W_v f_t`.
pub fn attention_pool<'t, T: Real>(
    frames: Var<'t, T>,
    query: Var<'t, T>,
    w_k: Var<'t, T>,
    w_v: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let fs = frames.shape();
    let &[t, d] = fs.as_slice() else {
        return Err(shape_err("attention_pool", format!("frames {fs:?}")));
    };
    if t == 0 {
        return Err(shape_err("attention_pool", "no frames to pool"));
    }
    if query.shape() != [d] || w_k.shape() != [d, d] || w_v.shape() != [d, d] {
        return Err(shape_err(
            "attention_pool",
            format!(
                "frames {fs:?}, query {:?}, W_k {:?}, W_v {:?}",
                query.shape(),
                w_k.shape(),
                w_v.shape()
            ),
        ));
    }
    // keys[t] = W_k f_t  ->  frames · W_kᵀ
    let keys = frames.matmul(w_k.transpose()?)?;
    let values = frames.matmul(w_v.transpose()?)?;
    let scores = keys
        .matmul(query.reshape(&[d, 1])?)?
        .reshape(&[t])?
        .scale(T::one() / T::of(d as f64).sqrt());
    let alpha = scores.softmax()?;
    alpha.reshape(&[1, t])?.matmul(values)?.reshape(&[d])
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;

    #[test]
    fn pointwise_unit_kernel_is_identity() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(vec![0.5, -1.0, 2.0, 3.0], &[1, 4]).unwrap();
        let w = tape.constant(vec![1.0], &[1, 1, 1]).unwrap();
        let b = tape.constant(vec![0.0], &[1]).unwrap();
        for spec in [ConvSpec::causal(1), ConvSpec::same(1)] {
            let y = conv1d(x, w, Some(b), spec).unwrap();
            assert_eq!(y.value(), x.value());
        }
    }

    #[test]
    fn impulse_reproduces_dilated_kernel() {
        let tape = Tape::<f64>::new();
        let t = 32;
        let t0 = 5;
        let mut x = vec![0.0; t];
        x[t0] = 1.0;
        let x = tape.constant(x, &[1, t]).unwrap();
        let kern = [0.5, -1.0, 2.0];
        let w = tape
            .constant([kern, [1.0, 2.0, 3.0]].concat(), &[2, 1, 3])
            .unwrap();
        let d = 4;
        let y = conv1d(x, w, None, ConvSpec::causal(d)).unwrap().value();
        // causal: out[t] = Σ_k w[k]·x[t + k·d − 2d]; the impulse shows up at t0 + (2 − k)·d
        for (c, kc) in [kern, [1.0, 2.0, 3.0]].iter().enumerate() {
            let row = &y[c * t..(c + 1) * t];
            for (k, &wk) in kc.iter().enumerate() {
                assert_eq!(row[t0 + (2 - k) * d], wk);
            }
            assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 3);
        }
    }

    #[test]
    fn same_padding_and_stride_lengths() {
        assert_eq!(ConvSpec::same(1).out_len(100, 7), 100);
        assert_eq!(ConvSpec::same(9).out_len(100, 7), 100);
        assert_eq!(ConvSpec::strided(4).out_len(96, 8), 24);
        assert_eq!(ConvSpec::strided(2).out_len(96, 4), 48);
        assert_eq!(ConvSpec::causal(128).out_len(10, 13), 10);
    }

    #[test]
    fn film_identity_and_constant() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let ones = tape.constant(vec![1.0, 1.0], &[2]).unwrap();
        let zeros = tape.constant(vec![0.0, 0.0], &[2]).unwrap();
        let k = tape.constant(vec![7.0, 7.0], &[2]).unwrap();
        assert_eq!(film(x, ones, zeros).unwrap().value(), x.value());
        assert_eq!(film(x, zeros, k).unwrap().value(), vec![7.0; 4]);
    }

    #[test]
    fn film_gamma_gradient_is_channel_sum() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(vec![1.0, 2.0, 3.0, -4.0, 5.0, 0.5], &[2, 3]).unwrap();
        let gamma = tape.leaf(vec![0.3, -0.2], &[2]).unwrap();
        let beta = tape.leaf(vec![0.0, 0.0], &[2]).unwrap();
        let grads = tape.backward(film(x, gamma, beta).unwrap().sum()).unwrap();
        assert_eq!(grads.get(gamma).unwrap(), &[6.0, 1.5]);
        assert_eq!(grads.get(beta).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn prelu_slope_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(vec![-2.0], &[1, 1]).unwrap();
        let slope = tape.leaf(vec![0.25], &[1]).unwrap();
        let y = prelu(x, slope).unwrap();
        assert_eq!(y.item(), -0.5);
        let grads = tape.backward(y.sum()).unwrap();
        assert_eq!(grads.get(slope).unwrap(), &[-2.0]);
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let tape = Tape::<f32>::new();
        let eye = tape.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let zero_b = tape.constant(vec![0.0, 0.0], &[2]).unwrap();
        let b = tape.constant(vec![0.5, -0.5], &[2]).unwrap();
        let x = tape.constant(vec![3.0, -1.0], &[2]).unwrap();
        let zero_x = tape.constant(vec![0.0, 0.0], &[2]).unwrap();
        assert_eq!(linear(x, eye, zero_b).unwrap().value(), vec![3.0, -1.0]);
        assert_eq!(linear(zero_x, eye, b).unwrap().value(), vec![0.5, -0.5]);
    }

    #[test]
    fn attention_over_one_frame_ignores_query() {
        let tape = Tape::<f64>::new();
        let f = tape.constant(vec![1.0, 2.0], &[1, 2]).unwrap();
        let wk = tape.constant(vec![0.1, 0.2, 0.3, 0.4], &[2, 2]).unwrap();
        let wv = tape.constant(vec![1.0, 1.0, 0.0, 2.0], &[2, 2]).unwrap();
        for q in [[5.0, -3.0], [0.0, 0.0]] {
            let q = tape.constant(q.to_vec(), &[2]).unwrap();
            assert_eq!(attention_pool(f, q, wk, wv).unwrap().value(), vec![3.0, 4.0]);
        }
    }

    #[test]
    fn attention_over_identical_frames_is_the_value() {
        let tape = Tape::<f64>::new();
        let f = tape.constant(vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0], &[3, 2]).unwrap();
        let q = tape.constant(vec![0.7, -0.1], &[2]).unwrap();
        let wk = tape.constant(vec![0.1, 0.2, 0.3, 0.4], &[2, 2]).unwrap();
        let wv = tape.constant(vec![1.0, 1.0, 0.0, 2.0], &[2, 2]).unwrap();
        let z = attention_pool(f, q, wk, wv).unwrap().value();
        assert!((z[0] - 3.0).abs() < 1e-12 && (z[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn attention_rejects_empty_frames() {
        let tape = Tape::<f64>::new();
        let f = tape.constant(vec![], &[0, 2]).unwrap();
        let q = tape.constant(vec![0.0; 2], &[2]).unwrap();
        let w = tape.constant(vec![0.0; 4], &[2, 2]).unwrap();
        assert!(attention_pool(f, q, w, w).is_err());
    }
}
