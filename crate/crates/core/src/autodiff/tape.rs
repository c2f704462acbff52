//! Reverse-mode computation record with stop-gradient.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Nodes are
//! topologically ordered by construction; [`Tape::backward`] walks the record
//! once in reverse. Tapes are single-threaded and discarded after use; a
//! TBPTT window maps to one tape.

use super::spectral::fftn;
use super::Tensor;
use crate::error::{CoreError, Result};
use num_complex::Complex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
    Tanh,
}

impl Activation {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(CoreError::Config(format!("unknown activation '{other}'"))),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
        }
    }
}

// Tanh-form gelu; this is the definition differentiated, not an approximation
// of something else.
const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Mode retention geometry for a spectral convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSpec {
    /// Unpadded spatial dims (the tensor's trailing axes).
    pub grid_dims: Vec<usize>,
    /// Retained |frequency| cutoff per axis.
    pub k_max: Vec<usize>,
    /// Channel count d_v (leading tensor axis).
    pub channels: usize,
    /// Mirror-pad (even reflection) each spatial axis before the transform.
    pub mirror_pad: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ModeEntry {
    pub idx: [usize; 3],
    pub conj_idx: [usize; 3],
    pub self_conj: bool,
}

impl SpectralSpec {
    pub fn padded_dims(&self) -> Vec<usize> {
        self.grid_dims
            .iter()
            .map(|&n| if self.mirror_pad && n > 1 { 2 * n } else { n })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_dims.is_empty() || self.grid_dims.len() > 3 {
            return Err(CoreError::Config(
                "spectral conv supports 1..3 spatial axes".into(),
            ));
        }
        if self.k_max.len() != self.grid_dims.len() {
            return Err(CoreError::dimension(
                "spectral k_max",
                self.grid_dims.len(),
                self.k_max.len(),
            ));
        }
        for (a, (&k, &p)) in self.k_max.iter().zip(&self.padded_dims()).enumerate() {
            if k > p / 2 {
                return Err(CoreError::Config(format!(
                    "k_max {k} exceeds Nyquist {} on axis {a}",
                    p / 2
                )));
            }
        }
        Ok(())
    }

    /// Half-space enumeration of retained modes. The last axis runs over
    /// non-negative frequencies only; conjugate partners are reconstructed.
    pub(crate) fn modes(&self) -> Vec<ModeEntry> {
        let p = self.padded_dims();
        let rank = p.len();
        // Work in 3 axes; missing leading axes are size-1.
        let pad3 = |v: &[usize], fill: usize| -> [usize; 3] {
            let mut out = [fill; 3];
            for (i, &x) in v.iter().enumerate() {
                out[3 - rank + i] = x;
            }
            out
        };
        let p3 = pad3(&p, 1);
        let k3 = pad3(&self.k_max, 0);

        let full_axis = |pp: usize, kk: usize| -> Vec<usize> {
            let mut v: Vec<usize> = (0..=kk.min(pp / 2)).collect();
            for idx in (pp.saturating_sub(kk))..pp {
                if !v.contains(&idx) {
                    v.push(idx);
                }
            }
            v
        };
        let half_axis = |pp: usize, kk: usize| -> Vec<usize> { (0..=kk.min(pp / 2)).collect() };
        let is_self = |idx: usize, pp: usize| -> bool { idx == 0 || 2 * idx == pp };

        let mut out = Vec::new();
        for &kz in &half_axis(p3[2], k3[2]) {
            let z_self = is_self(kz, p3[2]);
            let ky_list = if z_self {
                half_axis(p3[1], k3[1])
            } else {
                full_axis(p3[1], k3[1])
            };
            for &ky in &ky_list {
                let y_self = is_self(ky, p3[1]);
                let kx_list = if z_self && y_self {
                    half_axis(p3[0], k3[0])
                } else {
                    full_axis(p3[0], k3[0])
                };
                for &kx in &kx_list {
                    let x_self = is_self(kx, p3[0]);
                    let conj = [
                        if kx == 0 { 0 } else { p3[0] - kx },
                        if ky == 0 { 0 } else { p3[1] - ky },
                        if kz == 0 { 0 } else { p3[2] - kz },
                    ];
                    out.push(ModeEntry {
                        idx: [kx, ky, kz],
                        conj_idx: conj,
                        self_conj: z_self && y_self && x_self,
                    });
                }
            }
        }
        out
    }

    pub fn n_modes(&self) -> usize {
        self.modes().len()
    }

    /// Shape of the weight tensor: (n_modes, d_v, d_v, 2), last axis (re, im).
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.n_modes(), self.channels, self.channels, 2]
    }
}

#[derive(Debug, Clone)]
#[allow(dead_code)] // offsets and detach parents are recorded for Debug dumps
enum Op {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Hadamard(ValueId, ValueId),
    /// a * x + b elementwise.
    Affine(ValueId, f64, f64),
    Recip(ValueId),
    PowConst(ValueId, f64),
    MatMul(ValueId, ValueId),
    Activation(ValueId, Activation),
    ReduceSum(ValueId),
    Reshape(ValueId),
    ConcatChannels(Vec<ValueId>),
    SliceChannels(ValueId, usize, usize),
    /// Shift along `axis` by `offset`, zero fill.
    Shift(ValueId, usize, isize),
    SpectralConv(ValueId, ValueId, SpectralSpec),
    SimplexProject(ValueId),
    StopGradient(ValueId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// One forward pass's computation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients for every node of a tape, indexed by [`ValueId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        self.nodes.push(Node { op, value });
        ValueId(self.nodes.len() - 1)
    }

    /// Registers an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn shape_of(&self, id: ValueId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn check_same_shape(&self, ctx: &str, a: ValueId, b: ValueId) -> Result<()> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(CoreError::Config(format!(
                "{ctx}: operand shapes {:?} and {:?} differ",
                self.shape_of(a),
                self.shape_of(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape_of(a).to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.shape_of(a).to_vec(), data)?;
        Ok(self.push(Op::Sub(a, b), t))
    }

    pub fn hadamard(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("hadamard", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape_of(a).to_vec(), data)?;
        Ok(self.push(Op::Hadamard(a, b), t))
    }

    /// Elementwise a * x + b.
    pub fn affine(&mut self, x: ValueId, a: f64, b: f64) -> Result<ValueId> {
        let t = self.value(x).map(|v| a * v + b);
        Ok(self.push(Op::Affine(x, a, b), t))
    }

    pub fn scale(&mut self, x: ValueId, a: f64) -> Result<ValueId> {
        self.affine(x, a, 0.0)
    }

    pub fn recip(&mut self, x: ValueId) -> Result<ValueId> {
        let t = self.value(x).map(|v| 1.0 / v);
        Ok(self.push(Op::Recip(x), t))
    }

    pub fn pow_const(&mut self, x: ValueId, n: f64) -> Result<ValueId> {
        let t = self.value(x).map(|v| v.powf(n));
        Ok(self.push(Op::PowConst(x, n), t))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let sa = self.shape_of(a).to_vec();
        let sb = self.shape_of(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(CoreError::Config(format!(
                "matmul: incompatible shapes {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let da = self.value(a).data();
        let db = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for kk in 0..k {
                let aik = da[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                let row = &db[kk * n..(kk + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &bv) in dst.iter_mut().zip(row) {
                    *d += aik * bv;
                }
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), t))
    }

    pub fn activation(&mut self, x: ValueId, kind: Activation) -> Result<ValueId> {
        let t = self.value(x).map(|v| kind.eval(v));
        Ok(self.push(Op::Activation(x, kind), t))
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        self.activation(x, Activation::Relu)
    }

    pub fn reduce_sum(&mut self, x: ValueId) -> Result<ValueId> {
        let s: f64 = self.value(x).data().iter().sum();
        Ok(self.push(Op::ReduceSum(x), Tensor::scalar(s)))
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), t))
    }

    /// Concatenates along axis 0; trailing shapes must agree.
    pub fn concat_channels(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(CoreError::Config("concat_channels of nothing".into()));
        }
        let tail = self.shape_of(parts[0])[1..].to_vec();
        let mut c_total = 0;
        for &p in parts {
            let s = self.shape_of(p);
            if s[1..] != tail[..] {
                return Err(CoreError::Config(format!(
                    "concat_channels: trailing shape {:?} vs {:?}",
                    &s[1..],
                    tail
                )));
            }
            c_total += s[0];
        }
        let mut shape = vec![c_total];
        shape.extend_from_slice(&tail);
        let mut data = Vec::with_capacity(shape.iter().product());
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(shape, data)?;
        Ok(self.push(Op::ConcatChannels(parts.to_vec()), t))
    }

    /// Slices channels [start, end) along axis 0.
    pub fn slice_channels(&mut self, x: ValueId, start: usize, end: usize) -> Result<ValueId> {
        let s = self.shape_of(x).to_vec();
        if start >= end || end > s[0] {
            return Err(CoreError::Config(format!(
                "slice_channels [{start}, {end}) out of {}",
                s[0]
            )));
        }
        let block: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * block..end * block].to_vec();
        let mut shape = vec![end - start];
        shape.extend_from_slice(&s[1..]);
        let t = Tensor::new(shape, data)?;
        Ok(self.push(Op::SliceChannels(x, start, end), t))
    }

    /// Shifts along `axis` by `offset` cells, filling vacated entries with 0.
    pub fn shift(&mut self, x: ValueId, axis: usize, offset: isize) -> Result<ValueId> {
        let shape = self.shape_of(x).to_vec();
        if axis >= shape.len() {
            return Err(CoreError::Config(format!(
                "shift axis {axis} out of rank {}",
                shape.len()
            )));
        }
        let t = shift_tensor(self.value(x), axis, offset);
        Ok(self.push(Op::Shift(x, axis, offset), t))
    }

    pub fn stop_gradient(&mut self, x: ValueId) -> Result<ValueId> {
        let t = self.value(x).clone();
        Ok(self.push(Op::StopGradient(x), t))
    }

    /// Spectral convolution: transform, multiply retained modes by complex
    /// d_v x d_v matrices, zero the rest, transform back. Linear in the input.
    pub fn spectral_conv(
        &mut self,
        input: ValueId,
        weights: ValueId,
        spec: &SpectralSpec,
    ) -> Result<ValueId> {
        spec.validate()?;
        let in_shape = self.shape_of(input).to_vec();
        let mut expect = vec![spec.channels];
        expect.extend_from_slice(&spec.grid_dims);
        if in_shape != expect {
            return Err(CoreError::Config(format!(
                "spectral_conv input shape {in_shape:?}, expected {expect:?}"
            )));
        }
        let wshape = self.shape_of(weights).to_vec();
        if wshape != spec.weight_shape() {
            return Err(CoreError::Config(format!(
                "spectral_conv weight shape {wshape:?}, expected {:?}",
                spec.weight_shape()
            )));
        }
        let out = spectral_conv_forward(self.value(input), self.value(weights), spec)?;
        Ok(self.push(Op::SpectralConv(input, weights, spec.clone()), out))
    }

    /// Clip-rescale simplex projection of a (3, ...) tensor along axis 0,
    /// with a uniform 1/3 fallback when all three channels clip to zero.
    pub fn simplex_project(&mut self, x: ValueId) -> Result<ValueId> {
        let s = self.shape_of(x);
        if s[0] != 3 {
            return Err(CoreError::Config(format!(
                "simplex_project expects 3 channels, got {}",
                s[0]
            )));
        }
        let t = simplex_forward(self.value(x));
        Ok(self.push(Op::SimplexProject(x), t))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every node;
    /// stop-gradient nodes contribute exactly zero to their parents.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(CoreError::Config(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|v| -v));
                }
                Op::Hadamard(a, b) => {
                    let ga = elementwise_mul(&g, self.value(*b));
                    let gb = elementwise_mul(&g, self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Affine(a, scale, _) => {
                    let s = *scale;
                    accumulate(&mut grads, *a, g.map(|v| s * v));
                }
                Op::Recip(a) => {
                    let x = self.value(*a);
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| -gv / (xv * xv))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::PowConst(a, n) => {
                    let x = self.value(*a);
                    let nn = *n;
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| gv * nn * xv.powf(nn - 1.0))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::MatMul(a, b) => {
                    let sa = self.shape_of(*a).to_vec();
                    let sb = self.shape_of(*b).to_vec();
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let da = self.value(*a).data();
                    let db = self.value(*b).data();
                    let dg = g.data();
                    // dA = g B^T
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += dg[i * n + j] * db[kk * n + j];
                            }
                            ga[i * k + kk] = acc;
                        }
                    }
                    // dB = A^T g
                    let mut gb = vec![0.0; k * n];
                    for kk in 0..k {
                        for i in 0..m {
                            let aik = da[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[kk * n + j] += aik * dg[i * n + j];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![m, k], ga)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![k, n], gb)?);
                }
                Op::Activation(a, kind) => {
                    let x = self.value(*a);
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| gv * kind.derivative(*xv))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::ReduceSum(a) => {
                    let gs = g.item()?;
                    accumulate(&mut grads, *a, Tensor::full(self.shape_of(*a), gs));
                }
                Op::Reshape(a) => {
                    accumulate(&mut grads, *a, g.reshaped(self.shape_of(*a).to_vec())?);
                }
                Op::ConcatChannels(parts) => {
                    let tail: usize = self.shape_of(ValueId(idx))[1..].iter().product();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.shape_of(p)[0];
                        let chunk = g.data()[offset * tail..(offset + c) * tail].to_vec();
                        accumulate(
                            &mut grads,
                            p,
                            Tensor::new(self.shape_of(p).to_vec(), chunk)?,
                        );
                        offset += c;
                    }
                }
                Op::SliceChannels(a, start, end) => {
                    let s = self.shape_of(*a).to_vec();
                    let block: usize = s[1..].iter().product();
                    let mut data = vec![0.0; s.iter().product()];
                    data[start * block..end * block].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, Tensor::new(s, data)?);
                }
                Op::Shift(a, axis, offset) => {
                    accumulate(&mut grads, *a, shift_tensor(&g, *axis, -offset));
                }
                Op::SpectralConv(input, weights, spec) => {
                    let (g_in, g_w) = spectral_conv_backward(
                        &g,
                        self.value(*input),
                        self.value(*weights),
                        spec,
                    )?;
                    accumulate(&mut grads, *input, g_in);
                    accumulate(&mut grads, *weights, g_w);
                }
                Op::SimplexProject(a) => {
                    let gx = simplex_backward(&g, self.value(*a));
                    accumulate(&mut grads, *a, gx);
                }
                Op::StopGradient(_) => {}
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: ValueId, add: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, a) in existing.data_mut().iter_mut().zip(add.data()) {
                *e += a;
            }
        }
        slot => *slot = Some(add),
    }
}

fn elementwise_mul(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked at record time")
}

fn shift_tensor(x: &Tensor, axis: usize, offset: isize) -> Tensor {
    let shape = x.shape().to_vec();
    let len = shape[axis] as isize;
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; x.numel()];
    let src = x.data();
    for o in 0..outer {
        for k in 0..len {
            let from = k - offset;
            if from < 0 || from >= len {
                continue;
            }
            let dst_base = (o * len as usize + k as usize) * stride;
            let src_base = (o * len as usize + from as usize) * stride;
            out[dst_base..dst_base + stride].copy_from_slice(&src[src_base..src_base + stride]);
        }
    }
    Tensor::new(shape, out).expect("shift preserves shape")
}

const SIMPLEX_FALLBACK_EPS: f64 = 1e-300;

fn simplex_forward(x: &Tensor) -> Tensor {
    let n: usize = x.shape()[1..].iter().product();
    let d = x.data();
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let c = [d[i].max(0.0), d[n + i].max(0.0), d[2 * n + i].max(0.0)];
        let total = c[0] + c[1] + c[2];
        if total <= SIMPLEX_FALLBACK_EPS {
            out[i] = 1.0 / 3.0;
            out[n + i] = 1.0 / 3.0;
            out[2 * n + i] = 1.0 / 3.0;
        } else {
            out[i] = c[0] / total;
            out[n + i] = c[1] / total;
            out[2 * n + i] = c[2] / total;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

fn simplex_backward(g: &Tensor, x: &Tensor) -> Tensor {
    let n: usize = x.shape()[1..].iter().product();
    let d = x.data();
    let dg = g.data();
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let raw = [d[i], d[n + i], d[2 * n + i]];
        let c = [raw[0].max(0.0), raw[1].max(0.0), raw[2].max(0.0)];
        let total = c[0] + c[1] + c[2];
        if total <= SIMPLEX_FALLBACK_EPS {
            // Fallback branch is constant: zero gradient.
            continue;
        }
        let y = [c[0] / total, c[1] / total, c[2] / total];
        let gv = [dg[i], dg[n + i], dg[2 * n + i]];
        let gy_dot_y = gv[0] * y[0] + gv[1] * y[1] + gv[2] * y[2];
        for ch in 0..3 {
            // Clipped entries have zero subgradient.
            if raw[ch] > 0.0 {
                out[ch * n + i] = (gv[ch] - gy_dot_y) / total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

// --- Spectral convolution kernel -------------------------------------------

fn mirror_pad(v: &Tensor, spec: &SpectralSpec) -> Vec<f64> {
    let dims = &spec.grid_dims;
    let pd = spec.padded_dims();
    let c = spec.channels;
    let n_out: usize = pd.iter().product();
    let mut out = vec![0.0; c * n_out];
    let src = v.data();
    let n_in: usize = dims.iter().product();
    let rank = dims.len();
    let mut idx = vec![0usize; rank];
    for ch in 0..c {
        for flat_out in 0..n_out {
            let mut rem = flat_out;
            for a in (0..rank).rev() {
                idx[a] = rem % pd[a];
                rem /= pd[a];
            }
            let mut flat_in = 0;
            for a in 0..rank {
                let i = if idx[a] < dims[a] {
                    idx[a]
                } else {
                    2 * dims[a] - 1 - idx[a]
                };
                flat_in = flat_in * dims[a] + i;
            }
            out[ch * n_out + flat_out] = src[ch * n_in + flat_in];
        }
    }
    out
}

fn mirror_pad_adjoint(g_pad: &[f64], spec: &SpectralSpec) -> Tensor {
    let dims = &spec.grid_dims;
    let pd = spec.padded_dims();
    let c = spec.channels;
    let n_out: usize = pd.iter().product();
    let n_in: usize = dims.iter().product();
    let rank = dims.len();
    let mut out = vec![0.0; c * n_in];
    let mut idx = vec![0usize; rank];
    for ch in 0..c {
        for flat_out in 0..n_out {
            let mut rem = flat_out;
            for a in (0..rank).rev() {
                idx[a] = rem % pd[a];
                rem /= pd[a];
            }
            let mut flat_in = 0;
            for a in 0..rank {
                let i = if idx[a] < dims[a] {
                    idx[a]
                } else {
                    2 * dims[a] - 1 - idx[a]
                };
                flat_in = flat_in * dims[a] + i;
            }
            out[ch * n_in + flat_in] += g_pad[ch * n_out + flat_out];
        }
    }
    let mut shape = vec![c];
    shape.extend_from_slice(dims);
    Tensor::new(shape, out).expect("adjoint shape")
}

fn flat3(idx: [usize; 3], p3: [usize; 3]) -> usize {
    (idx[0] * p3[1] + idx[1]) * p3[2] + idx[2]
}

fn pack3(dims: &[usize]) -> [usize; 3] {
    let mut p3 = [1usize; 3];
    for (i, &d) in dims.iter().enumerate() {
        p3[3 - dims.len() + i] = d;
    }
    p3
}

fn spectral_conv_forward(v: &Tensor, w: &Tensor, spec: &SpectralSpec) -> Result<Tensor> {
    let c = spec.channels;
    let pd = spec.padded_dims();
    let p3 = pack3(&pd);
    let n_pad: usize = pd.iter().product();

    let padded = if spec.mirror_pad {
        mirror_pad(v, spec)
    } else {
        v.data().to_vec()
    };

    // Forward transform per channel.
    let mut vhat: Vec<Vec<Complex<f64>>> = Vec::with_capacity(c);
    for ch in 0..c {
        let mut buf: Vec<Complex<f64>> = padded[ch * n_pad..(ch + 1) * n_pad]
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .collect();
        fftn(&mut buf, &pd, true);
        vhat.push(buf);
    }

    // Multiply retained modes; scatter with conjugate completion.
    let modes = spec.modes();
    let wd = w.data();
    let mut what: Vec<Vec<Complex<f64>>> = vec![vec![Complex::new(0.0, 0.0); n_pad]; c];
    for (m, entry) in modes.iter().enumerate() {
        let k = flat3(entry.idx, p3);
        let kc = flat3(entry.conj_idx, p3);
        for row in 0..c {
            let mut acc = Complex::new(0.0, 0.0);
            for col in 0..c {
                let base = ((m * c + row) * c + col) * 2;
                let rw = Complex::new(wd[base], wd[base + 1]);
                acc += rw * vhat[col][k];
            }
            if entry.self_conj {
                what[row][k] = Complex::new(acc.re, 0.0);
            } else {
                what[row][k] = acc;
                what[row][kc] = acc.conj();
            }
        }
    }

    // Inverse transform, 1/N, real part, crop.
    let scale = 1.0 / n_pad as f64;
    let mut out_padded = vec![0.0; c * n_pad];
    for ch in 0..c {
        fftn(&mut what[ch], &pd, false);
        for (o, val) in out_padded[ch * n_pad..(ch + 1) * n_pad]
            .iter_mut()
            .zip(&what[ch])
        {
            *o = val.re * scale;
        }
    }

    if spec.mirror_pad {
        // Crop: take the leading block along each axis.
        let dims = &spec.grid_dims;
        let n_in: usize = dims.iter().product();
        let rank = dims.len();
        let mut out = vec![0.0; c * n_in];
        let mut idx = vec![0usize; rank];
        for ch in 0..c {
            for flat_in in 0..n_in {
                let mut rem = flat_in;
                for a in (0..rank).rev() {
                    idx[a] = rem % dims[a];
                    rem /= dims[a];
                }
                let mut flat_out = 0;
                for a in 0..rank {
                    flat_out = flat_out * pd[a] + idx[a];
                }
                out[ch * n_in + flat_in] = out_padded[ch * n_pad + flat_out];
            }
        }
        let mut shape = vec![c];
        shape.extend_from_slice(dims);
        Tensor::new(shape, out)
    } else {
        let mut shape = vec![c];
        shape.extend_from_slice(&spec.grid_dims);
        Tensor::new(shape, out_padded)
    }
}

fn spectral_conv_backward(
    g: &Tensor,
    v: &Tensor,
    w: &Tensor,
    spec: &SpectralSpec,
) -> Result<(Tensor, Tensor)> {
    let c = spec.channels;
    let pd = spec.padded_dims();
    let p3 = pack3(&pd);
    let n_pad: usize = pd.iter().product();
    let scale = 1.0 / n_pad as f64;

    // Crop adjoint: zero-extend the cotangent to the padded grid.
    let mut g_pad = vec![0.0; c * n_pad];
    if spec.mirror_pad {
        let dims = &spec.grid_dims;
        let n_in: usize = dims.iter().product();
        let rank = dims.len();
        let mut idx = vec![0usize; rank];
        for ch in 0..c {
            for flat_in in 0..n_in {
                let mut rem = flat_in;
                for a in (0..rank).rev() {
                    idx[a] = rem % dims[a];
                    rem /= dims[a];
                }
                let mut flat_out = 0;
                for a in 0..rank {
                    flat_out = flat_out * pd[a] + idx[a];
                }
                g_pad[ch * n_pad + flat_out] = g.data()[ch * n_in + flat_in];
            }
        }
    } else {
        g_pad.copy_from_slice(g.data());
    }

    // Adjoint of (1/N) * Re(IFFT(.)): ghat = (1/N) * FFT(g_pad).
    let mut ghat: Vec<Vec<Complex<f64>>> = Vec::with_capacity(c);
    for ch in 0..c {
        let mut buf: Vec<Complex<f64>> = g_pad[ch * n_pad..(ch + 1) * n_pad]
            .iter()
            .map(|&x| Complex::new(x * scale, 0.0))
            .collect();
        fftn(&mut buf, &pd, true);
        ghat.push(buf);
    }

    // Recompute vhat (the forward activations needed for weight gradients).
    let padded = if spec.mirror_pad {
        mirror_pad(v, spec)
    } else {
        v.data().to_vec()
    };
    let mut vhat: Vec<Vec<Complex<f64>>> = Vec::with_capacity(c);
    for ch in 0..c {
        let mut buf: Vec<Complex<f64>> = padded[ch * n_pad..(ch + 1) * n_pad]
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .collect();
        fftn(&mut buf, &pd, true);
        vhat.push(buf);
    }

    let modes = spec.modes();
    let wd = w.data();
    let mut gw = vec![0.0; w.numel()];
    // Cotangent wrt vhat gathers only at retained modes.
    let mut gvhat: Vec<Vec<Complex<f64>>> = vec![vec![Complex::new(0.0, 0.0); n_pad]; c];
    for (m, entry) in modes.iter().enumerate() {
        let k = flat3(entry.idx, p3);
        let kc = flat3(entry.conj_idx, p3);
        for row in 0..c {
            // Cotangent of u_row (the mode product output) under the real pairing.
            let gu = if entry.self_conj {
                Complex::new(ghat[row][k].re, 0.0)
            } else {
                ghat[row][k] + ghat[row][kc].conj()
            };
            for col in 0..c {
                let base = ((m * c + row) * c + col) * 2;
                let rw = Complex::new(wd[base], wd[base + 1]);
                // dL/dW[row,col] = gu * conj(vhat[col](k)).
                let gwc = gu * vhat[col][k].conj();
                gw[base] += gwc.re;
                gw[base + 1] += gwc.im;
                // dL/dvhat[col](k) += conj(W[row,col]) * gu.
                gvhat[col][k] += rw.conj() * gu;
            }
        }
    }

    // Adjoint of the unnormalized forward FFT: g_x = Re(unnormalized IFFT(gvhat)).
    let mut g_pad_in = vec![0.0; c * n_pad];
    for ch in 0..c {
        fftn(&mut gvhat[ch], &pd, false);
        for (o, val) in g_pad_in[ch * n_pad..(ch + 1) * n_pad]
            .iter_mut()
            .zip(&gvhat[ch])
        {
            *o = val.re;
        }
    }

    let g_in = if spec.mirror_pad {
        mirror_pad_adjoint(&g_pad_in, spec)
    } else {
        let mut shape = vec![c];
        shape.extend_from_slice(&spec.grid_dims);
        Tensor::new(shape, g_pad_in)?
    };
    let g_w = Tensor::new(w.shape().to_vec(), gw)?;
    Ok((g_in, g_w))
}

