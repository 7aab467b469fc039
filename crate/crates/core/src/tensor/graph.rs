use super::{gemm, numel, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    MulChannel(Var, Var),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Softmax { x: Var, axis: usize },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        cols: Vec<T>,
        geo: ConvGeometry,
    },
    GlobalAvgPool(Var),
    Resize(Var),
    Patchify { x: Var, patch: usize },
    PatchExpand { x: Var, patch: usize, height: usize, width: usize },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation tape. Every forward pass records onto a fresh graph; nodes are
/// appended in evaluation order, so inputs always precede their consumers.
pub struct Graph<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of one backward sweep: gradient of the swept scalar with respect
/// to every node that needed one.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, len: usize) -> &mut [T] {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

/// Bilinear sampling taps for one output coordinate (align-corners = false).
fn bilinear_taps(dst: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = if i0 + 1 < in_len { i0 + 1 } else { i0 };
    let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
    (i0, i1, frac)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// First element of a value; intended for scalar outputs.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("graph node shape is consistent")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a leaf holding a copy of `t`; it receives a gradient iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::shape("constant", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    /// Copies the value of `x` into a new leaf that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Leaf, false)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: fn(Var, Var) -> Op<T>,
    ) -> Result<Var> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.shape != nb.shape {
            return Err(Error::shape(op, &na.shape, &nb.shape));
        }
        let value = na
            .value
            .iter()
            .zip(&nb.value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = na.shape.clone();
        let ng = self.ng(&[a, b]);
        Ok(self.push(shape, value, make(a, b), ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let n = &self.nodes[x.0];
        let value = n.value.iter().map(|&v| f(v)).collect();
        let shape = n.shape.clone();
        let ng = n.needs_grad;
        self.push(shape, value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::MulScalar(x, c))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = &self.nodes[x.0];
        if numel(shape) != n.value.len() {
            return Err(Error::shape("reshape", &n.shape, shape));
        }
        let value = n.value.clone();
        let ng = n.needs_grad;
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let s: T = n.value.iter().copied().sum();
        let ng = n.needs_grad;
        self.push(vec![1], vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let s: T = n.value.iter().copied().sum();
        let m = s / T::of(n.value.len() as f64);
        let ng = n.needs_grad;
        self.push(vec![1], vec![m], Op::Mean(x), ng)
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            &self.nodes[a.0].value,
            false,
            &self.nodes[b.0].value,
            false,
            &mut out,
            false,
        );
        let ng = self.ng(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let n = &self.nodes[x.0];
        if n.shape.len() != 2 {
            return Err(Error::invalid(
                "transpose",
                format!("expected a matrix, got shape {:?}", n.shape),
            ));
        }
        let (r, c) = (n.shape[0], n.shape[1]);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = n.value[i * c + j];
            }
        }
        let ng = n.needs_grad;
        Ok(self.push(vec![c, r], out, Op::Transpose(x), ng))
    }

    /// Adds a row vector `b[n]` to every row of `a[m,n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(Error::shape("add_row", sa, sb));
        }
        let n = sa[1];
        let bv = &self.nodes[b.0].value;
        let value = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % n])
            .collect();
        let shape = sa.clone();
        let ng = self.ng(&[a, b]);
        Ok(self.push(shape, value, Op::AddRow(a, b), ng))
    }

    /// Scales each leading-axis slice `x[c, ..]` by `w[c]`.
    pub fn mul_channel(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (&self.nodes[x.0].shape, &self.nodes[w.0].shape);
        if sw.len() != 1 || sx.is_empty() || sx[0] != sw[0] {
            return Err(Error::shape("mul_channel", sx, sw));
        }
        let inner = numel(&sx[1..]);
        let wv = &self.nodes[w.0].value;
        let value = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| v * wv[i / inner])
            .collect();
        let shape = sx.clone();
        let ng = self.ng(&[x, w]);
        Ok(self.push(shape, value, Op::MulChannel(x, w), ng))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.nodes[first.0].shape.clone();
        if axis >= base.len() {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for shape {base:?}"),
            ));
        }
        let mut total = 0;
        for v in xs {
            let s = &self.nodes[v.0].shape;
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let n = &self.nodes[v.0];
                let chunk = n.shape[axis] * inner;
                out.extend_from_slice(&n.value[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = self.ng(xs);
        Ok(self.push(shape, out, Op::Concat(xs.to_vec(), axis), ng))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let n = &self.nodes[x.0];
        if axis >= n.shape.len() || len == 0 || start + len > n.shape[axis] {
            return Err(Error::invalid(
                "narrow",
                format!(
                    "cannot take [{start}, {}) along axis {axis} of shape {:?}",
                    start + len,
                    n.shape
                ),
            ));
        }
        let (outer, dim, inner) = split_axis(&n.shape, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&n.value[base..base + len * inner]);
        }
        let mut shape = n.shape.clone();
        shape[axis] = len;
        let ng = n.needs_grad;
        Ok(self.push(shape, out, Op::Narrow { x, axis, start }, ng))
    }

    /// Numerically stable softmax along `axis` (max subtracted first).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = &self.nodes[x.0];
        if axis >= n.shape.len() {
            return Err(Error::invalid(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", n.shape),
            ));
        }
        let (outer, dim, inner) = split_axis(&n.shape, axis);
        let mut out = vec![T::zero(); n.value.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * dim * inner + j * inner + i;
                let max = (0..dim)
                    .map(|j| n.value[at(j)])
                    .fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..dim {
                    let e = (n.value[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..dim {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let shape = n.shape.clone();
        let ng = n.needs_grad;
        Ok(self.push(shape, out, Op::Softmax { x, axis }, ng))
    }

    /// 2-D cross-correlation of `x[C_in,H,W]` with `w[C_out,C_in,k,k]`,
    /// optional bias `b[C_out]`, square stride and zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw) = (&self.nodes[x.0].shape, &self.nodes[w.0].shape);
        if sx.len() != 3 || sw.len() != 4 || sw[2] != sw[3] {
            return Err(Error::shape("conv2d", sx, sw));
        }
        if sx[0] != sw[1] {
            return Err(Error::shape("conv2d", sx, sw));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let (c_in, h, wd) = (sx[0], sx[1], sx[2]);
        let (c_out, k) = (sw[0], sw[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape("conv2d", sx, sw));
        }
        if let Some(b) = b {
            let sb = &self.nodes[b.0].shape;
            if sb.as_slice() != [c_out] {
                return Err(Error::shape("conv2d bias", sw, sb));
            }
        }
        let geo = ConvGeometry {
            c_in,
            h,
            w: wd,
            c_out,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (wd + 2 * pad - k) / stride + 1,
        };
        let cols = im2col(&self.nodes[x.0].value, &geo);
        let l = geo.oh * geo.ow;
        let mut out = vec![T::zero(); c_out * l];
        gemm(
            c_out,
            c_in * k * k,
            l,
            &self.nodes[w.0].value,
            false,
            &cols,
            false,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bv = &self.nodes[b.0].value;
            for (o, chunk) in out.chunks_mut(l).enumerate() {
                chunk.iter_mut().for_each(|v| *v += bv[o]);
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        Ok(self.push(
            vec![c_out, geo.oh, geo.ow],
            out,
            Op::Conv2d { x, w, b, cols, geo },
            ng,
        ))
    }

    /// `x[C,H,W] -> [C]`, the per-channel spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let n = &self.nodes[x.0];
        if n.shape.len() != 3 {
            return Err(Error::invalid(
                "global_avg_pool",
                format!("expected [C,H,W], got {:?}", n.shape),
            ));
        }
        let c = n.shape[0];
        let hw = n.shape[1] * n.shape[2];
        let denom = T::of(hw as f64);
        let out = n
            .value
            .chunks(hw)
            .map(|ch| ch.iter().copied().sum::<T>() / denom)
            .collect();
        let ng = n.needs_grad;
        Ok(self.push(vec![c], out, Op::GlobalAvgPool(x), ng))
    }

    /// Bilinear resize of `x[C,H,W]` to `[C,out_h,out_w]`, align-corners off.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let n = &self.nodes[x.0];
        if n.shape.len() != 3 || out_h == 0 || out_w == 0 {
            return Err(Error::invalid(
                "resize_bilinear",
                format!("cannot resize {:?} to {out_h}x{out_w}", n.shape),
            ));
        }
        let (c, h, w) = (n.shape[0], n.shape[1], n.shape[2]);
        let mut out = vec![T::zero(); c * out_h * out_w];
        let xs: Vec<_> = (0..out_w).map(|x| bilinear_taps(x, out_w, w)).collect();
        for ch in 0..c {
            let src = &n.value[ch * h * w..(ch + 1) * h * w];
            for oy in 0..out_h {
                let (y0, y1, fy) = bilinear_taps(oy, out_h, h);
                let fy = T::of(fy);
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let fx = T::of(fx);
                    let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                    out[(ch * out_h + oy) * out_w + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
        let ng = n.needs_grad;
        Ok(self.push(vec![c, out_h, out_w], out, Op::Resize(x), ng))
    }

    /// Splits `x[C,H,W]` into non-overlapping `patch×patch` tokens:
    /// `[N, C·patch·patch]` with tokens in row-major grid order.
    pub fn patchify(&mut self, x: Var, patch: usize) -> Result<Var> {
        let n = &self.nodes[x.0];
        if n.shape.len() != 3 || patch == 0 || n.shape[1] % patch != 0 || n.shape[2] % patch != 0
        {
            return Err(Error::invalid(
                "patchify",
                format!("shape {:?} is not divisible into {patch}x{patch} patches", n.shape),
            ));
        }
        let (c, h, w) = (n.shape[0], n.shape[1], n.shape[2]);
        let (gh, gw) = (h / patch, w / patch);
        let d = c * patch * patch;
        let mut out = vec![T::zero(); gh * gw * d];
        for_each_patch_index(c, h, w, patch, |token, feat, src| {
            out[token * d + feat] = n.value[src];
        });
        let ng = n.needs_grad;
        Ok(self.push(vec![gh * gw, d], out, Op::Patchify { x, patch }, ng))
    }

    /// Broadcasts token values `x[N]` to every pixel of their patch, giving
    /// a flat `[height·width]` map.
    pub fn patch_expand(
        &mut self,
        x: Var,
        height: usize,
        width: usize,
        patch: usize,
    ) -> Result<Var> {
        let n = &self.nodes[x.0];
        if patch == 0 || height % patch != 0 || width % patch != 0 {
            return Err(Error::invalid(
                "patch_expand",
                format!("{height}x{width} is not divisible into {patch}x{patch} patches"),
            ));
        }
        let gw = width / patch;
        let tokens = (height / patch) * gw;
        if n.shape.len() != 1 || n.shape[0] != tokens {
            return Err(Error::shape("patch_expand", &n.shape, &[tokens]));
        }
        let out = (0..height * width)
            .map(|i| n.value[(i / width / patch) * gw + (i % width) / patch])
            .collect();
        let ng = n.needs_grad;
        Ok(self.push(
            vec![height * width],
            out,
            Op::PatchExpand {
                x,
                patch,
                height,
                width,
            },
            ng,
        ))
    }

    /// Reverse sweep from the scalar `out`.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[out.0];
        if root.value.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("output must be scalar, got shape {:?}", root.shape),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![T::one()]);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(idx);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            self.propagate(node, g, lower);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], lower: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].needs_grad;
        let val = |v: Var| nodes[v.0].value.as_slice();
        let len = |v: Var| nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if wants(*a) {
                    let s = accumulate(&mut lower[a.0], len(*a));
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
                }
                if wants(*b) {
                    let s = accumulate(&mut lower[b.0], len(*b));
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += sign * g);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = val(*b);
                    let s = accumulate(&mut lower[a.0], len(*a));
                    for i in 0..g.len() {
                        s[i] += g[i] * bv[i];
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    let s = accumulate(&mut lower[b.0], len(*b));
                    for i in 0..g.len() {
                        s[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let s = accumulate(&mut lower[x.0], len(*x));
                s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
            }
            Op::MulScalar(x, c) => {
                let s = accumulate(&mut lower[x.0], len(*x));
                s.iter_mut().zip(g).for_each(|(s, &g)| *s += g * *c);
            }
            Op::Exp(x) => {
                let s = accumulate(&mut lower[x.0], len(*x));
                for i in 0..g.len() {
                    s[i] += g[i] * node.value[i];
                }
            }
            Op::Log(x) => {
                let xv = val(*x);
                let s = accumulate(&mut lower[x.0], len(*x));
                for i in 0..g.len() {
                    s[i] += g[i] / xv[i];
                }
            }
            Op::Abs(x) => {
                let xv = val(*x);
                let s = accumulate(&mut lower[x.0], len(*x));
                for i in 0..g.len() {
                    let sign = if xv[i] > T::zero() {
                        T::one()
                    } else if xv[i] < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    s[i] += g[i] * sign;
                }
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let s = accumulate(&mut lower[x.0], len(*x));
                for i in 0..g.len() {
                    if xv[i] > T::zero() {
                        s[i] += g[i];
                    }
                }
            }
            Op::Sigmoid(x) => {
                let s = accumulate(&mut lower[x.0], len(*x));
                for i in 0..g.len() {
                    let y = node.value[i];
                    s[i] += g[i] * y * (T::one() - y);
                }
            }
            Op::Tanh(x) => {
                let s = accumulate(&mut lower[x.0], len(*x));
                for i in 0..g.len() {
                    let y = node.value[i];
                    s[i] += g[i] * (T::one() - y * y);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if wants(*a) {
                    let bv = val(*b);
                    let s = accumulate(&mut lower[a.0], m * k);
                    gemm(m, n, k, g, false, bv, true, s, true);
                }
                if wants(*b) {
                    let av = val(*a);
                    let s = accumulate(&mut lower[b.0], k * n);
                    gemm(k, m, n, av, true, g, false, s, true);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                let s = accumulate(&mut lower[x.0], r * c);
                for i in 0..r {
                    for j in 0..c {
                        s[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::AddRow(a, b) => {
                let n = nodes[b.0].value.len();
                if wants(*a) {
                    let s = accumulate(&mut lower[a.0], len(*a));
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
                }
                if wants(*b) {
                    let s = accumulate(&mut lower[b.0], n);
                    for (i, &gv) in g.iter().enumerate() {
                        s[i % n] += gv;
                    }
                }
            }
            Op::MulChannel(x, w) => {
                let c = nodes[w.0].value.len();
                let inner = g.len() / c;
                if wants(*x) {
                    let wv = val(*w);
                    let s = accumulate(&mut lower[x.0], len(*x));
                    for i in 0..g.len() {
                        s[i] += g[i] * wv[i / inner];
                    }
                }
                if wants(*w) {
                    let xv = val(*x);
                    let s = accumulate(&mut lower[w.0], c);
                    for i in 0..g.len() {
                        s[i / inner] += g[i] * xv[i];
                    }
                }
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for v in xs {
                    let d = nodes[v.0].shape[*axis];
                    if wants(*v) {
                        let s = accumulate(&mut lower[v.0], len(*v));
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + d) * inner];
                            let dst = &mut s[o * d * inner..(o + 1) * d * inner];
                            dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                        }
                    }
                    offset += d;
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, dim, inner) = split_axis(&nodes[x.0].shape, *axis);
                let n = node.shape[*axis];
                let s = accumulate(&mut lower[x.0], len(*x));
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    let dst = &mut s[base..base + n * inner];
                    let src = &g[o * n * inner..(o + 1) * n * inner];
                    dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                }
            }
            Op::Sum(x) => {
                let s = accumulate(&mut lower[x.0], len(*x));
                s.iter_mut().for_each(|s| *s += g[0]);
            }
            Op::Mean(x) => {
                let n = len(*x);
                let gv = g[0] / T::of(n as f64);
                let s = accumulate(&mut lower[x.0], n);
                s.iter_mut().for_each(|s| *s += gv);
            }
            Op::Softmax { x, axis } => {
                let (outer, dim, inner) = split_axis(&node.shape, *axis);
                let y = &node.value;
                let s = accumulate(&mut lower[x.0], y.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * dim * inner + j * inner + i;
                        let dot: T = (0..dim).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..dim {
                            s[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, cols, geo } => {
                let l = geo.oh * geo.ow;
                let kk = geo.c_in * geo.k * geo.k;
                if wants(*w) {
                    let s = accumulate(&mut lower[w.0], geo.c_out * kk);
                    gemm(geo.c_out, l, kk, g, false, cols, true, s, true);
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let s = accumulate(&mut lower[b.0], geo.c_out);
                        for (o, chunk) in g.chunks(l).enumerate() {
                            s[o] += chunk.iter().copied().sum::<T>();
                        }
                    }
                }
                if wants(*x) {
                    let mut dcols = vec![T::zero(); kk * l];
                    gemm(kk, geo.c_out, l, val(*w), true, g, false, &mut dcols, false);
                    let s = accumulate(&mut lower[x.0], geo.c_in * geo.h * geo.w);
                    col2im_add(&dcols, geo, s);
                }
            }
            Op::GlobalAvgPool(x) => {
                let hw = len(*x) / node.value.len();
                let denom = T::of(hw as f64);
                let s = accumulate(&mut lower[x.0], len(*x));
                for (i, v) in s.iter_mut().enumerate() {
                    *v += g[i / hw] / denom;
                }
            }
            Op::Resize(x) => {
                let (c, h, w) = (nodes[x.0].shape[0], nodes[x.0].shape[1], nodes[x.0].shape[2]);
                let (oh, ow) = (node.shape[1], node.shape[2]);
                let xs: Vec<_> = (0..ow).map(|x| bilinear_taps(x, ow, w)).collect();
                let s = accumulate(&mut lower[x.0], c * h * w);
                for ch in 0..c {
                    let dst = &mut s[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..oh {
                        let (y0, y1, fy) = bilinear_taps(oy, oh, h);
                        let fy = T::of(fy);
                        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                            let fx = T::of(fx);
                            let gv = g[(ch * oh + oy) * ow + ox];
                            let top = gv * (T::one() - fy);
                            let bot = gv * fy;
                            dst[y0 * w + x0] += top * (T::one() - fx);
                            dst[y0 * w + x1] += top * fx;
                            dst[y1 * w + x0] += bot * (T::one() - fx);
                            dst[y1 * w + x1] += bot * fx;
                        }
                    }
                }
            }
            Op::Patchify { x, patch } => {
                let (c, h, w) = (nodes[x.0].shape[0], nodes[x.0].shape[1], nodes[x.0].shape[2]);
                let d = node.shape[1];
                let s = accumulate(&mut lower[x.0], c * h * w);
                for_each_patch_index(c, h, w, *patch, |token, feat, src| {
                    s[src] += g[token * d + feat];
                });
            }
            Op::PatchExpand {
                x,
                patch,
                height,
                width,
            } => {
                let gw = width / patch;
                let s = accumulate(&mut lower[x.0], len(*x));
                for i in 0..height * width {
                    s[(i / width / patch) * gw + (i % width) / patch] += g[i];
                }
            }
        }
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn for_each_patch_index(
    c: usize,
    h: usize,
    w: usize,
    patch: usize,
    mut f: impl FnMut(usize, usize, usize),
) {
    let gw = w / patch;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let token = (y / patch) * gw + x / patch;
                let feat = (ch * patch + y % patch) * patch + x % patch;
                f(token, feat, (ch * h + y) * w + x);
            }
        }
    }
}

fn im2col<T: Real>(x: &[T], geo: &ConvGeometry) -> Vec<T> {
    let l = geo.oh * geo.ow;
    let mut cols = vec![T::zero(); geo.c_in * geo.k * geo.k * l];
    for c in 0..geo.c_in {
        let plane = &x[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ky in 0..geo.k {
            for kx in 0..geo.k {
                let row = ((c * geo.k + ky) * geo.k + kx) * l;
                for oy in 0..geo.oh {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    if iy < 0 || iy >= geo.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * geo.w..(iy as usize + 1) * geo.w];
                    let dst = &mut cols[row + oy * geo.ow..row + (oy + 1) * geo.ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                        if ix >= 0 && ix < geo.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(cols: &[T], geo: &ConvGeometry, dx: &mut [T]) {
    let l = geo.oh * geo.ow;
    for c in 0..geo.c_in {
        let plane = &mut dx[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ky in 0..geo.k {
            for kx in 0..geo.k {
                let row = ((c * geo.k + ky) * geo.k + kx) * l;
                for oy in 0..geo.oh {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    if iy < 0 || iy >= geo.h as isize {
                        continue;
                    }
                    for ox in 0..geo.ow {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                        if ix >= 0 && ix < geo.w as isize {
                            plane[iy as usize * geo.w + ix as usize] += cols[row + oy * geo.ow + ox];
                        }
                    }
                }
            }
        }
    }
}
