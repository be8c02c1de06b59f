//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and (when any
//! input requires gradients) a backward step. Node ids grow in execution
//! order, so walking ids in reverse is a valid reverse topological order
//! and each node is visited exactly once during backward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{gemm_2d, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackFn<F> = Box<dyn Fn(&[Node<F>], &Tensor<F>) -> Vec<(Var, Tensor<F>)> + Send + Sync>;

struct Node<F: Scalar> {
    value: Tensor<F>,
    needs_grad: bool,
    back: Option<BackFn<F>>,
}

/// Gradients produced by [`Tape::backward`]. Vars that did not influence
/// the loss have no entry; callers treat that as an all-zero gradient.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Gradient for `v`, or zeros of `shape` if it was not on any path.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor<F> {
        self.take(v).unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn debug_check_finite<F: Scalar>(op: &'static str, t: &Tensor<F>) {
    if cfg!(debug_assertions) {
        debug_assert!(t.all_finite(), "{op} produced a non-finite value");
    }
}

/// Iterate lanes along `axis`: calls `f(start_offset)` for each lane; the
/// lane's elements sit at `start + i * inner` for i in 0..shape[axis].
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize)) {
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let axis_len = shape[axis];
    for o in 0..outer {
        let base = o * axis_len * inner;
        for i in 0..inner {
            f(base + i, inner);
        }
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, false, None)
    }

    /// Leaf parameter: receives gradients during backward.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, true, None)
    }

    fn push(&mut self, value: Tensor<F>, needs_grad: bool, back: Option<BackFn<F>>) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            back,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(
        &mut self,
        op: &'static str,
        value: Tensor<F>,
        inputs: &[Var],
        back: BackFn<F>,
    ) -> Var {
        debug_check_finite(op, &value);
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(value, needs_grad, needs_grad.then_some(back))
    }

    // ---- primitives -------------------------------------------------------

    /// C = A·B for 2-D operands (m×k)·(k×n).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(vec![m, n]);
        gemm_2d(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            out.data_mut(),
        );
        Ok(self.push_op(
            "matmul",
            out,
            &[a, b],
            Box::new(move |nodes, g| {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                let mut da = Tensor::zeros(vec![m, k]);
                gemm_2d(m, n, k, g.data(), false, bv.data(), true, da.data_mut());
                let mut db = Tensor::zeros(vec![k, n]);
                gemm_2d(k, m, n, av.data(), true, g.data(), false, db.data_mut());
                vec![(a, da), (b, db)]
            }),
        ))
    }

    /// C = A·Bᵀ with B stored (n×k); avoids materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::ShapeMismatch {
                op: "matmul_bt",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = Tensor::zeros(vec![m, n]);
        gemm_2d(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            true,
            out.data_mut(),
        );
        Ok(self.push_op(
            "matmul_bt",
            out,
            &[a, b],
            Box::new(move |nodes, g| {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                // dA = g·B, dB = gᵀ·A
                let mut da = Tensor::zeros(vec![m, k]);
                gemm_2d(m, n, k, g.data(), false, bv.data(), false, da.data_mut());
                let mut db = Tensor::zeros(vec![n, k]);
                gemm_2d(n, m, k, g.data(), true, av.data(), false, db.data_mut());
                vec![(a, da), (b, db)]
            }),
        ))
    }

    /// Batched matmul for 3-D operands (b×m×k)·(b×k×n).
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::ShapeMismatch {
                op: "bmm",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (nb, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = Tensor::zeros(vec![nb, m, n]);
        for i in 0..nb {
            gemm_2d(
                m,
                k,
                n,
                &self.value(a).data()[i * m * k..(i + 1) * m * k],
                false,
                &self.value(b).data()[i * k * n..(i + 1) * k * n],
                false,
                &mut out.data_mut()[i * m * n..(i + 1) * m * n],
            );
        }
        Ok(self.push_op(
            "bmm",
            out,
            &[a, b],
            Box::new(move |nodes, g| {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                let mut da = Tensor::zeros(vec![nb, m, k]);
                let mut db = Tensor::zeros(vec![nb, k, n]);
                for i in 0..nb {
                    gemm_2d(
                        m,
                        n,
                        k,
                        &g.data()[i * m * n..(i + 1) * m * n],
                        false,
                        &bv.data()[i * k * n..(i + 1) * k * n],
                        true,
                        &mut da.data_mut()[i * m * k..(i + 1) * m * k],
                    );
                    gemm_2d(
                        k,
                        m,
                        n,
                        &av.data()[i * m * k..(i + 1) * m * k],
                        true,
                        &g.data()[i * m * n..(i + 1) * m * n],
                        false,
                        &mut db.data_mut()[i * k * n..(i + 1) * k * n],
                    );
                }
                vec![(a, da), (b, db)]
            }),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        Ok(self.push_op(
            "add",
            out,
            &[a, b],
            Box::new(move |_, g| vec![(a, g.clone()), (b, g.clone())]),
        ))
    }

    /// x + bias where bias is a 1-D [n] vector broadcast over leading axes.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(bias).shape());
        if sb.len() != 1 || *sx.last().unwrap() != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let n = sb[0];
        let mut out = self.value(x).clone();
        {
            let bdata = self.nodes[bias.0].value.data().to_vec();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += bdata[i % n];
            }
        }
        Ok(self.push_op(
            "add_bias",
            out,
            &[x, bias],
            Box::new(move |_, g| {
                let mut db = Tensor::zeros(vec![n]);
                for (i, &gv) in g.data().iter().enumerate() {
                    db.data_mut()[i % n] += gv;
                }
                vec![(x, g.clone()), (bias, db)]
            }),
        ))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let c = F::from_f64(factor);
        let out = self.value(x).map(|v| v * c);
        self.push_op(
            "scale",
            out,
            &[x],
            Box::new(move |_, g| vec![(x, g.map(|v| v * c))]),
        )
    }

    /// Swap two axes.
    pub fn transpose(&mut self, x: Var, ax0: usize, ax1: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if ax0 >= shape.len() || ax1 >= shape.len() {
            return Err(Error::InvalidShape {
                op: "transpose",
                msg: format!("axes ({ax0},{ax1}) out of range for shape {shape:?}"),
            });
        }
        let out = transpose_tensor(self.value(x), ax0, ax1);
        Ok(self.push_op(
            "transpose",
            out,
            &[x],
            Box::new(move |_, g| vec![(x, transpose_tensor(g, ax0, ax1))]),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let old = self.value(x).shape().to_vec();
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push_op(
            "reshape",
            out,
            &[x],
            Box::new(move |_, g| vec![(x, g.clone().reshaped(old.clone()).unwrap())]),
        ))
    }

    /// Row gather from a 2-D table: used for embedding lookup and for
    /// selecting masked positions out of a hidden-state matrix.
    pub fn gather_rows(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let shape = self.value(table).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                msg: format!("table must be 2-D, got {shape:?}"),
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                msg: format!("row id {bad} out of range for table with {rows} rows"),
            });
        }
        let mut out = Tensor::zeros(vec![ids.len(), cols]);
        for (r, &id) in ids.iter().enumerate() {
            out.data_mut()[r * cols..(r + 1) * cols]
                .copy_from_slice(&self.value(table).data()[id * cols..(id + 1) * cols]);
        }
        Ok(self.push_op(
            "gather_rows",
            out,
            &[table],
            Box::new(move |_, g| {
                let mut dt = Tensor::zeros(vec![rows, cols]);
                for (r, &id) in ids.iter().enumerate() {
                    let src = &g.data()[r * cols..(r + 1) * cols];
                    let dst = &mut dt.data_mut()[id * cols..(id + 1) * cols];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                vec![(table, dt)]
            }),
        ))
    }

    /// Numerically stable softmax along `axis` (max subtraction).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidShape {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let axis_len = shape[axis];
        let mut out = self.value(x).clone();
        for_each_lane(&shape, axis, |start, stride| {
            let data = out.data_mut();
            let mut max = F::neg_infinity();
            for i in 0..axis_len {
                max = max.max(data[start + i * stride]);
            }
            let mut sum = F::zero();
            for i in 0..axis_len {
                let e = (data[start + i * stride] - max).exp();
                data[start + i * stride] = e;
                sum += e;
            }
            for i in 0..axis_len {
                data[start + i * stride] /= sum;
            }
        });
        let out_id = self.nodes.len();
        Ok(self.push_op(
            "softmax",
            out,
            &[x],
            Box::new(move |nodes, g| {
                let s = &nodes[out_id].value;
                let mut dx = Tensor::zeros(shape.clone());
                for_each_lane(&shape, axis, |start, stride| {
                    let mut dot = F::zero();
                    for i in 0..axis_len {
                        dot += g.data()[start + i * stride] * s.data()[start + i * stride];
                    }
                    for i in 0..axis_len {
                        let idx = start + i * stride;
                        dx.data_mut()[idx] = s.data()[idx] * (g.data()[idx] - dot);
                    }
                });
                vec![(x, dx)]
            }),
        ))
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let n = *shape.last().unwrap();
        if self.value(gamma).shape() != [n] || self.value(beta).shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: shape.clone(),
                rhs: self.value(gamma).shape().to_vec(),
            });
        }
        let rows = self.value(x).len() / n;
        let eps = F::from_f64(eps);
        let mut xhat = vec![F::zero(); rows * n];
        let mut rstd = vec![F::zero(); rows];
        let mut out = Tensor::zeros(shape.clone());
        {
            let xv = self.value(x).data();
            let gv = self.value(gamma).data();
            let bv = self.value(beta).data();
            for r in 0..rows {
                let row = &xv[r * n..(r + 1) * n];
                let mut mean = F::zero();
                for &v in row {
                    mean += v;
                }
                mean = mean / F::from_f64(n as f64);
                let mut var = F::zero();
                for &v in row {
                    let d = v - mean;
                    var += d * d;
                }
                var = var / F::from_f64(n as f64);
                let r_inv = (var + eps).sqrt().recip();
                rstd[r] = r_inv;
                for j in 0..n {
                    let xh = (row[j] - mean) * r_inv;
                    xhat[r * n + j] = xh;
                    out.data_mut()[r * n + j] = gv[j] * xh + bv[j];
                }
            }
        }
        Ok(self.push_op(
            "layer_norm",
            out,
            &[x, gamma, beta],
            Box::new(move |nodes, g| {
                let gv = nodes[gamma.0].value.data();
                let inv_n = F::from_f64(1.0 / n as f64);
                let mut dx = Tensor::zeros(shape.clone());
                let mut dgamma = Tensor::zeros(vec![n]);
                let mut dbeta = Tensor::zeros(vec![n]);
                for r in 0..rows {
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let xh = &xhat[r * n..(r + 1) * n];
                    let mut sum_gg = F::zero();
                    let mut sum_gg_xh = F::zero();
                    for j in 0..n {
                        let gg = gr[j] * gv[j];
                        sum_gg += gg;
                        sum_gg_xh += gg * xh[j];
                        dgamma.data_mut()[j] += gr[j] * xh[j];
                        dbeta.data_mut()[j] += gr[j];
                    }
                    for j in 0..n {
                        let gg = gr[j] * gv[j];
                        dx.data_mut()[r * n + j] =
                            rstd[r] * (gg - (sum_gg + xh[j] * sum_gg_xh) * inv_n);
                    }
                }
                vec![(x, dx), (gamma, dgamma), (beta, dbeta)]
            }),
        ))
    }

    /// Gaussian error linear unit, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = F::from_f64(0.7978845608028654); // sqrt(2/pi)
        let a = F::from_f64(0.044715);
        let half = F::from_f64(0.5);
        let out = self.value(x).map(|v| {
            let u = c * (v + a * v * v * v);
            half * v * (F::one() + u.tanh())
        });
        self.push_op(
            "gelu",
            out,
            &[x],
            Box::new(move |nodes, g| {
                let xv = &nodes[x.0].value;
                let three = F::from_f64(3.0);
                let mut dx = xv.clone();
                for (d, (&v, &gv)) in dx
                    .data_mut()
                    .iter_mut()
                    .zip(xv.data().iter().zip(g.data()))
                {
                    let u = c * (v + a * v * v * v);
                    let t = u.tanh();
                    let du = c * (F::one() + three * a * v * v);
                    *d = gv * (half * (F::one() + t) + half * v * (F::one() - t * t) * du);
                }
                vec![(x, dx)]
            }),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let out_id = self.nodes.len();
        self.push_op(
            "tanh",
            out,
            &[x],
            Box::new(move |nodes, g| {
                let y = &nodes[out_id].value;
                let mut dx = y.clone();
                for (d, (&yv, &gv)) in dx.data_mut().iter_mut().zip(y.data().iter().zip(g.data()))
                {
                    *d = gv * (F::one() - yv * yv);
                }
                vec![(x, dx)]
            }),
        )
    }

    /// Inverted dropout: keeps each element with probability 1-rate, scaling
    /// survivors by 1/(1-rate). rate 0 is the identity. The keep mask is a
    /// pure function of the seed.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep_scale = F::from_f64(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<F> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() >= rate {
                    keep_scale
                } else {
                    F::zero()
                }
            })
            .collect();
        let mut out = self.value(x).clone();
        for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
            *v = *v * m;
        }
        self.push_op(
            "dropout",
            out,
            &[x],
            Box::new(move |_, g| {
                let mut dx = g.clone();
                for (d, &m) in dx.data_mut().iter_mut().zip(&mask) {
                    *d = *d * m;
                }
                vec![(x, dx)]
            }),
        )
    }

    /// Per-row cross entropy via log-sum-exp: logits [N,C], one target per
    /// row, output [N].
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.value(logits).shape().to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::InvalidShape {
                op: "cross_entropy",
                msg: format!("logits {shape:?} vs {} targets", targets.len()),
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::InvalidShape {
                op: "cross_entropy",
                msg: format!("target {bad} out of range for {cols} classes"),
            });
        }
        let targets = targets.to_vec();
        let mut out = Tensor::zeros(vec![rows]);
        {
            let lv = self.value(logits).data();
            for r in 0..rows {
                let row = &lv[r * cols..(r + 1) * cols];
                let (max, sum) = lse_terms(row);
                out.data_mut()[r] = max + sum.ln() - row[targets[r]];
            }
        }
        Ok(self.push_op(
            "cross_entropy",
            out,
            &[logits],
            Box::new(move |nodes, g| {
                let lv = nodes[logits.0].value.data();
                let mut dl = Tensor::zeros(vec![rows, cols]);
                for r in 0..rows {
                    let row = &lv[r * cols..(r + 1) * cols];
                    let (max, sum) = lse_terms(row);
                    for j in 0..cols {
                        let p = (row[j] - max).exp() / sum;
                        let ind = if j == targets[r] { F::one() } else { F::zero() };
                        dl.data_mut()[r * cols + j] = g.data()[r] * (p - ind);
                    }
                }
                vec![(logits, dl)]
            }),
        ))
    }

    /// Concatenate along `axis`. All inputs must agree on the other axes.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidShape {
                op: "concat",
                msg: "no inputs".into(),
            });
        }
        let first = self.value(xs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {first:?}"),
            });
        }
        let mut axis_total = 0;
        for &v in xs {
            let s = self.value(v).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let inner: usize = first[axis + 1..].iter().product();
        let outer: usize = first[..axis].iter().product();
        let mut out = Tensor::zeros(shape);
        {
            let mut offset = 0;
            for &v in xs {
                let s_axis = self.value(v).shape()[axis];
                let block = s_axis * inner;
                for o in 0..outer {
                    let src = &self.value(v).data()[o * block..(o + 1) * block];
                    let dst_start = o * axis_total * inner + offset * inner;
                    out.data_mut()[dst_start..dst_start + block].copy_from_slice(src);
                }
                offset += s_axis;
            }
        }
        let parts: Vec<(Var, usize)> = xs
            .iter()
            .map(|&v| (v, self.value(v).shape()[axis]))
            .collect();
        Ok(self.push_op(
            "concat",
            out,
            xs,
            Box::new(move |nodes, g| {
                let mut grads = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &(v, s_axis) in &parts {
                    let mut shape = nodes[v.0].value.shape().to_vec();
                    shape[axis] = s_axis;
                    let block = s_axis * inner;
                    let mut dv = Tensor::zeros(shape);
                    for o in 0..outer {
                        let src_start = o * axis_total * inner + offset * inner;
                        dv.data_mut()[o * block..(o + 1) * block]
                            .copy_from_slice(&g.data()[src_start..src_start + block]);
                    }
                    grads.push((v, dv));
                    offset += s_axis;
                }
                grads
            }),
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::InvalidShape {
                op: "slice",
                msg: format!("slice {start}..{} on axis {axis} of {shape:?}", start + len),
            });
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = Tensor::zeros(out_shape);
        for o in 0..outer {
            let src_start = o * axis_len * inner + start * inner;
            out.data_mut()[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&self.value(x).data()[src_start..src_start + len * inner]);
        }
        Ok(self.push_op(
            "slice",
            out,
            &[x],
            Box::new(move |_, g| {
                let mut dx = Tensor::zeros(shape.clone());
                for o in 0..outer {
                    let dst_start = o * axis_len * inner + start * inner;
                    dx.data_mut()[dst_start..dst_start + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(x, dx)]
            }),
        ))
    }

    /// Sum of all elements, as a [1] tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut sum = F::zero();
        for &v in self.value(x).data() {
            sum += v;
        }
        let shape = self.value(x).shape().to_vec();
        self.push_op(
            "sum_all",
            Tensor::scalar(sum),
            &[x],
            Box::new(move |_, g| {
                let gv = g.data()[0];
                vec![(x, Tensor::full(shape.clone(), gv))]
            }),
        )
    }

    /// Mean of all elements, as a [1] tensor.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    // ---- reverse pass -----------------------------------------------------

    /// Reverse-mode accumulation from a scalar loss. Each reachable node is
    /// visited once, in reverse creation order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                msg: format!(
                    "loss must be a scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            });
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));
        for id in (0..=loss.0).rev() {
            if grads[id].is_none() {
                continue;
            }
            let Some(back) = self.nodes[id].back.as_ref() else {
                continue;
            };
            let g = grads[id].take().unwrap();
            for (var, contrib) in back(&self.nodes, &g) {
                if !self.nodes[var.0].needs_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot => *slot = Some(contrib),
                }
            }
            // Interior gradients are dropped once consumed; only leaves keep
            // theirs so callers can read parameter gradients.
            if self.nodes[id].needs_grad && self.nodes[id].back.is_none() {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Max and shifted exponential sum for a logit row. Exponentials are summed
/// in sorted order, so the result is invariant to permuting the row — a
/// softmax over candidates must not depend on how they were shuffled.
fn lse_terms<F: Scalar>(row: &[F]) -> (F, F) {
    let mut max = F::neg_infinity();
    for &v in row {
        max = max.max(v);
    }
    let mut exps: Vec<F> = row.iter().map(|&v| (v - max).exp()).collect();
    exps.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite exponentials"));
    let mut sum = F::zero();
    for e in exps {
        sum += e;
    }
    (max, sum)
}

fn transpose_tensor<F: Scalar>(x: &Tensor<F>, ax0: usize, ax1: usize) -> Tensor<F> {
    let shape = x.shape();
    let mut out_shape = shape.to_vec();
    out_shape.swap(ax0, ax1);
    if ax0 == ax1 {
        return x.clone();
    }
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank - 1).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut out_strides = vec![1usize; rank];
    for i in (0..rank - 1).rev() {
        out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
    }
    let mut perm_strides = in_strides.clone();
    perm_strides.swap(ax0, ax1);
    let mut out = Tensor::zeros(out_shape.clone());
    let mut idx = vec![0usize; rank];
    let total = x.len();
    let data = x.data();
    let out_data = out.data_mut();
    for out_off in 0..total {
        let mut in_off = 0;
        for d in 0..rank {
            in_off += idx[d] * perm_strides[d];
        }
        out_data[out_off] = data[in_off];
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}
