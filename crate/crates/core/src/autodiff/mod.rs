//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs to run backward. [`Tape::backward`] replays the nodes in reverse,
//! visiting each exactly once, and gradients from multiple consumers of a
//! node add up.

pub mod conv;
pub mod norm;
pub mod pool;

use rand::Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::scalar::{lit, Float};
use crate::tensor::Tensor;

use conv::{ConvGeom, UpGeom};
use norm::{BnSaved, RunningStats};

/// Batch-norm and dropout behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Probability clamp applied before the logarithms of the BCE loss.
pub const BCE_CLAMP: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvT2x2 {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: UpGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved<T>,
        train: bool,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Sigmoid {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    Bce {
        pred: Var,
        target: Vec<T>,
    },
    /// Recorded without backward state (inference tapes).
    Detached,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

/// The computation tape (a.k.a. Wengert list).
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    record: bool,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A tape that keeps values only; `backward` is unavailable.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input or parameter. Gradients are tracked when the
    /// tensor's `requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        let requires_grad = t.requires_grad && self.record;
        let value = Tensor::from_vec(t.shape().to_vec(), t.data().to_vec())
            .expect("tensor invariants hold");
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Take ownership of a node's value, leaving an empty tensor behind.
    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros([0]))
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let op = if self.record || matches!(op, Op::Leaf) {
            op
        } else {
            Op::Detached
        };
        self.nodes.push(Node {
            value,
            op,
            grad: None,
            requires_grad: requires_grad && self.record,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize, stride: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x).dims4()?, self.value(w).shape(), pad, stride)?;
        if let Some(b) = b {
            if self.value(b).numel() != geom.c_out {
                return Err(Error::dim("conv bias length differs from output channels"));
            }
        }
        let y = conv::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let shape = self.out_shape(x, [geom.batch, geom.c_out, geom.h_out, geom.w_out]);
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(Tensor::from_vec(shape, y)?, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// 2×2 / stride-2 transpose convolution (exact spatial doubling).
    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let geom = UpGeom::new(self.value(x).dims4()?, self.value(w).shape())?;
        if let Some(b) = b {
            if self.value(b).numel() != geom.c_out {
                return Err(Error::dim("transpose conv bias length differs from output channels"));
            }
        }
        let y = conv::conv_t2x2_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let shape = self.out_shape(x, geom.out_dims());
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(Tensor::from_vec(shape, y)?, Op::ConvT2x2 { x, w, b, geom }, rg))
    }

    pub fn max_pool2x2(&mut self, x: Var) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        let (y, argmax) = pool::max_pool2x2_forward(self.value(x).data(), dims)?;
        let shape = self.out_shape(x, [dims[0], dims[1], dims[2] / 2, dims[3] / 2]);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_vec(shape, y)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Batch normalization. Train mode normalizes with batch statistics and
    /// folds them into `stats`; eval mode reads `stats` only.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: Mode,
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        let c = dims[1];
        if self.value(gamma).numel() != c || self.value(beta).numel() != c || stats.mean.len() != c {
            return Err(Error::dim(format!("batch norm parameters do not match {c} channels")));
        }
        let (y, saved) = match mode {
            Mode::Train => norm::batch_norm_train(
                self.value(x).data(),
                dims,
                self.value(gamma).data(),
                self.value(beta).data(),
                stats,
                lit(eps),
                lit(momentum),
            )?,
            Mode::Eval => norm::batch_norm_eval(
                self.value(x).data(),
                dims,
                self.value(gamma).data(),
                self.value(beta).data(),
                stats,
                lit(eps),
            ),
        };
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x, gamma, beta]);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            saved,
            train: mode == Mode::Train,
        };
        Ok(self.push(Tensor::from_vec(shape, y)?, op, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s: T = lit(slope);
        let y = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        let rg = self.rg(&[x]);
        self.push(y, Op::LeakyRelu { x, slope: s }, rg)
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            let y = self.value(x).clone();
            let rg = self.rg(&[x]);
            let mask = if self.record { vec![T::one(); y.numel()] } else { Vec::new() };
            return Ok(self.push(y, Op::Dropout { x, mask }, rg));
        }
        let keep: T = lit(1.0 / (1.0 - rate));
        let n = self.value(x).numel();
        // Drop when a uniform 32-bit draw falls below rate·2³².
        let cut = (rate * 4_294_967_296.0).round() as u64;
        let mask: Vec<T> = (0..n)
            .map(|_| if (rng.next_u32() as u64) < cut { T::zero() } else { keep })
            .collect();
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Dropout { x, mask }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(stable_sigmoid);
        let rg = self.rg(&[x]);
        self.push(y, Op::Sigmoid { x }, rg)
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.value(a).dims4()?;
        let [nb, cb, hb, wb] = self.value(b).dims4()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::dim(format!(
                "concat: {:?} vs {:?} differ outside the channel axis",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let plane = ha * wa;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut y = Vec::with_capacity(da.len() + db.len());
        for n in 0..na {
            y.extend_from_slice(&da[n * ca * plane..(n + 1) * ca * plane]);
            y.extend_from_slice(&db[n * cb * plane..(n + 1) * cb * plane]);
        }
        let shape = self.out_shape(a, [na, ca + cb, ha, wa]);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_vec(shape, y)?, Op::Concat { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut y = self.value(a).clone();
        y.data_mut()
            .iter_mut()
            .zip(self.value(b).data())
            .for_each(|(u, &v)| *u += v);
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Add { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut y = self.value(a).clone();
        y.data_mut()
            .iter_mut()
            .zip(self.value(b).data())
            .for_each(|(u, &v)| *u *= v);
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Mul { a, b }, rg))
    }

    /// Sum of all elements (scalar result).
    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_vec(Vec::<usize>::new(), vec![s]).expect("scalar"), Op::Sum { x }, rg)
    }

    /// Mean binary cross-entropy of probabilities `pred` against a binary
    /// `target` of the same length (scalar result).
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.numel() != target.numel() || p.numel() == 0 {
            return Err(Error::dim(format!(
                "bce: prediction {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        if target.data().iter().any(|&y| y != T::zero() && y != T::one()) {
            return Err(Error::Data("bce target must be binary".into()));
        }
        let n = T::from_f64(p.numel() as f64);
        let total: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| bce_term(p, y))
            .sum();
        let rg = self.rg(&[pred]);
        let op = Op::Bce {
            pred,
            target: target.data().to_vec(),
        };
        Ok(self.push(Tensor::from_vec(Vec::<usize>::new(), vec![total / n])?, op, rg))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "{:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Output shape keeping a 3-D input 3-D.
    fn out_shape(&self, x: Var, dims: [usize; 4]) -> Vec<usize> {
        if self.value(x).rank() == 3 {
            dims[1..].to_vec()
        } else {
            dims.to_vec()
        }
    }

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            None => node.grad = Some(g),
        }
    }

    /// Backpropagate from a scalar `loss`.
    ///
    /// Intermediate gradients are recomputed on every call; gradients on
    /// leaves accumulate across calls. Leaves that require a gradient but do
    /// not influence `loss` receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.record {
            return Err(Error::Parameter("backward on an inference tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![T::zero(); node.value.numel()]);
            }
        }
        if self.nodes[loss.0].requires_grad {
            self.accumulate(loss, vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.backward_node(i, g)?;
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: Vec<T>) -> Result<()> {
        // Temporarily take the op out so its payload can be borrowed while
        // gradients are pushed into other nodes.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Detached);
        match &op {
            Op::Leaf | Op::Detached => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = conv::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    &g,
                    geom,
                    self.requires_grad(*x),
                );
                if let Some(dx) = dx {
                    self.accumulate(*x, dx);
                }
                self.accumulate(*w, dw);
                if let Some(b) = b {
                    self.accumulate(*b, db);
                }
            }
            Op::ConvT2x2 { x, w, b, geom } => {
                let (dx, dw, db) = conv::conv_t2x2_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    &g,
                    geom,
                    self.requires_grad(*x),
                );
                if let Some(dx) = dx {
                    self.accumulate(*x, dx);
                }
                self.accumulate(*w, dw);
                if let Some(b) = b {
                    self.accumulate(*b, db);
                }
            }
            Op::MaxPool { x, argmax } => {
                let dx = pool::max_pool2x2_backward(&g, argmax, self.value(*x).numel());
                self.accumulate(*x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                train,
            } => {
                let dims = self.value(*x).dims4()?;
                let (dx, dgamma, dbeta) = norm::batch_norm_backward(
                    &g,
                    dims,
                    self.value(*gamma).data(),
                    saved,
                    *train,
                    self.requires_grad(*x),
                );
                if let Some(dx) = dx {
                    self.accumulate(*x, dx);
                }
                self.accumulate(*gamma, dgamma);
                self.accumulate(*beta, dbeta);
            }
            Op::LeakyRelu { x, slope } => {
                let mut dx = g;
                let xs = self.value(*x).data();
                dx.iter_mut().zip(xs).for_each(|(d, &v)| {
                    if v <= T::zero() {
                        *d *= *slope;
                    }
                });
                self.accumulate(*x, dx);
            }
            Op::Dropout { x, mask } => {
                let mut dx = g;
                dx.iter_mut().zip(mask).for_each(|(d, &m)| *d *= m);
                self.accumulate(*x, dx);
            }
            Op::Sigmoid { x } => {
                let mut dx = g;
                let ys = self.nodes[i].value.data();
                dx.iter_mut()
                    .zip(ys)
                    .for_each(|(d, &y)| *d *= y * (T::one() - y));
                self.accumulate(*x, dx);
            }
            Op::Concat { a, b } => {
                let [n, ca, h, w] = self.value(*a).dims4()?;
                let cb = self.value(*b).dims4()?[1];
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for s in 0..n {
                    let base = s * (ca + cb) * plane;
                    ga.extend_from_slice(&g[base..base + ca * plane]);
                    gb.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
                }
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Add { a, b } => {
                self.accumulate(*b, g.clone());
                self.accumulate(*a, g);
            }
            Op::Mul { a, b } => {
                let mut ga = g.clone();
                ga.iter_mut()
                    .zip(self.value(*b).data())
                    .for_each(|(d, &v)| *d *= v);
                let mut gb = g;
                gb.iter_mut()
                    .zip(self.value(*a).data())
                    .for_each(|(d, &v)| *d *= v);
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                self.accumulate(*x, vec![g[0]; n]);
            }
            Op::Bce { pred, target } => {
                let p = self.value(*pred).data();
                let scale = g[0] / T::from_f64(p.len() as f64);
                let mut dp = vec![T::zero(); p.len()];
                par::for_each_chunk_mut(&mut dp, 4096, |c, out| {
                    let off = c * 4096;
                    for (k, d) in out.iter_mut().enumerate() {
                        *d = scale * bce_term_grad(p[off + k], target[off + k]);
                    }
                });
                self.accumulate(*pred, dp);
            }
        }
        self.nodes[i].op = op;
        Ok(())
    }
}

/// `1 / (1 + e^{-x})` evaluated without overflow for large `|x|`.
pub fn stable_sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// One pixel of the two-class cross-entropy with clamped probability.
pub fn bce_term<T: Float>(p: T, y: T) -> T {
    let lo: T = lit(BCE_CLAMP);
    let hi = T::one() - lo;
    let p = p.max(lo).min(hi);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

/// Derivative of [`bce_term`] with respect to `p` (zero where the clamp is active).
pub fn bce_term_grad<T: Float>(p: T, y: T) -> T {
    let lo: T = lit(BCE_CLAMP);
    if p < lo || p > T::one() - lo {
        return T::zero();
    }
    -y / p + (T::one() - y) / (T::one() - p)
}
