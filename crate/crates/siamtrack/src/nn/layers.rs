//! Dense layers and elementwise ops with explicit forward caches and
//! analytic backward passes.
//!
//! Forward passes take `&self` and return `(output, cache)`; backward passes
//! consume the cache, accumulate parameter gradients in the layer, and
//! return the gradient with respect to the layer input. The explicit cache
//! lets one parameter set serve several concurrent forward traces (template
//! and search branch share the encoder).

use rand::Rng;

use super::tensor::{Real, Tensor2D};
use crate::error::{Error, Result};

/// Per-point linear map `y = xW + b` (a kernel-1 1D convolution).
#[derive(Clone, Debug)]
pub struct Linear<T> {
    /// `in x out` weight.
    pub w: Tensor2D<T>,
    /// `1 x out` bias.
    pub b: Tensor2D<T>,
    pub gw: Tensor2D<T>,
    pub gb: Tensor2D<T>,
}

/// Cached input for the backward pass.
pub struct LinearCache<T> {
    x: Tensor2D<T>,
}

impl<T: Real> Linear<T> {
    /// Xavier-uniform weights in `±sqrt(6/(in+out))`, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut w = Tensor2D::zeros(in_dim, out_dim);
        for v in w.as_mut_slice() {
            *v = T::of(rng.gen_range(-bound..bound));
        }
        Self {
            w,
            b: Tensor2D::zeros(1, out_dim),
            gw: Tensor2D::zeros(in_dim, out_dim),
            gb: Tensor2D::zeros(1, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Tensor2D<T>) -> Result<(Tensor2D<T>, LinearCache<T>)> {
        if x.cols() != self.w.rows() {
            return Err(Error::shape(
                "Linear::forward",
                format!("{} input cols", self.w.rows()),
                format!("{}", x.cols()),
            ));
        }
        let mut y = x.matmul(&self.w)?;
        for r in 0..y.rows() {
            let row = y.row_mut(r);
            for (o, &b) in row.iter_mut().zip(self.b.row(0)) {
                *o += b;
            }
        }
        y.check_finite("Linear output")?;
        Ok((y, LinearCache { x: x.clone() }))
    }

    /// Accumulates `gw`/`gb`; returns the input gradient.
    pub fn backward(&mut self, cache: &LinearCache<T>, grad_out: &Tensor2D<T>) -> Result<Tensor2D<T>> {
        if grad_out.shape() != (cache.x.rows(), self.w.cols()) {
            return Err(Error::shape(
                "Linear::backward",
                format!("{:?}", (cache.x.rows(), self.w.cols())),
                format!("{:?}", grad_out.shape()),
            ));
        }
        self.gw.add_assign(&cache.x.matmul_at(grad_out)?)?;
        for r in 0..grad_out.rows() {
            let row = grad_out.row(r);
            for (g, &v) in self.gb.row_mut(0).iter_mut().zip(row) {
                *g += v;
            }
        }
        let grad_in = grad_out.matmul_bt(&self.w)?;
        grad_in.check_finite("Linear input grad")?;
        Ok(grad_in)
    }
}

pub struct ReluCache {
    active: Vec<bool>,
}

pub fn relu_forward<T: Real>(x: &Tensor2D<T>) -> Result<(Tensor2D<T>, ReluCache)> {
    x.check_finite("relu input")?;
    let mut y = x.clone();
    let mut active = vec![false; x.len()];
    for (v, a) in y.as_mut_slice().iter_mut().zip(active.iter_mut()) {
        if *v > T::zero() {
            *a = true;
        } else {
            *v = T::zero();
        }
    }
    Ok((y, ReluCache { active }))
}

pub fn relu_backward<T: Real>(cache: &ReluCache, grad_out: &Tensor2D<T>) -> Tensor2D<T> {
    let mut g = grad_out.clone();
    for (v, &a) in g.as_mut_slice().iter_mut().zip(cache.active.iter()) {
        if !a {
            *v = T::zero();
        }
    }
    g
}

pub struct SigmoidCache<T> {
    y: Tensor2D<T>,
}

pub fn sigmoid_forward<T: Real>(x: &Tensor2D<T>) -> Result<(Tensor2D<T>, SigmoidCache<T>)> {
    x.check_finite("sigmoid input")?;
    let mut y = x.clone();
    for v in y.as_mut_slice() {
        *v = T::one() / (T::one() + (-*v).exp());
    }
    let cache = SigmoidCache { y: y.clone() };
    Ok((y, cache))
}

pub fn sigmoid_backward<T: Real>(cache: &SigmoidCache<T>, grad_out: &Tensor2D<T>) -> Tensor2D<T> {
    let mut g = grad_out.clone();
    for (v, &y) in g.as_mut_slice().iter_mut().zip(cache.y.as_slice()) {
        *v *= y * (T::one() - y);
    }
    g
}

pub struct SoftmaxCache<T> {
    y: Tensor2D<T>,
}

/// Row-wise softmax with max-shift stabilization.
pub fn softmax_rows_forward<T: Real>(x: &Tensor2D<T>) -> Result<(Tensor2D<T>, SoftmaxCache<T>)> {
    x.check_finite("softmax input")?;
    let mut y = x.clone();
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    let cache = SoftmaxCache { y: y.clone() };
    Ok((y, cache))
}

pub fn softmax_rows_backward<T: Real>(cache: &SoftmaxCache<T>, grad_out: &Tensor2D<T>) -> Tensor2D<T> {
    let mut g = grad_out.clone();
    for r in 0..g.rows() {
        let y = cache.y.row(r);
        let go = grad_out.row(r);
        let dot: T = y.iter().zip(go.iter()).map(|(&a, &b)| a * b).sum();
        for (v, (&yi, &gi)) in g.row_mut(r).iter_mut().zip(y.iter().zip(go.iter())) {
            *v = yi * (gi - dot);
        }
    }
    g
}

pub struct MaxPoolCache {
    argmax: Vec<usize>,
    rows: usize,
}

/// Column-wise max over all rows: `N x C -> 1 x C`. Ties go to the lowest
/// row index.
pub fn max_pool_rows_forward<T: Real>(x: &Tensor2D<T>) -> Result<(Tensor2D<T>, MaxPoolCache)> {
    if x.rows() == 0 {
        return Err(Error::shape("max_pool_rows", ">= 1 row", "0"));
    }
    x.check_finite("max_pool input")?;
    let mut out = Tensor2D::zeros(1, x.cols());
    let mut argmax = vec![0usize; x.cols()];
    out.row_mut(0).copy_from_slice(x.row(0));
    for r in 1..x.rows() {
        for (c, &v) in x.row(r).iter().enumerate() {
            if v > out.get(0, c) {
                out.set(0, c, v);
                argmax[c] = r;
            }
        }
    }
    Ok((out, MaxPoolCache { argmax, rows: x.rows() }))
}

pub fn max_pool_rows_backward<T: Real>(cache: &MaxPoolCache, grad_out: &Tensor2D<T>) -> Tensor2D<T> {
    let mut g = Tensor2D::zeros(cache.rows, grad_out.cols());
    for (c, &r) in cache.argmax.iter().enumerate() {
        g.set(r, c, grad_out.get(0, c));
    }
    g
}

pub struct DropoutCache<T> {
    /// Per-element multipliers (0 or 1/(1-p)); `None` in eval mode.
    mask: Option<Vec<T>>,
}

/// Inverted dropout: training scales kept activations by `1/(1-p)` so that
/// inference is a plain identity.
pub fn dropout_forward<T: Real>(
    x: &Tensor2D<T>,
    p: f64,
    train: bool,
    rng: &mut impl Rng,
) -> Result<(Tensor2D<T>, DropoutCache<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability must be in [0,1), got {p}")));
    }
    x.check_finite("dropout input")?;
    if !train || p == 0.0 {
        return Ok((x.clone(), DropoutCache { mask: None }));
    }
    let keep_scale = T::of(1.0 / (1.0 - p));
    let mut y = x.clone();
    let mut mask = vec![T::zero(); x.len()];
    for (v, m) in y.as_mut_slice().iter_mut().zip(mask.iter_mut()) {
        if rng.gen_range(0.0..1.0) < p {
            *v = T::zero();
        } else {
            *v *= keep_scale;
            *m = keep_scale;
        }
    }
    Ok((y, DropoutCache { mask: Some(mask) }))
}

pub fn dropout_backward<T: Real>(cache: &DropoutCache<T>, grad_out: &Tensor2D<T>) -> Tensor2D<T> {
    match &cache.mask {
        None => grad_out.clone(),
        Some(mask) => {
            let mut g = grad_out.clone();
            for (v, &m) in g.as_mut_slice().iter_mut().zip(mask.iter()) {
                *v *= m;
            }
            g
        }
    }
}

/// Shared per-point MLP: a stack of `Linear` layers with ReLU after each.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

pub struct MlpCache<T> {
    steps: Vec<(LinearCache<T>, ReluCache)>,
}

impl<T: Real> Mlp<T> {
    pub fn new(in_dim: usize, widths: &[usize], rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for &w in widths {
            layers.push(Linear::new(prev, w, rng));
            prev = w;
        }
        Self { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    pub fn forward(&self, x: &Tensor2D<T>) -> Result<(Tensor2D<T>, MlpCache<T>)> {
        let mut cur = x.clone();
        let mut steps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (lin, lin_cache) = layer.forward(&cur)?;
            let (act, relu_cache) = relu_forward(&lin)?;
            steps.push((lin_cache, relu_cache));
            cur = act;
        }
        Ok((cur, MlpCache { steps }))
    }

    pub fn backward(&mut self, cache: &MlpCache<T>, grad_out: &Tensor2D<T>) -> Result<Tensor2D<T>> {
        let mut grad = grad_out.clone();
        for (layer, (lin_cache, relu_cache)) in
            self.layers.iter_mut().zip(cache.steps.iter()).rev()
        {
            grad = relu_backward(relu_cache, &grad);
            grad = layer.backward(lin_cache, &grad)?;
        }
        Ok(grad)
    }
}
