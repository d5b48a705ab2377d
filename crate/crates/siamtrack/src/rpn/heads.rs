//! Foreground classification and box regression heads.
//!
//! Both heads are two kernel-1 1D convolutions (per-point linear maps) with
//! a dropout layer between them; the classification head ends in a sigmoid.

use rand::Rng;

use super::codec::ChannelLayout;
use crate::error::Result;
use crate::nn::layers::{
    dropout_backward, dropout_forward, relu_backward, relu_forward, sigmoid_backward,
    sigmoid_forward, DropoutCache, LinearCache, ReluCache, SigmoidCache,
};
use crate::nn::{Linear, ParamSet, Real, Tensor2D};

pub const DROPOUT_P: f64 = 0.5;

/// Per-point foreground probability head.
#[derive(Clone, Debug)]
pub struct ClsHead<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

pub struct ClsHeadCache<T> {
    c1: LinearCache<T>,
    relu: ReluCache,
    drop: DropoutCache<T>,
    c2: LinearCache<T>,
    sig: SigmoidCache<T>,
}

impl<T: Real> ClsHead<T> {
    pub fn new(feature_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            l1: Linear::new(feature_dim, hidden, rng),
            l2: Linear::new(hidden, 1, rng),
        }
    }

    /// `N x F` weighted search features to `N x 1` probabilities in (0, 1).
    pub fn forward(
        &self,
        features: &Tensor2D<T>,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<(Tensor2D<T>, ClsHeadCache<T>)> {
        let (h, c1) = self.l1.forward(features)?;
        let (h, relu) = relu_forward(&h)?;
        let (h, drop) = dropout_forward(&h, DROPOUT_P, train, rng)?;
        let (h, c2) = self.l2.forward(&h)?;
        let (p, sig) = sigmoid_forward(&h)?;
        Ok((p, ClsHeadCache { c1, relu, drop, c2, sig }))
    }

    pub fn backward(&mut self, cache: &ClsHeadCache<T>, grad_p: &Tensor2D<T>) -> Result<Tensor2D<T>> {
        let g = sigmoid_backward(&cache.sig, grad_p);
        let g = self.l2.backward(&cache.c2, &g)?;
        let g = dropout_backward(&cache.drop, &g);
        let g = relu_backward(&cache.relu, &g);
        self.l1.backward(&cache.c1, &g)
    }
}

impl<T: Real> ParamSet<T> for ClsHead<T> {
    fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor2D<T>, &mut Tensor2D<T>),
    ) {
        self.l1.for_each_param(&format!("{prefix}.l1"), f);
        self.l2.for_each_param(&format!("{prefix}.l2"), f);
    }
}

/// Per-point bin-logit + residual regression head.
#[derive(Clone, Debug)]
pub struct RegHead<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
    pub layout: ChannelLayout,
}

pub struct RegHeadCache<T> {
    c1: LinearCache<T>,
    relu: ReluCache,
    drop: DropoutCache<T>,
    c2: LinearCache<T>,
}

impl<T: Real> RegHead<T> {
    pub fn new(feature_dim: usize, hidden: usize, layout: ChannelLayout, rng: &mut impl Rng) -> Self {
        Self {
            l1: Linear::new(feature_dim, hidden, rng),
            l2: Linear::new(hidden, layout.channels(), rng),
            layout,
        }
    }

    /// `N x F` weighted search features to `N x C` regression rows laid out
    /// per [`ChannelLayout`].
    pub fn forward(
        &self,
        features: &Tensor2D<T>,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<(Tensor2D<T>, RegHeadCache<T>)> {
        let (h, c1) = self.l1.forward(features)?;
        let (h, relu) = relu_forward(&h)?;
        let (h, drop) = dropout_forward(&h, DROPOUT_P, train, rng)?;
        let (out, c2) = self.l2.forward(&h)?;
        Ok((out, RegHeadCache { c1, relu, drop, c2 }))
    }

    pub fn backward(&mut self, cache: &RegHeadCache<T>, grad_out: &Tensor2D<T>) -> Result<Tensor2D<T>> {
        let g = self.l2.backward(&cache.c2, grad_out)?;
        let g = dropout_backward(&cache.drop, &g);
        let g = relu_backward(&cache.relu, &g);
        self.l1.backward(&cache.c1, &g)
    }
}

impl<T: Real> ParamSet<T> for RegHead<T> {
    fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor2D<T>, &mut Tensor2D<T>),
    ) {
        self.l1.for_each_param(&format!("{prefix}.l1"), f);
        self.l2.for_each_param(&format!("{prefix}.l2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpn::BinConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeroed_cls_head_outputs_half_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = ClsHead::<f64>::new(8, 16, &mut rng);
        head.l1.w.fill(0.0);
        head.l1.b.fill(0.0);
        head.l2.w.fill(0.0);
        head.l2.b.fill(0.0);
        let x = Tensor2D::from_vec(5, 8, (0..40).map(|i| i as f64 * 0.1).collect()).unwrap();
        let (p, _) = head.forward(&x, false, &mut rng).unwrap();
        for &v in p.as_slice() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn cls_probabilities_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = ClsHead::<f32>::new(6, 12, &mut rng);
        let x = Tensor2D::from_vec(20, 6, (0..120).map(|i| ((i * 37) % 11) as f32 - 5.0).collect()).unwrap();
        let (p, _) = head.forward(&x, false, &mut rng).unwrap();
        assert_eq!(p.shape(), (20, 1));
        for &v in p.as_slice() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn reg_head_shape_follows_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layout = BinConfig::default().layout();
        let head = RegHead::<f64>::new(8, 16, layout, &mut rng);
        for n in [1usize, 7, 33] {
            let x = Tensor2D::zeros(n, 8);
            let (out, _) = head.forward(&x, false, &mut rng).unwrap();
            assert_eq!(out.shape(), (n, 47));
        }
    }

    #[test]
    fn zero_weights_give_uniform_bin_posteriors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layout = BinConfig::default().layout();
        let mut head = RegHead::<f64>::new(4, 8, layout, &mut rng);
        head.l1.w.fill(0.0);
        head.l1.b.fill(0.0);
        head.l2.w.fill(0.0);
        head.l2.b.fill(0.0);
        let x = Tensor2D::from_vec(3, 4, (0..12).map(|i| i as f64).collect()).unwrap();
        let (out, _) = head.forward(&x, false, &mut rng).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
        let (sm, _) = crate::nn::softmax_rows_forward(&out.columns(0, layout.bins_x)).unwrap();
        for &v in sm.as_slice() {
            assert!((v - 1.0 / layout.bins_x as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = ClsHead::<f64>::new(8, 16, &mut rng);
        let x = Tensor2D::zeros(5, 7);
        assert!(head.forward(&x, false, &mut rng).is_err());
    }
}
