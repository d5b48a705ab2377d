//! Named-parameter traversal shared by the optimizer, checkpointing and the
//! gradient checker.

use super::layers::{Linear, Mlp};
use super::tensor::{Real, Tensor2D};

/// Anything holding trainable parameters. Visit order must be stable across
/// runs; names are the checkpoint contract.
pub trait ParamSet<T: Real> {
    fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor2D<T>, &mut Tensor2D<T>),
    );

    fn zero_grad(&mut self) {
        self.for_each_param("", &mut |_, _, g| g.fill(T::zero()));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param("", &mut |_, v, _| n += v.len());
        n
    }
}

impl<T: Real> ParamSet<T> for Linear<T> {
    fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor2D<T>, &mut Tensor2D<T>),
    ) {
        f(&format!("{prefix}.w"), &mut self.w, &mut self.gw);
        f(&format!("{prefix}.b"), &mut self.b, &mut self.gb);
    }
}

impl<T: Real> ParamSet<T> for Mlp<T> {
    fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor2D<T>, &mut Tensor2D<T>),
    ) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.for_each_param(&format!("{prefix}.{i}"), f);
        }
    }
}
