//! Layer wrappers with runtime weight scaling ("equalised learning rate"):
//! weights are stored with unit variance and multiplied by `1/sqrt(fan_in)`
//! on every forward pass.

use rand::Rng;

use crate::error::Result;
use crate::substrate::{layers, Bound, Graph, ParamId, ParamSet, Padding, Real, Tensor, Var};

/// Leaky ReLU followed by a `√2` gain that keeps activations at unit scale.
pub fn act<T: Real>(g: &mut Graph<T>, x: Var, slope: f64) -> Var {
    let y = g.leaky_relu(x, T::of(slope));
    g.scale(y, T::of(std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
    pub lr_mul: f64,
}

impl Linear {
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        lr_mul: f64,
        bias_init: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add_normal(format!("{name}.weight"), &[fan_in, fan_out], rng);
        if lr_mul != 1.0 {
            let p = params.get_mut(weight);
            p.value = p.value.map(|v| v / T::of(lr_mul));
        }
        let bias = params.add_const(format!("{name}.bias"), &[fan_out], bias_init / lr_mul);
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
            lr_mul,
        }
    }

    pub fn weight_gain(&self) -> f64 {
        self.lr_mul / (self.fan_in as f64).sqrt()
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let w = g.scale(b.var(self.weight), T::of(self.weight_gain()));
        let bias = g.scale(b.var(self.bias), T::of(self.lr_mul));
        layers::fully_connected(g, x, w, bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add_normal(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel], rng);
        let bias = bias.then(|| params.add_const(format!("{name}.bias"), &[out_ch], 0.0));
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn weight_gain(&self) -> f64 {
        1.0 / ((self.in_ch * self.kernel * self.kernel) as f64).sqrt()
    }

    pub fn scaled_weight<T: Real>(&self, g: &mut Graph<T>, b: &Bound) -> Var {
        g.scale(b.var(self.weight), T::of(self.weight_gain()))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var, padding: Padding) -> Result<Var> {
        let w = self.scaled_weight(g, b);
        let y = layers::conv2d(g, x, w, 1, padding)?;
        match self.bias {
            Some(id) => layers::add_channel_bias(g, y, b.var(id)),
            None => Ok(y),
        }
    }
}

/// Overwrite every parameter with `value`; used by structural tests.
pub fn fill_params<T: Real>(params: &mut ParamSet<T>, value: f64) {
    for p in params.params_mut() {
        p.value = Tensor::full(p.value.shape(), T::of(value));
    }
}
