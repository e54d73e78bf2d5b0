//! Parameter naming and the small set of layer shapes the model is built from.

use cvcp_numerics::{Bound, Init, Padding, ParamSpec, Scalar, Tape, Var};

use crate::error::Result;

/// Accumulates parameter specs in declaration order.
#[derive(Default)]
pub struct SpecList(pub Vec<ParamSpec>);

impl SpecList {
    /// `name.w: [cout×cin×k×k]`, `name.b: [cout]`.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        self.conv_with_bias(name, cin, cout, k, 0.0);
    }

    pub fn conv_with_bias(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: f64) {
        self.conv_init(name, cin, cout, k, Init::HeNormal { fan_in: cin * k * k }, bias);
    }

    pub fn conv_init(&mut self, name: &str, cin: usize, cout: usize, k: usize, weight: Init, bias: f64) {
        self.0.push(ParamSpec::new(format!("{name}.w"), [cout, cin, k, k], weight));
        self.0.push(ParamSpec::new(format!("{name}.b"), [cout], Init::Constant(bias)));
    }

    /// `name.w: [cin×cout×2×2]` for a stride-2 transposed convolution.
    pub fn conv_transpose(&mut self, name: &str, cin: usize, cout: usize) {
        self.0.push(ParamSpec::new(format!("{name}.w"), [cin, cout, 2, 2], Init::HeNormal { fan_in: cin }));
        self.0.push(ParamSpec::new(format!("{name}.b"), [cout], Init::Zeros));
    }

    /// `name.w: [din×dout]`, `name.b: [dout]`.
    pub fn linear(&mut self, name: &str, din: usize, dout: usize, init: Init) {
        self.0.push(ParamSpec::new(format!("{name}.w"), [din, dout], init));
        self.0.push(ParamSpec::new(format!("{name}.b"), [dout], Init::Zeros));
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) {
        self.0.push(ParamSpec::new(format!("{name}.gamma"), [d], Init::Constant(1.0)));
        self.0.push(ParamSpec::new(format!("{name}.beta"), [d], Init::Zeros));
    }

    pub fn push(&mut self, spec: ParamSpec) {
        self.0.push(spec);
    }
}

pub fn conv<T: Scalar>(tape: &Tape<T>, p: &Bound, name: &str, x: Var, stride: usize, pad: Padding) -> Result<Var> {
    let y = tape.conv2d(x, p.var(&format!("{name}.w"))?, stride, pad)?;
    Ok(tape.add_bias_channels(y, p.var(&format!("{name}.b"))?)?)
}

/// Same-size 3×3 (stride 1) or halving (stride 2) convolution followed by relu.
pub fn conv3_relu<T: Scalar>(tape: &Tape<T>, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let y = conv(tape, p, name, x, stride, Padding::same(3, stride))?;
    Ok(tape.relu(y)?)
}

pub fn conv1<T: Scalar>(tape: &Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    conv(tape, p, name, x, 1, Padding::symmetric(0))
}

pub fn linear<T: Scalar>(tape: &Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = tape.matmul(x, p.var(&format!("{name}.w"))?)?;
    Ok(tape.add_bias_rows(y, p.var(&format!("{name}.b"))?)?)
}

pub fn layer_norm<T: Scalar>(tape: &Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let g = p.var(&format!("{name}.gamma"))?;
    let b = p.var(&format!("{name}.beta"))?;
    Ok(tape.layer_norm(x, g, b, T::lit(1e-5))?)
}
