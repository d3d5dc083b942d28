//! Layer building blocks on top of the tape: initializers, conv stacks, the LSTM cell.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::params::{Bound, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Kaiming-uniform: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// One (transposed) convolution layer with per-channel bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub transpose: bool,
    pub activation: Activation,
}

impl ConvLayer {
    pub fn kernel_shape(&self) -> [usize; 4] {
        if self.transpose {
            [self.c_in, self.c_out, self.kernel, self.kernel]
        } else {
            [self.c_out, self.c_in, self.kernel, self.kernel]
        }
    }

    /// Output spatial size for an `h`-sized input.
    pub fn out_size(&self, h: usize) -> usize {
        if self.transpose {
            self.stride * (h - 1) + self.kernel - 2 * self.pad
        } else {
            (h + 2 * self.pad - self.kernel) / self.stride + 1
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        let fan_in = self.c_in * self.kernel * self.kernel;
        params.insert(
            format!("{}.k", self.name),
            kaiming_uniform(&self.kernel_shape(), fan_in, rng),
        )?;
        params.insert(format!("{}.b", self.name), Tensor::zeros(&[self.c_out]))?;
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let k = p.get(&format!("{}.k", self.name))?;
        let b = p.get(&format!("{}.b", self.name))?;
        let y = if self.transpose {
            tape.conv2d_transpose(x, k, self.stride, self.pad)?
        } else {
            tape.conv2d(x, k, self.stride, self.pad)?
        };
        let y = tape.channel_bias(y, b)?;
        self.activation.apply(tape, y)
    }
}

pub fn run_stack(layers: &[ConvLayer], tape: &mut Tape, p: &Bound, mut x: Var) -> Result<Var> {
    for layer in layers {
        x = layer.forward(tape, p, x)?;
    }
    Ok(x)
}

/// Parameter names of one LSTM layer: input weights `[4H, in]`, recurrent weights
/// `[4H, H]`, bias `[4H]`. Gate order is input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmLayer {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
}

impl LstmLayer {
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        let g = 4 * self.hidden;
        params.insert(
            format!("{}.w_ih", self.name),
            Tensor::uniform(&[g, self.input], 1.0 / (self.input as f64).sqrt(), rng),
        )?;
        params.insert(
            format!("{}.w_hh", self.name),
            Tensor::uniform(&[g, self.hidden], 1.0 / (self.hidden as f64).sqrt(), rng),
        )?;
        params.insert(format!("{}.b", self.name), Tensor::zeros(&[g]))?;
        Ok(())
    }

    pub fn vars(&self, p: &Bound) -> Result<LstmVars> {
        Ok(LstmVars {
            w_ih: p.get(&format!("{}.w_ih", self.name))?,
            w_hh: p.get(&format!("{}.w_hh", self.name))?,
            b: p.get(&format!("{}.b", self.name))?,
        })
    }
}

/// One LSTM time step. `x` is `[in]` or `[batch, in]`; `h_prev`/`c_prev` match with `hidden`.
pub fn lstm_cell_step(tape: &mut Tape, x: Var, state: (Var, Var), p: LstmVars) -> Result<(Var, Var)> {
    let (h_prev, c_prev) = state;
    let hidden = tape.value(p.w_hh).shape()[1];
    if tape.value(h_prev).shape() != tape.value(c_prev).shape() || tape.value(h_prev).shape().last() != Some(&hidden) {
        return Err(shape_err(
            "lstm_cell_step",
            format!(
                "state {:?}/{:?} vs hidden {hidden}",
                tape.value(h_prev).shape(),
                tape.value(c_prev).shape()
            ),
        ));
    }
    let zx = tape.dense(x, p.w_ih, Some(p.b))?;
    let zh = tape.dense(h_prev, p.w_hh, None)?;
    if tape.value(zx).shape() != tape.value(zh).shape() {
        return Err(shape_err(
            "lstm_cell_step",
            format!(
                "input batch {:?} vs state batch {:?}",
                tape.value(zx).shape(),
                tape.value(zh).shape()
            ),
        ));
    }
    let z = tape.add(zx, zh)?;
    let i = tape.slice_last(z, 0, hidden)?;
    let f = tape.slice_last(z, hidden, hidden)?;
    let g = tape.slice_last(z, 2 * hidden, hidden)?;
    let o = tape.slice_last(z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}
