//! Named parameter collections, their binary container format, and Adam.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic   b"SCPARAM1"
//! count   u32
//! repeated count times:
//!   name_len u32, name utf-8 bytes
//!   ndim     u32, dims u64 * ndim
//!   data     f64 * prod(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SCPARAM1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.position(&name).is_some() {
            return Err(Error::DuplicateParam(name));
        }
        self.entries.push((name, value));
        Ok(())
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.position(name)
            .map(|i| &self.entries[i].1)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.position(name) {
            Some(i) => Ok(&mut self.entries[i].1),
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Same names and shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), tape.leaf(t.clone())))
                .collect(),
        }
    }

    /// `self += scale * other`, matched by name.
    pub fn accumulate(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        for (name, t) in &mut self.entries {
            let o = other.get(name)?;
            if o.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "accumulate",
                    detail: format!("{name}: {:?} vs {:?}", t.shape(), o.shape()),
                });
            }
            t.axpy(scale, o);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = CountingReader { inner: r, offset: 0 };
        let mut magic = [0u8; 8];
        r.fill(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format {
                what: "parameter container",
                offset: 0,
                detail: "bad magic".into(),
            });
        }
        let count = r.u32()?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let mut name = vec![0u8; len];
            r.fill(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| r.error(e.to_string()))?;
            let ndim = r.u32()? as usize;
            let dims = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(&dims, data).map_err(|e| r.error(e.to_string()))?;
            set.insert(name, t)?;
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

pub(crate) struct CountingReader<R> {
    pub inner: R,
    pub offset: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn error(&self, detail: String) -> Error {
        Error::Format {
            what: "binary container",
            offset: self.offset,
            detail,
        }
    }

    pub fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| Error::Format {
            what: "binary container",
            offset: self.offset,
            detail: format!("need {} more bytes: {e}", buf.len()),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}

/// Parameters recorded on a tape, looked up by name.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| *v).collect()
    }

    /// Pairs gradients returned by [`Tape::backward`] for [`Bound::vars`] back with names.
    pub fn collect_grads(&self, grads: Vec<Tensor>) -> ParamSet {
        ParamSet {
            entries: self.vars.iter().map(|(n, _)| n.clone()).zip(grads).collect(),
        }
    }

    /// Runs backward from `loss` to every bound parameter.
    pub fn grads(&self, tape: &Tape, loss: Var) -> Result<ParamSet> {
        let g = tape.backward(loss, &self.vars())?;
        Ok(self.collect_grads(g))
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ParamSet,
    v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<()> {
    for (name, p) in &params.entries {
        let g = grads.get(name).map_err(|_| Error::MissingGradient(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!("{name}: grad {:?} vs param {:?}", g.shape(), p.shape()),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, p) in &mut params.entries {
        let g = grads.get(name)?;
        let m = state.m.get_mut(name)?;
        for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
        }
        let v = state.v.get_mut(name)?;
        for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
        }
        let (m, v) = (state.m.get(name)?, state.v.get(name)?);
        for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *pi -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}
