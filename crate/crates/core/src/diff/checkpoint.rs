//! Binary parameter checkpoints.
//!
//! `params.bin` is a sequence of records `(u32 name_len, name bytes,
//! u32 rows, u32 cols, rows·cols f32)`, all little-endian. `adam.bin` starts
//! with the step counter and hyperparameters (`u64 t`, `f64 lr, beta1,
//! beta2, eps`) followed by records in the same layout named `<param>.m` and
//! `<param>.v`.

use std::io::{Read, Write};

use super::adam::AdamState;
use super::tape::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn write_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn record(&mut self) -> Result<(String, Tensor<f32>)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let raw = self.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::new(rows, cols, data)?))
    }
}

pub fn params_to_bytes(params: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, t) in params.iter() {
        write_record(&mut out, name, t);
    }
    out
}

pub fn params_from_bytes(buf: &[u8]) -> Result<ParamSet<f32>> {
    let mut cur = Cursor { buf, pos: 0 };
    let mut params = ParamSet::new();
    while !cur.done() {
        let (name, t) = cur.record()?;
        params.insert(&name, t);
    }
    Ok(params)
}

pub fn adam_to_bytes(state: &AdamState<f32>, params: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&state.t.to_le_bytes());
    for h in [state.lr, state.beta1, state.beta2, state.eps] {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for (i, name) in params.names().iter().enumerate() {
        write_record(&mut out, &format!("{name}.m"), &state.m[i]);
        write_record(&mut out, &format!("{name}.v"), &state.v[i]);
    }
    out
}

/// Restores optimizer state for `params`; every parameter must have both
/// moment records.
pub fn adam_from_bytes(buf: &[u8], params: &ParamSet<f32>) -> Result<AdamState<f32>> {
    let mut cur = Cursor { buf, pos: 0 };
    let t = cur.u64()?;
    let (lr, beta1, beta2, eps) = (cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?);
    let mut state = AdamState::new(params, lr);
    state.t = t;
    state.beta1 = beta1;
    state.beta2 = beta2;
    state.eps = eps;
    let mut seen = vec![[false; 2]; params.len()];
    while !cur.done() {
        let (name, tensor) = cur.record()?;
        let (base, slot) = if let Some(b) = name.strip_suffix(".m") {
            (b, 0)
        } else if let Some(b) = name.strip_suffix(".v") {
            (b, 1)
        } else {
            return Err(Error::Checkpoint(format!("unexpected record {name:?}")));
        };
        let i = params
            .index(base)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {base:?}")))?;
        if tensor.shape() != params.values()[i].shape() {
            return Err(Error::Checkpoint(format!("shape mismatch for {name:?}")));
        }
        if slot == 0 {
            state.m[i] = tensor;
        } else {
            state.v[i] = tensor;
        }
        seen[i][slot] = true;
    }
    if let Some(i) = seen.iter().position(|s| !(s[0] && s[1])) {
        return Err(Error::Checkpoint(format!(
            "missing moments for {:?}",
            params.names()[i]
        )));
    }
    Ok(state)
}

pub fn write_params(w: &mut impl Write, params: &ParamSet<f32>) -> std::io::Result<()> {
    w.write_all(&params_to_bytes(params))
}

pub fn read_params(r: &mut impl Read) -> Result<ParamSet<f32>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    params_from_bytes(&buf)
}
