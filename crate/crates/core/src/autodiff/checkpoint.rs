//! Model checkpoint format.
//!
//! ```text
//! RACMDL1\n
//! params <P>\n
//! P times: <name> <rows> <cols>\n followed by rows*cols little-endian f32
//! optim none\n
//!   or
//! optim adamw <step> <Q>\n
//! Q times: <name> <rows> <cols>\n followed by m then v, little-endian f32
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Moments, OptimState, ParamTensor};
use crate::error::{RacError, Result};

const MAGIC: &[u8] = b"RACMDL1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Array2<f64>)>,
    pub optim: Option<OptimState>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// Copies stored values into `params`, matching by name and shape.
    pub fn restore(&self, params: &mut [&mut ParamTensor]) -> Result<()> {
        for p in params.iter_mut() {
            let stored = self.get(&p.name).ok_or_else(|| {
                RacError::format("checkpoint", format!("missing parameter `{}`", p.name))
            })?;
            if stored.dim() != p.value.dim() {
                return Err(RacError::format(
                    "checkpoint",
                    format!("parameter `{}` has shape {:?}, expected {:?}", p.name, stored.dim(), p.value.dim()),
                ));
            }
            p.value.assign(stored);
            p.zero_grad();
        }
        Ok(())
    }
}

fn push_matrix(out: &mut Vec<u8>, name: &str, m: &Array2<f64>) {
    out.extend_from_slice(format!("{name} {} {}\n", m.nrows(), m.ncols()).as_bytes());
    push_values(out, m);
}

fn push_values(out: &mut Vec<u8>, m: &Array2<f64>) {
    for &v in m.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(params: &[&ParamTensor], optim: Option<&OptimState>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(format!("params {}\n", params.len()).as_bytes());
    for p in params {
        push_matrix(&mut out, &p.name, &p.value);
    }
    match optim {
        None => out.extend_from_slice(b"optim none\n"),
        Some(state) => {
            out.extend_from_slice(format!("optim adamw {} {}\n", state.step, state.moments.len()).as_bytes());
            for mo in &state.moments {
                push_matrix(&mut out, &mo.name, &mo.m);
                push_values(&mut out, &mo.v);
            }
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, params: &[&ParamTensor], optim: Option<&OptimState>) -> Result<()> {
    fs::write(path, encode_checkpoint(params, optim)).map_err(|e| RacError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| RacError::io(path, e))?;
    decode_checkpoint(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<Vec<&'a str>> {
        let rest = &self.bytes[self.pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| RacError::format("checkpoint", "truncated"))?;
        let text = std::str::from_utf8(&rest[..nl]).map_err(|_| RacError::format("checkpoint", "header not utf-8"))?;
        self.pos += nl + 1;
        Ok(text.split(' ').collect())
    }

    fn values(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| RacError::format("checkpoint", "size overflow"))?;
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(RacError::format("checkpoint", "truncated"));
        }
        let vals: Vec<f64> = self.bytes[self.pos..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        self.pos = end;
        Ok(Array2::from_shape_vec((rows, cols), vals).expect("length checked"))
    }

    fn named(&mut self) -> Result<(String, usize, usize)> {
        match self.line()?.as_slice() {
            [name, rows, cols] => Ok((name.to_string(), num(rows)?, num(cols)?)),
            other => Err(RacError::format("checkpoint", format!("bad entry header {other:?}"))),
        }
    }
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| RacError::format("checkpoint", format!("bad number `{s}`")))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if !bytes.starts_with(MAGIC) {
        return Err(RacError::format("checkpoint", "bad magic"));
    }
    let mut cur = Cursor {
        bytes,
        pos: MAGIC.len(),
    };
    let count: usize = match cur.line()?.as_slice() {
        ["params", n] => num(n)?,
        _ => return Err(RacError::format("checkpoint", "expected `params <count>`")),
    };
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let (name, rows, cols) = cur.named()?;
        params.push((name, cur.values(rows, cols)?));
    }
    let optim = match cur.line()?.as_slice() {
        ["optim", "none"] => None,
        ["optim", "adamw", step, q] => {
            let step = num(step)?;
            let q: usize = num(q)?;
            let mut moments = Vec::with_capacity(q.min(1024));
            for _ in 0..q {
                let (name, rows, cols) = cur.named()?;
                let m = cur.values(rows, cols)?;
                let v = cur.values(rows, cols)?;
                moments.push(Moments { name, m, v });
            }
            Some(OptimState { step, moments })
        }
        other => return Err(RacError::format("checkpoint", format!("bad optimizer line {other:?}"))),
    };
    if cur.pos != bytes.len() {
        return Err(RacError::format("checkpoint", "trailing bytes"));
    }
    Ok(Checkpoint { params, optim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_with_optimizer() {
        let mut w = ParamTensor::new("base.w", array![[0.25, -1.5], [3.0, 0.125]], true);
        let b = ParamTensor::new("base.b", array![[0.5, 0.0]], true);
        let mut state = OptimState::for_params(&[&mut w]);
        state.step = 7;
        state.moments[0].m.fill(0.5);
        state.moments[0].v.fill(0.25);
        let bytes = encode_checkpoint(&[&w, &b], Some(&state));
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.get("base.w"), Some(&w.value));
        assert_eq!(back.get("base.b"), Some(&b.value));
        assert_eq!(back.optim, Some(state));
        let mut w2 = ParamTensor::new("base.w", Array2::zeros((2, 2)), true);
        back.restore(&mut [&mut w2]).unwrap();
        assert_eq!(w2.value, w.value);
    }

    #[test]
    fn f32_values_survive_exactly() {
        let v = 0.1f32 as f64;
        let p = ParamTensor::new("t", array![[v]], false);
        let back = decode_checkpoint(&encode_checkpoint(&[&p], None)).unwrap();
        assert_eq!(back.params[0].1[[0, 0]], v);
        assert!(back.optim.is_none());
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let p = ParamTensor::new("w", array![[1.0, 2.0]], true);
        let bytes = encode_checkpoint(&[&p], None);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 2]).is_err());
        assert!(decode_checkpoint(b"RACMDL2\nparams 0\noptim none\n").is_err());
        let mut extra = bytes.clone();
        extra.push(1);
        assert!(decode_checkpoint(&extra).is_err());
        let back = decode_checkpoint(&bytes).unwrap();
        let mut wrong = ParamTensor::new("w", Array2::zeros((2, 1)), true);
        assert!(back.restore(&mut [&mut wrong]).is_err());
        let mut missing = ParamTensor::new("v", Array2::zeros((1, 2)), true);
        assert!(back.restore(&mut [&mut missing]).is_err());
    }
}
