//! Binary weight and checkpoint formats.
//!
//! Weights file layout (all integers little-endian):
//!
//! ```text
//! magic "HDSR" | version u32 | layer_count u32
//! per layer: type_tag u32 | tensor_count u32
//!   per tensor (params then aux, in role order):
//!     ndim u32 | dims u32 x ndim | values f32 x prod(dims), row-major LE
//! ```
//!
//! Round-trips are bit-exact for `f32` networks. Checkpoints extend the same
//! encoding with optimizer state and counters; they are a private format and
//! carry a different magic.

use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"HDSR";
pub const WEIGHTS_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"HDSC";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32_slice(&mut self, vs: &[f32]) {
        for &v in vs {
            self.f32(v);
        }
    }
    fn tensor<F: Scalar>(&mut self, t: &Tensor<F>) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for &v in t.data() {
            self.f32(v.to_f64() as f32);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::parse("weights", "unexpected end of file"));
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
    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn tensor<F: Scalar>(&mut self) -> Result<Tensor<F>> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(Error::parse("weights", format!("implausible rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = self
            .f32_vec(n)?
            .into_iter()
            .map(|v| F::from_f64(v as f64))
            .collect();
        Tensor::from_vec(&shape, data)
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Encode network weights (params then aux per layer).
pub fn encode_weights<F: Scalar>(net: &Network<F>) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(WEIGHTS_MAGIC);
    w.u32(WEIGHTS_VERSION);
    w.u32(net.layers().len() as u32);
    for l in net.layers() {
        w.u32(l.spec.type_tag());
        w.u32((l.params.len() + l.aux.len()) as u32);
        for t in &l.params {
            w.tensor(t);
        }
        for t in &l.aux {
            w.tensor(t);
        }
    }
    w.buf
}

/// Fill `net`'s parameters from encoded bytes; tags and shapes must match.
pub fn decode_weights_into<F: Scalar>(net: &mut Network<F>, bytes: &[u8]) -> Result<()> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::parse("weights", "bad magic"));
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::parse("weights", format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    if count != net.layers().len() {
        return Err(Error::parse(
            "weights",
            format!("{count} layers in file, {} in spec", net.layers().len()),
        ));
    }
    for li in 0..count {
        let tag = r.u32()?;
        let expect_tag = net.layers()[li].spec.type_tag();
        if tag != expect_tag {
            return Err(Error::parse(
                "weights",
                format!("layer {li}: tag {tag} does not match spec tag {expect_tag}"),
            ));
        }
        let tcount = r.u32()? as usize;
        let expect_count = net.layers()[li].params.len() + net.layers()[li].aux.len();
        if tcount != expect_count {
            return Err(Error::parse(
                "weights",
                format!("layer {li}: {tcount} tensors, expected {expect_count}"),
            ));
        }
        let n_params = net.layers()[li].params.len();
        for ti in 0..tcount {
            let t: Tensor<F> = r.tensor()?;
            let slot = if ti < n_params {
                &mut net.layers_mut()[li].params[ti]
            } else {
                &mut net.layers_mut()[li].aux[ti - n_params]
            };
            if t.shape() != slot.shape() {
                return Err(Error::parse(
                    "weights",
                    format!(
                        "layer {li} tensor {ti}: shape {:?} does not match {:?}",
                        t.shape(),
                        slot.shape()
                    ),
                ));
            }
            *slot = t;
        }
    }
    if !r.done() {
        return Err(Error::parse("weights", "trailing bytes"));
    }
    Ok(())
}

pub fn save_weights<F: Scalar>(net: &Network<F>, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(net)).map_err(|e| Error::io(path, e))
}

pub fn load_weights_into<F: Scalar>(net: &mut Network<F>, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights_into(net, &bytes)
}

/// Resumable training checkpoint (weights + optimizer state + counters).
pub struct Checkpoint {
    pub params: Vec<f32>,
    pub velocity: Vec<f32>,
    pub best_params: Vec<f32>,
    pub next_epoch: u64,
    pub best_epoch: u64,
    pub bad_epochs: u64,
    pub best_val: f64,
    pub history_json: String,
}

pub fn encode_checkpoint(cp: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(WEIGHTS_VERSION);
    w.u64(cp.next_epoch);
    w.u64(cp.best_epoch);
    w.u64(cp.bad_epochs);
    w.f64(cp.best_val);
    for arr in [&cp.params, &cp.velocity, &cp.best_params] {
        w.u64(arr.len() as u64);
        w.f32_slice(arr);
    }
    let hj = cp.history_json.as_bytes();
    w.u64(hj.len() as u64);
    w.buf.extend_from_slice(hj);
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::parse("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::parse(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let next_epoch = r.u64()?;
    let best_epoch = r.u64()?;
    let bad_epochs = r.u64()?;
    let best_val = r.f64()?;
    let mut arrays = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = r.u64()? as usize;
        arrays.push(r.f32_vec(n)?);
    }
    let hj_len = r.u64()? as usize;
    let history_json = String::from_utf8(r.take(hj_len)?.to_vec())
        .map_err(|_| Error::parse("checkpoint", "history is not utf-8"))?;
    if !r.done() {
        return Err(Error::parse("checkpoint", "trailing bytes"));
    }
    let best_params = arrays.pop().unwrap();
    let velocity = arrays.pop().unwrap();
    let params = arrays.pop().unwrap();
    Ok(Checkpoint {
        params,
        velocity,
        best_params,
        next_epoch,
        best_epoch,
        bad_epochs,
        best_val,
        history_json,
    })
}
