//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RACS" version:u8
//! n:u32 m_max:u32 k_min:u32 stage:u8
//! meta_len:u32 meta:utf8          model and training description, key = value lines
//! has_rng:u8 [seed:32B stream:u64 word_pos:u128]
//! tensor_count:u32
//!   { name_len:u16 name ndims:u8 dims:u32* frozen:u8 }*
//! payload: f32 values of every tensor in table order
//! crc32 of all preceding bytes:u32
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{stream_rng, Stage, TrainConfig};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::nn::{ModelParams, Network};
use crate::sensing::MeasurementMatrix;

pub const CHECKPOINT_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"RACS";

/// Position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u8,
    pub stage: Stage,
    pub model: ModelSpec,
    pub config: TrainConfig,
    /// The matrix the stage produced: `k_min` rows after Stage 2, `m_max` otherwise.
    pub phi: MeasurementMatrix<f32>,
    /// Stage-1 matrix, kept so Stage 3 can be resumed.
    pub phi_full: Option<MeasurementMatrix<f32>>,
    pub params: ModelParams<f32>,
    pub rng: Option<RngState>,
}

fn normalized(phi: &MeasurementMatrix<f32>) -> MeasurementMatrix<f32> {
    let mut p = phi.clone();
    p.set_trainable(0..p.m_max());
    p
}

impl Checkpoint {
    pub fn new(
        stage: Stage,
        model: ModelSpec,
        config: TrainConfig,
        phi: &MeasurementMatrix<f32>,
        phi_full: Option<&MeasurementMatrix<f32>>,
        params: &ModelParams<f32>,
        rng: Option<RngState>,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            stage,
            model,
            config,
            phi: normalized(phi),
            phi_full: phi_full.map(normalized),
            params: params.clone(),
            rng,
        }
    }

    /// Rebuilds the network with the stored parameters.
    pub fn network(&self) -> Result<Network<f32>> {
        let mut net: Network<f32> = self.model.build(&mut stream_rng(0, 0))?;
        if net.params().len() != self.params.len() {
            return Err(Error::Format(format!(
                "{} stored tensors, model has {}",
                self.params.len(),
                net.params().len()
            )));
        }
        let target = net.params_mut();
        for (i, p) in self.params.iter().enumerate() {
            let slot = target.get_mut(i);
            if slot.name != p.name || slot.value.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "stored tensor {} {:?} does not match model tensor {} {:?}",
                    p.name,
                    p.value.shape(),
                    slot.name,
                    slot.value.shape()
                )));
            }
            slot.value = p.value.clone();
            slot.frozen = p.frozen;
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        put_u32(&mut out, self.phi.n());
        put_u32(&mut out, self.phi.m_max());
        put_u32(&mut out, self.phi.k_min());
        out.push(self.stage as u8);
        let meta = format!("{}{}", self.model.to_meta(), self.config.to_meta());
        put_u32(&mut out, meta.len());
        out.extend_from_slice(meta.as_bytes());
        match &self.rng {
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.seed);
                out.extend_from_slice(&s.stream.to_le_bytes());
                out.extend_from_slice(&s.word_pos.to_le_bytes());
            }
            None => out.push(0),
        }

        let mut table: Vec<(&str, Vec<usize>, bool, &[f32])> = vec![(
            "phi",
            vec![self.phi.m_max(), self.phi.n()],
            false,
            self.phi.rows(),
        )];
        if let Some(full) = &self.phi_full {
            table.push(("phi_full", vec![full.m_max(), full.n()], true, full.rows()));
        }
        for p in self.params.iter() {
            table.push((&p.name, p.value.shape().to_vec(), p.frozen, p.value.data()));
        }
        put_u32(&mut out, table.len());
        for (name, dims, frozen, _) in &table {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dims.len() as u8);
            for &d in dims {
                put_u32(&mut out, d);
            }
            out.push(*frozen as u8);
        }
        for (_, _, _, data) in &table {
            for v in *data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 1 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = bytes[4];
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        if bytes.len() < 9 {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }

        let mut cur = Cursor { buf: body, pos: 5 };
        let n = cur.u32()? as usize;
        let m_max = cur.u32()? as usize;
        let k_min = cur.u32()? as usize;
        let stage = Stage::from_u8(cur.u8()?)?;
        let meta_len = cur.u32()? as usize;
        let meta = std::str::from_utf8(cur.take(meta_len)?)
            .map_err(|_| Error::Format("checkpoint description is not UTF-8".into()))?
            .to_owned();
        let model = ModelSpec::from_meta(&meta)?;
        let config = TrainConfig::from_meta(&meta)?;
        let rng = match cur.u8()? {
            0 => None,
            1 => {
                let seed: [u8; 32] = cur.take(32)?.try_into().expect("32 bytes");
                let stream = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
                let word_pos = u128::from_le_bytes(cur.take(16)?.try_into().expect("16 bytes"));
                Some(RngState {
                    seed,
                    stream,
                    word_pos,
                })
            }
            other => return Err(Error::Format(format!("bad RNG flag {other}"))),
        };

        let count = cur.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_owned();
            let ndims = cur.u8()? as usize;
            let mut dims = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                dims.push(cur.u32()? as usize);
            }
            let frozen = cur.u8()? != 0;
            table.push((name, dims, frozen));
        }
        let mut tensors = Vec::with_capacity(table.len());
        for (name, dims, frozen) in table {
            let len = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
            let raw = cur.take(len.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, dims, frozen, data));
        }
        if cur.pos != body.len() {
            return Err(Error::Format("trailing bytes after payload".into()));
        }

        let mut iter = tensors.into_iter();
        let (name, dims, _, data) = iter
            .next()
            .ok_or_else(|| Error::Format("checkpoint has no tensors".into()))?;
        if name != "phi" || dims != [m_max, n] {
            return Err(Error::Format(format!("expected phi [{m_max}, {n}], found {name} {dims:?}")));
        }
        let phi = MeasurementMatrix::new(n, m_max, k_min, data)?;
        let mut rest: Vec<_> = iter.collect();
        let phi_full = if rest.first().is_some_and(|t| t.0 == "phi_full") {
            let (_, dims, _, data) = rest.remove(0);
            if dims.len() != 2 || dims[1] != n {
                return Err(Error::Format(format!("phi_full has shape {dims:?}")));
            }
            let k = config.k_min.min(dims[0]);
            Some(MeasurementMatrix::new(n, dims[0], k, data)?)
        } else {
            None
        };

        let mut net: Network<f32> = model.build(&mut stream_rng(0, 0))?;
        if net.params().len() != rest.len() {
            return Err(Error::Format(format!(
                "{} stored parameter tensors, model has {}",
                rest.len(),
                net.params().len()
            )));
        }
        let params = net.params_mut();
        for (i, (name, dims, frozen, data)) in rest.into_iter().enumerate() {
            let slot = params.get_mut(i);
            if slot.name != name || slot.value.shape() != dims.as_slice() {
                return Err(Error::Format(format!(
                    "stored tensor {name} {dims:?} does not match {} {:?}",
                    slot.name,
                    slot.value.shape()
                )));
            }
            slot.value.data_mut().copy_from_slice(&data);
            slot.frozen = frozen;
        }
        Ok(Self {
            version,
            stage,
            model,
            config,
            phi,
            phi_full,
            params: net.params().clone(),
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
