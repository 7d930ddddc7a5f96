//! Binary checkpoint: topology header, parameter tensors, batch-norm buffers
//! and an opaque UTF-8 trailer for caller metadata.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "USCK" | version u16 | variant u8 | 0u8
//! in_h u32 | in_w u32 | out_h u32 | out_w u32 | init_seed u64
//! n_enc u32 | enc widths u32.. | n_dec u32 | dec widths u32..
//! n_params u32 | { name_len u16 | name | count u64 | f32.. }..
//! n_buffers u32 | { count u64 | mean f32.. | var f32.. }..
//! extra_len u64 | extra bytes
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::network::{Network, NetworkConfig, Variant};

pub const MAGIC: &[u8; 4] = b"USCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network<f32>,
    /// Caller metadata, stored verbatim.
    pub extra: String,
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| NnError::Format(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s(w: &mut impl Write, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn vec(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        (&mut self.inner).take(n as u64).read_to_end(&mut b)?;
        if b.len() != n {
            return Err(NnError::Format("unexpected end of checkpoint".into()));
        }
        Ok(b)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.vec(n.checked_mul(4).ok_or_else(|| NnError::Format("tensor too large".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

fn truncated(e: std::io::Error) -> NnError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        NnError::Format("unexpected end of checkpoint".into())
    } else {
        NnError::Io(e)
    }
}

impl Checkpoint {
    pub fn new(network: Network<f32>, extra: impl Into<String>) -> Self {
        Self {
            network,
            extra: extra.into(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let cfg = self.network.config();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[cfg.variant.code(), 0])?;
        for d in [cfg.in_h, cfg.in_w, cfg.out_h, cfg.out_w] {
            put_u32(w, d)?;
        }
        w.write_all(&cfg.init_seed.to_le_bytes())?;
        for plan in [&cfg.encoder_channels, &cfg.decoder_channels] {
            put_u32(w, plan.len())?;
            for &c in plan.iter() {
                put_u32(w, c)?;
            }
        }
        let params = self.network.params();
        put_u32(w, params.len())?;
        for p in params {
            let name = p.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| NnError::Format("parameter name too long".into()))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.value.len() as u64).to_le_bytes())?;
            put_f32s(w, &p.value)?;
        }
        let buffers = self.network.buffers();
        put_u32(w, buffers.len())?;
        for (_, mean, var) in buffers {
            w.write_all(&(mean.len() as u64).to_le_bytes())?;
            put_f32s(w, mean)?;
            put_f32s(w, var)?;
        }
        w.write_all(&(self.extra.len() as u64).to_le_bytes())?;
        w.write_all(self.extra.as_bytes())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut r = Reader { inner: r };
        if &r.bytes::<4>()? != MAGIC {
            return Err(NnError::Format("bad checkpoint magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(NnError::Format(format!("unsupported checkpoint version {version}")));
        }
        let [code, _] = r.bytes::<2>()?;
        let variant = Variant::from_code(code).ok_or_else(|| NnError::Format(format!("unknown variant code {code}")))?;
        let (in_h, in_w, out_h, out_w) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let init_seed = r.u64()?;
        let mut plans = Vec::new();
        for _ in 0..2 {
            let n = r.u32()?;
            if n > 64 {
                return Err(NnError::Format("implausible channel plan length".into()));
            }
            plans.push((0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        }
        let decoder_channels = plans.pop().unwrap_or_default();
        let encoder_channels = plans.pop().unwrap_or_default();
        let config = NetworkConfig {
            variant,
            in_h,
            in_w,
            out_h,
            out_w,
            encoder_channels,
            decoder_channels,
            init_seed,
        };
        let mut network = Network::<f32>::new(config).map_err(|e| NnError::Format(format!("bad topology: {e}")))?;

        let n_params = r.u32()?;
        let mut params = network.params_mut();
        if n_params != params.len() {
            return Err(NnError::Format(format!(
                "checkpoint has {n_params} parameter tensors, topology needs {}",
                params.len()
            )));
        }
        for p in params.iter_mut() {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.vec(len)?).map_err(|_| NnError::Format("parameter name not UTF-8".into()))?;
            let count = r.u64()? as usize;
            if name != p.name || count != p.value.len() {
                return Err(NnError::Format(format!(
                    "parameter '{name}' ({count}) does not match '{}' ({})",
                    p.name,
                    p.value.len()
                )));
            }
            p.value = r.f32s(count)?;
        }
        drop(params);
        let n_buffers = r.u32()?;
        let mut buffers = network.buffers_mut();
        if n_buffers != buffers.len() {
            return Err(NnError::Format("batch-norm buffer count mismatch".into()));
        }
        for (mean, var) in buffers.iter_mut() {
            let count = r.u64()? as usize;
            if count != mean.len() {
                return Err(NnError::Format("batch-norm buffer size mismatch".into()));
            }
            **mean = r.f32s(count)?;
            **var = r.f32s(count)?;
        }
        drop(buffers);
        let extra_len = r.u64()? as usize;
        if extra_len > (1 << 30) {
            return Err(NnError::Format("implausible metadata length".into()));
        }
        let extra = String::from_utf8(r.vec(extra_len)?).map_err(|_| NnError::Format("metadata not UTF-8".into()))?;
        let mut rest = [0u8; 1];
        if r.inner.read(&mut rest)? != 0 {
            return Err(NnError::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { network, extra })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
