//! Network weights on disk.
//!
//! Layout, all integers little-endian: `"UNW1"`, `u32` format version, the
//! 32-byte SHA-256 digest of the network configuration, `u32` record count,
//! then per record `u32` name length, name bytes, `u8` dtype (0 = `f32`),
//! `u32` rank, `rank` `u32` dimensions, and the raw `f32` values. Records
//! follow parameter order and include the batch-norm buffers.

use std::fs;
use std::path::Path;

use helmnet_nn::{NetworkWeights, ParamKind, Tensor4, UNetConfig};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{Network, NetworkKind};

pub const MAGIC: &[u8; 4] = b"UNW1";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Buffers are recognized by name; everything else is trainable.
const BUFFER_SUFFIXES: [&str; 3] = [".running_mean", ".running_var", ".updates"];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub weights: NetworkWeights,
}

/// Digest of the architecture a checkpoint belongs to.
pub fn config_digest(kind: NetworkKind, cfg: &UNetConfig) -> [u8; 32] {
    let text = format!(
        "kind={kind:?};levels={};base={};resnet={};bottleneck={};in={};out={}",
        cfg.levels, cfg.base_channels, cfg.resnet_per_level, cfg.bottleneck_resnets, cfg.in_channels, cfg.out_channels
    );
    Sha256::digest(text.as_bytes()).into()
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let u32_of = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Format(format!("{what} does not fit u32")))
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&ckpt.digest);
    buf.extend_from_slice(&u32_of(ckpt.weights.params().len(), "record count")?.to_le_bytes());
    for p in ckpt.weights.params() {
        buf.extend_from_slice(&u32_of(p.name.len(), "name length")?.to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(DTYPE_F32);
        let shape = p.value.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            buf.extend_from_slice(&u32_of(d, "dimension")?.to_le_bytes());
        }
        for v in p.value.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (a, b) = self.bytes.split_at(n);
        self.bytes = b;
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a checkpoint completely before returning anything.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let count = r.u32()? as usize;
    let mut weights = NetworkWeights::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("non-UTF-8 parameter name".into()))?
            .to_string();
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype {dtype} for `{name}`")));
        }
        let rank = r.u32()? as usize;
        if rank != 4 {
            return Err(Error::Format(format!("`{name}` has rank {rank}, expected 4")));
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32()? as usize;
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("`{name}` is too large")))?;
        let data = r
            .take(n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let kind = if BUFFER_SUFFIXES.iter().any(|s| name.ends_with(s)) {
            ParamKind::Buffer
        } else {
            ParamKind::Trainable
        };
        weights.insert(&name, kind, Tensor4::from_vec(shape, data)?)?;
    }
    if !r.bytes.is_empty() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(Checkpoint { digest, weights })
}

pub fn save_checkpoint(network: &Network, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        digest: config_digest(network.kind(), network.config()),
        weights: network.weights(),
    };
    fs::write(path, encode(&ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

/// Rebuilds a network of the given architecture from a checkpoint, checking
/// the digest and every parameter shape.
pub fn load_network(path: &Path, cfg: &UNetConfig) -> Result<Network> {
    let ckpt = load_checkpoint(path)?;
    let kind = Network::kind_of(&ckpt.weights);
    let mut net = Network::new(kind, cfg.clone(), 0)?;
    if ckpt.digest != config_digest(kind, net.config()) {
        return Err(Error::Format(format!(
            "{} was written for a different network configuration",
            path.display()
        )));
    }
    net.load_weights(ckpt.weights)?;
    Ok(net)
}
