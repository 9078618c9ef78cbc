//! Binary checkpoint format, all integers `u32` and all values `f32`,
//! little-endian:
//!
//! ```text
//! magic "SIPNNCK\0" | version | byte-order mark 0x01020304 | dtype (1 = f32)
//! rx_antennas | m_max
//! CE: in_channels, width, blocks, out_channels
//! DD: in_channels, width, blocks, out_channels
//! metadata length | metadata (JSON)
//! tensors: CE parameters, CE running stats, DD parameters, DD running stats,
//!          each as length | values, in declaration order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, ReceiverNets};
use crate::resnet::{NetSpec, ResNet};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SIPNNCK\0";
pub const VERSION: u32 = 1;
const BYTE_ORDER_MARK: u32 = 0x0102_0304;
const DTYPE_F32: u32 = 1;
/// Upper bound on any length field, against corrupt files.
const MAX_LEN: u32 = 1 << 28;

/// Training context stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub alpha: f64,
    pub iterations: usize,
    pub layers: Vec<usize>,
    pub mcs: Vec<u32>,
    pub steps: usize,
    #[serde(default)]
    pub note: String,
}

fn put(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_spec(out: &mut Vec<u8>, s: &NetSpec) -> Result<()> {
    for v in [s.in_channels, s.width, s.blocks, s.out_channels] {
        put(out, to_u32(v)?);
    }
    Ok(())
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).ok().filter(|&x| x < MAX_LEN).ok_or_else(|| Error::Checkpoint(format!("value {v} too large")))
}

fn put_net(out: &mut Vec<u8>, net: &ResNet<f32>) -> Result<()> {
    for t in net.params().into_iter().chain(net.buffers()) {
        put(out, to_u32(t.len())?);
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

pub fn to_bytes(nets: &ReceiverNets<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put(&mut out, VERSION);
    put(&mut out, BYTE_ORDER_MARK);
    put(&mut out, DTYPE_F32);
    put(&mut out, to_u32(nets.config.rx_antennas)?);
    put(&mut out, to_u32(nets.config.m_max)?);
    put_spec(&mut out, &nets.ce.spec())?;
    put_spec(&mut out, &nets.dd.spec())?;
    let json = serde_json::to_vec(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    put(&mut out, to_u32(json.len())?);
    out.extend_from_slice(&json);
    put_net(&mut out, &nets.ce)?;
    put_net(&mut out, &nets.dd)?;
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u32()?;
        if v >= MAX_LEN {
            return Err(Error::Checkpoint(format!("length field {v} out of range")));
        }
        Ok(v as usize)
    }

    fn spec(&mut self) -> Result<NetSpec> {
        Ok(NetSpec {
            in_channels: self.len()?,
            width: self.len()?,
            blocks: self.len()?,
            out_channels: self.len()?,
        })
    }

    fn fill(&mut self, dst: &mut Vec<f32>) -> Result<()> {
        let n = self.len()?;
        if n != dst.len() {
            return Err(Error::Checkpoint(format!("tensor has {n} values, expected {}", dst.len())));
        }
        let bytes = self.take(4 * n)?;
        for (d, b) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
            *d = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        Ok(())
    }

    fn net(&mut self, net: &mut ResNet<f32>) -> Result<()> {
        for t in net.params_mut() {
            self.fill(t)?;
        }
        for t in net.buffers_mut() {
            self.fill(t)?;
        }
        Ok(())
    }
}

/// Header fields only, without reading tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
}

fn read_header(r: &mut Reader<'_>) -> Result<(CheckpointHeader, NetSpec, NetSpec)> {
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    if r.u32()? != BYTE_ORDER_MARK {
        return Err(Error::Checkpoint("byte-order mark mismatch".into()));
    }
    let dtype = r.u32()?;
    if dtype != DTYPE_F32 {
        return Err(Error::Checkpoint(format!("unsupported dtype {dtype}")));
    }
    let rx_antennas = r.len()?;
    let m_max = r.len()?;
    let ce = r.spec()?;
    let dd = r.spec()?;
    let n = r.len()?;
    let meta = serde_json::from_slice(r.take(n)?).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let config = ModelConfig {
        rx_antennas,
        m_max,
        ce_width: ce.width,
        ce_blocks: ce.blocks,
        dd_width: dd.width,
        dd_blocks: dd.blocks,
    };
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    if ce != config.ce_spec() || dd != config.dd_spec() {
        return Err(Error::Checkpoint("network shapes disagree with the header".into()));
    }
    Ok((CheckpointHeader { version, config, meta }, ce, dd))
}

pub fn from_bytes(buf: &[u8]) -> Result<(ReceiverNets<f32>, CheckpointMeta)> {
    let mut r = Reader { buf, pos: 0 };
    let (header, ce_spec, dd_spec) = read_header(&mut r)?;
    let mut ce = ResNet::zeros(ce_spec);
    let mut dd = ResNet::zeros(dd_spec);
    r.net(&mut ce)?;
    r.net(&mut dd)?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let nets = ReceiverNets {
        config: header.config,
        ce,
        dd,
    };
    if !nets.is_finite() {
        return Err(Error::Checkpoint("non-finite values".into()));
    }
    Ok((nets, header.meta))
}

pub fn read_header_from(path: &Path) -> Result<CheckpointHeader> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(read_header(&mut Reader { buf: &buf, pos: 0 })?.0)
}

pub fn save(path: &Path, nets: &ReceiverNets<f32>, meta: &CheckpointMeta) -> Result<()> {
    let bytes = to_bytes(nets, meta)?;
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ReceiverNets<f32>, CheckpointMeta)> {
    from_bytes(&fs::read(path)?)
}
