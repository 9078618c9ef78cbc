//! Training-sample files: a fixed header followed by fixed-stride records,
//! all little-endian, complex values as interleaved `f32` pairs.
//!
//! ```text
//! header:  magic "SIPDSET\0" | version | byte-order mark 0x01020304 | dtype (1 = f32)
//!          S | T | Nr | L_max | M_max | count | record bytes        (u32 each)
//! record:  mcs (u32) | layers (u32) | snr_db (f32) | sigma2 (f32)
//!          Y  (S·T·Nr complex)
//!          H  (S·T·L_max·Nr complex, layers ≥ L zero)
//!          P  (L_max·S·T complex, unit-power pilot grids, layers ≥ L zero)
//!          bits (L_max·S·T·M_max bytes, codeword bits zero-padded)
//! ```
//!
//! Sample `n` is the slot the trainer draws as its `n`-th training slot for
//! the same seed and SNR range.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sipsim_core::link::{CodeCache, LinkSetup, Slot, TxScheme};
use sipsim_core::pilot::PilotBook;
use sipsim_core::McsTable;
use sipsim_neural::train::training_snr;

use crate::config::RunConfig;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SIPDSET\0";
pub const VERSION: u32 = 1;
const BYTE_ORDER_MARK: u32 = 0x0102_0304;
const DTYPE_F32: u32 = 1;
const HEADER_WORDS: usize = 10;
pub const HEADER_BYTES: usize = 8 + 4 * HEADER_WORDS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub subcarriers: usize,
    pub symbols: usize,
    pub rx_antennas: usize,
    pub max_layers: usize,
    pub max_bits: usize,
    pub count: usize,
}

impl DatasetHeader {
    pub fn record_bytes(&self) -> usize {
        let re = self.subcarriers * self.symbols;
        16 + 8 * re * self.rx_antennas
            + 8 * re * self.max_layers * self.rx_antennas
            + 8 * re * self.max_layers
            + re * self.max_layers * self.max_bits
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub mcs: u32,
    pub layers: usize,
    pub snr_db: f32,
    pub sigma2: f32,
    pub y: Vec<f32>,
    pub h: Vec<f32>,
    pub pilots: Vec<f32>,
    pub bits: Vec<u8>,
}

fn push_c(out: &mut Vec<f32>, z: sipsim_core::C64) {
    out.push(z.re as f32);
    out.push(z.im as f32);
}

/// Packs one slot into the fixed record layout.
pub fn sample_of(header: &DatasetHeader, mcs: u32, slot: &Slot, book: &PilotBook) -> Sample {
    let (s_count, t_count, nr) = slot.y.shape();
    let layers = slot.h.num_layers();
    let (lm, mm) = (header.max_layers, header.max_bits);
    let mut y = Vec::with_capacity(2 * s_count * t_count * nr);
    for z in slot.y.as_slice() {
        push_c(&mut y, *z);
    }
    let mut h = Vec::with_capacity(2 * s_count * t_count * lm * nr);
    for s in 0..s_count {
        for t in 0..t_count {
            for l in 0..lm {
                for r in 0..nr {
                    let z = if l < layers { slot.h.get(s, t, l, r) } else { Default::default() };
                    push_c(&mut h, z);
                }
            }
        }
    }
    let mut pilots = Vec::with_capacity(2 * lm * s_count * t_count);
    for l in 0..lm {
        for i in 0..s_count * t_count {
            let z = if l < layers { book.grid(l).as_slice()[i] } else { Default::default() };
            push_c(&mut pilots, z);
        }
    }
    let per_layer = s_count * t_count * mm;
    let mut bits = vec![0u8; lm * per_layer];
    for (l, cw) in slot.codewords.iter().enumerate() {
        bits[l * per_layer..l * per_layer + cw.len()].copy_from_slice(cw);
    }
    Sample {
        mcs,
        layers,
        snr_db: slot.snr_db as f32,
        sigma2: slot.sigma2 as f32,
        y,
        h,
        pilots,
        bits,
    }
}

fn put(out: &mut impl Write, v: u32) -> Result<()> {
    Ok(out.write_all(&v.to_le_bytes())?)
}

fn put_f32s(out: &mut impl Write, vs: &[f32]) -> Result<()> {
    for v in vs {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit the dataset header")))
}

pub fn write_header(out: &mut impl Write, h: &DatasetHeader) -> Result<()> {
    out.write_all(MAGIC)?;
    for v in [
        VERSION,
        BYTE_ORDER_MARK,
        DTYPE_F32,
        u32_of(h.subcarriers)?,
        u32_of(h.symbols)?,
        u32_of(h.rx_antennas)?,
        u32_of(h.max_layers)?,
        u32_of(h.max_bits)?,
        u32_of(h.count)?,
        u32_of(h.record_bytes())?,
    ] {
        put(out, v)?;
    }
    Ok(())
}

pub fn write_sample(out: &mut impl Write, h: &DatasetHeader, s: &Sample) -> Result<()> {
    let re = h.subcarriers * h.symbols;
    if s.y.len() != 2 * re * h.rx_antennas
        || s.h.len() != 2 * re * h.max_layers * h.rx_antennas
        || s.pilots.len() != 2 * re * h.max_layers
        || s.bits.len() != re * h.max_layers * h.max_bits
    {
        return Err(Error::Config("sample does not match the dataset header".into()));
    }
    put(out, s.mcs)?;
    put(out, u32_of(s.layers)?)?;
    put_f32s(out, &[s.snr_db, s.sigma2])?;
    put_f32s(out, &s.y)?;
    put_f32s(out, &s.h)?;
    put_f32s(out, &s.pilots)?;
    out.write_all(&s.bits)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Dataset(msg.into())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; 4 * n];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

pub fn read_header(r: &mut impl Read) -> Result<DatasetHeader> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    if get_u32(r)? != BYTE_ORDER_MARK {
        return Err(bad("byte-order mark mismatch"));
    }
    if get_u32(r)? != DTYPE_F32 {
        return Err(bad("unsupported dtype"));
    }
    let mut w = [0usize; 7];
    for v in &mut w {
        *v = get_u32(r)? as usize;
    }
    let h = DatasetHeader {
        subcarriers: w[0],
        symbols: w[1],
        rx_antennas: w[2],
        max_layers: w[3],
        max_bits: w[4],
        count: w[5],
    };
    if h.record_bytes() != w[6] {
        return Err(bad(format!("record size {} disagrees with the dimensions", w[6])));
    }
    Ok(h)
}

pub fn read_sample(r: &mut impl Read, h: &DatasetHeader) -> Result<Sample> {
    let re = h.subcarriers * h.symbols;
    let mcs = get_u32(r)?;
    let layers = get_u32(r)? as usize;
    if layers == 0 || layers > h.max_layers {
        return Err(bad(format!("record with {layers} layers")));
    }
    let head = get_f32s(r, 2)?;
    let y = get_f32s(r, 2 * re * h.rx_antennas)?;
    let hh = get_f32s(r, 2 * re * h.max_layers * h.rx_antennas)?;
    let pilots = get_f32s(r, 2 * re * h.max_layers)?;
    let mut bits = vec![0u8; re * h.max_layers * h.max_bits];
    r.read_exact(&mut bits)?;
    Ok(Sample {
        mcs,
        layers,
        snr_db: head[0],
        sigma2: head[1],
        y,
        h: hh,
        pilots,
        bits,
    })
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Sample>)> {
    let mut r = BufReader::new(File::open(path)?);
    let h = read_header(&mut r)?;
    let samples = (0..h.count).map(|_| read_sample(&mut r, &h)).collect::<Result<Vec<_>>>()?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after the last record"));
    }
    Ok((h, samples))
}

/// Writes `count` samples of the configured SIP link. SNRs are uniform on
/// `snr_db`; layer counts and MCS cycle round-robin over the configured lists.
pub fn generate_dataset(cfg: &RunConfig, count: usize, seed: u64, snr_db: (f64, f64), path: &Path) -> Result<DatasetHeader> {
    if count == 0 {
        return Err(Error::Config("dataset needs at least one sample".into()));
    }
    let (lo, hi) = snr_db;
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("SNR range {lo}..{hi} dB")));
    }
    let table = McsTable::default();
    let layers = cfg.layer_list();
    let mcs = cfg.mcs_list();
    let header = DatasetHeader {
        subcarriers: cfg.grid.subcarriers,
        symbols: cfg.grid.symbols,
        rx_antennas: cfg.grid.rx_antennas,
        max_layers: *layers.iter().max().expect("validated non-empty"),
        max_bits: mcs.iter().map(|&m| table.get(m).map(|e| e.bits_per_symbol)).collect::<sipsim_core::Result<Vec<_>>>()?.into_iter().max().unwrap_or(2),
        count,
    };
    let model = cfg.channel_model()?;
    let mut codes = CodeCache::new(cfg.link.pilot_seed);
    let mut links: Vec<(usize, u32, LinkSetup, PilotBook)> = Vec::new();
    for &l in &layers {
        for &m in &mcs {
            if links.iter().any(|(a, b, _, _)| *a == l && *b == m) {
                continue;
            }
            let dims = cfg.dims(l)?;
            let book = PilotBook::build(&dims, cfg.link.pilot_seed)?;
            let scheme = TxScheme::Sip {
                alpha: cfg.link.alpha,
                book: book.clone(),
            };
            links.push((l, m, LinkSetup::new(dims, model.clone(), scheme, table.get(m)?, &mut codes)?, book));
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    write_header(&mut out, &header)?;
    for n in 0..count as u64 {
        let l = layers[(n % layers.len() as u64) as usize];
        let m = mcs[(n % mcs.len() as u64) as usize];
        let (_, _, link, book) = links.iter().find(|(a, b, _, _)| *a == l && *b == m).expect("link built");
        let snr = training_snr(seed, n, snr_db);
        let slot = link.generate(seed, n, snr)?;
        write_sample(&mut out, &header, &sample_of(&header, m, &slot, book))?;
    }
    out.flush()?;
    Ok(header)
}
