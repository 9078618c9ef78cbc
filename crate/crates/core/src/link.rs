//! Transport-block chain and slot generation.
//!
//! Each layer carries one transport block per slot: payload → CRC-16 →
//! LDPC → Gray QAM scaled by `1/√L`, mapped onto the data REs in row-major
//! `(s, t)` order. Coded bit `b` of the symbol on RE `(s, t)` sits at
//! `(s·T + t)·M + b` of an [`LlrGrid`].

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{apply_channel_traced, svd_precode, ChannelModel};
use crate::fec::{crc16_attach, crc16_check, Bit, LdpcCode, CRC_LEN};
use crate::grid::{snr_to_noise_variance, ChannelTensor, GridDims, MultiLayerGrid, ResourceGrid, RxTensor};
use crate::mcs::McsEntry;
use crate::modem::Constellation;
use crate::pilot::{superimpose, DmrsGrids, PilotBook};
use crate::{Error, Result};

/// Per-RE soft bits, shape `(S, T, M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LlrGrid {
    subcarriers: usize,
    symbols: usize,
    bits: usize,
    data: Vec<f64>,
}

impl LlrGrid {
    pub fn zeros(subcarriers: usize, symbols: usize, bits: usize) -> Self {
        LlrGrid {
            subcarriers,
            symbols,
            bits,
            data: vec![0.0; subcarriers * symbols * bits],
        }
    }

    pub fn from_vec(subcarriers: usize, symbols: usize, bits: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != subcarriers * symbols * bits {
            return Err(Error::DimensionMismatch(format!(
                "LLR grid has {} entries, expected {subcarriers}x{symbols}x{bits}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(LlrGrid {
            subcarriers,
            symbols,
            bits,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.subcarriers, self.symbols, self.bits)
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    /// The `M` LLRs of RE `(s, t)`.
    pub fn re(&self, s: usize, t: usize) -> &[f64] {
        let i = (s * self.symbols + t) * self.bits;
        &self.data[i..i + self.bits]
    }

    pub fn re_mut(&mut self, s: usize, t: usize) -> &mut [f64] {
        let i = (s * self.symbols + t) * self.bits;
        &mut self.data[i..i + self.bits]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Codes shared between codecs of equal `(n, k)`.
#[derive(Debug, Default)]
pub struct CodeCache {
    seed: u64,
    codes: HashMap<(usize, usize), Arc<LdpcCode>>,
}

impl CodeCache {
    pub fn new(seed: u64) -> Self {
        CodeCache {
            seed,
            codes: HashMap::new(),
        }
    }

    pub fn get(&mut self, n: usize, k: usize) -> Result<Arc<LdpcCode>> {
        if let Some(c) = self.codes.get(&(n, k)) {
            return Ok(c.clone());
        }
        let c = Arc::new(LdpcCode::construct(n, k, self.seed)?);
        self.codes.insert((n, k), c.clone());
        Ok(c)
    }
}

/// Outcome of decoding one transport block.
#[derive(Clone, Debug, PartialEq)]
pub struct TbDecision {
    pub payload: Vec<Bit>,
    pub crc_ok: bool,
    pub converged: bool,
    pub iterations: usize,
    /// Re-encoded codeword of the decoded information bits.
    pub reencoded: Vec<Bit>,
}

/// Encoder/decoder of one layer's transport block for a fixed MCS and data-RE set.
#[derive(Clone, Debug)]
pub struct TbCodec {
    mcs: McsEntry,
    code: Arc<LdpcCode>,
    constellation: Constellation,
    data_res: Vec<usize>,
    subcarriers: usize,
    symbols: usize,
    scale: f64,
}

impl TbCodec {
    /// `data_res` lists row-major RE indices `s·T + t` that carry data.
    /// The code has `n = |data_res|·M` and `k = round(n·γ)` including the CRC.
    pub fn new(
        mcs: &McsEntry,
        subcarriers: usize,
        symbols: usize,
        data_res: Vec<usize>,
        layers: usize,
        codes: &mut CodeCache,
    ) -> Result<Self> {
        mcs.validate()?;
        if data_res.iter().any(|&i| i >= subcarriers * symbols) {
            return Err(Error::InvalidDims("data RE index outside the grid".into()));
        }
        let n = data_res.len() * mcs.bits_per_symbol;
        let k = (n as f64 * mcs.rate()).round() as usize;
        if k <= CRC_LEN {
            return Err(Error::InvalidParameter(format!(
                "{n} coded bits at rate {} leave no payload",
                mcs.rate()
            )));
        }
        Ok(TbCodec {
            mcs: mcs.clone(),
            code: codes.get(n, k)?,
            constellation: Constellation::new(mcs.bits_per_symbol)?,
            data_res,
            subcarriers,
            symbols,
            scale: 1.0 / (layers as f64).sqrt(),
        })
    }

    /// Codec covering every RE of the grid.
    pub fn full_grid(mcs: &McsEntry, dims: &GridDims, codes: &mut CodeCache) -> Result<Self> {
        let all = (0..dims.res()).collect();
        Self::new(mcs, dims.subcarriers, dims.symbols, all, dims.layers, codes)
    }

    pub fn mcs(&self) -> &McsEntry {
        &self.mcs
    }

    pub fn code(&self) -> &LdpcCode {
        &self.code
    }

    pub fn payload_len(&self) -> usize {
        self.code.k() - CRC_LEN
    }

    pub fn data_res(&self) -> &[usize] {
        &self.data_res
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    /// Per-layer data amplitude `1/√L`.
    pub fn data_scale(&self) -> f64 {
        self.scale
    }

    pub fn encode(&self, payload: &[Bit]) -> Result<Vec<Bit>> {
        if payload.len() != self.payload_len() {
            return Err(Error::DimensionMismatch(format!(
                "payload has {} bits, codec expects {}",
                payload.len(),
                self.payload_len()
            )));
        }
        self.code.encode(&crc16_attach(payload)?)
    }

    /// Data grid `D` with zeros on non-data REs.
    pub fn modulate(&self, codeword: &[Bit]) -> Result<ResourceGrid> {
        let m = self.mcs.bits_per_symbol;
        if codeword.len() != self.data_res.len() * m {
            return Err(Error::DimensionMismatch("codeword length vs data REs".into()));
        }
        let mut g = ResourceGrid::zeros(self.subcarriers, self.symbols);
        let slice = g.as_mut_slice();
        for (bits, &re) in codeword.chunks(m).zip(&self.data_res) {
            slice[re] = self.constellation.map(bits) * self.scale;
        }
        Ok(g)
    }

    /// Codeword bits as a `(S, T, M)` label grid; non-data REs hold zero.
    pub fn label_grid(&self, codeword: &[Bit]) -> LlrGrid {
        let m = self.mcs.bits_per_symbol;
        let mut g = LlrGrid::zeros(self.subcarriers, self.symbols, m);
        for (bits, &re) in codeword.chunks(m).zip(&self.data_res) {
            for (dst, &b) in g.data[re * m..(re + 1) * m].iter_mut().zip(bits) {
                *dst = b as f64;
            }
        }
        g
    }

    /// Codeword-ordered LLRs read from the data REs.
    pub fn gather(&self, llrs: &LlrGrid) -> Result<Vec<f64>> {
        let m = self.mcs.bits_per_symbol;
        if llrs.shape() != (self.subcarriers, self.symbols, m) {
            return Err(Error::DimensionMismatch(format!(
                "LLR grid {:?} vs codec ({}, {}, {m})",
                llrs.shape(),
                self.subcarriers,
                self.symbols
            )));
        }
        Ok(self
            .data_res
            .iter()
            .flat_map(|&re| llrs.data[re * m..(re + 1) * m].iter().copied())
            .collect())
    }

    pub fn decode(&self, llrs: &LlrGrid, max_iters: usize) -> Result<TbDecision> {
        let out = self.code.decode(&self.gather(llrs)?, max_iters)?;
        let crc_ok = crc16_check(&out.info)?;
        let reencoded = self.code.encode(&out.info)?;
        Ok(TbDecision {
            payload: out.info[..self.payload_len()].to_vec(),
            crc_ok,
            converged: out.converged,
            iterations: out.iterations,
            reencoded,
        })
    }

    /// `D̂ = Mod(Enc(Dec(V̂)))` scaled to per-RE power `1/L`.
    pub fn reconstruct(&self, decision: &TbDecision) -> Result<ResourceGrid> {
        self.modulate(&decision.reencoded)
    }
}

/// How pilots are transmitted.
#[derive(Clone, Debug)]
pub enum TxScheme {
    Sip { alpha: f64, book: PilotBook },
    Dmrs { grids: DmrsGrids },
}

impl TxScheme {
    /// Data-RE ratio as `(numerator, denominator)`.
    pub fn omega(&self) -> (usize, usize) {
        match self {
            TxScheme::Sip { book, .. } => {
                let (s, t) = book.shape();
                (s * t, s * t)
            }
            TxScheme::Dmrs { grids } => grids.omega(),
        }
    }
}

/// Static description of a link: geometry, channel, MCS and pilots.
#[derive(Clone, Debug)]
pub struct LinkSetup {
    pub dims: GridDims,
    pub channel: ChannelModel,
    pub scheme: TxScheme,
    pub codec: TbCodec,
}

impl LinkSetup {
    pub fn new(dims: GridDims, channel: ChannelModel, scheme: TxScheme, mcs: &McsEntry, codes: &mut CodeCache) -> Result<Self> {
        dims.validate()?;
        if (channel.subcarriers, channel.symbols, channel.rx, channel.tx)
            != (dims.subcarriers, dims.symbols, dims.rx_antennas, dims.tx_antennas)
        {
            return Err(Error::DimensionMismatch("channel model does not match grid dims".into()));
        }
        let codec = match &scheme {
            TxScheme::Sip { alpha, book } => {
                if book.layers() != dims.layers || book.shape() != (dims.subcarriers, dims.symbols) {
                    return Err(Error::DimensionMismatch("pilot book does not match grid dims".into()));
                }
                if !(0.0..1.0).contains(alpha) {
                    return Err(Error::InvalidParameter(format!("alpha {alpha} outside [0, 1)")));
                }
                TbCodec::full_grid(mcs, &dims, codes)?
            }
            TxScheme::Dmrs { grids } => {
                if grids.pilots.num_layers() != dims.layers {
                    return Err(Error::DimensionMismatch("DMRS grids do not match layer count".into()));
                }
                let res = (0..dims.res()).filter(|&i| grids.data_mask[i]).collect();
                TbCodec::new(mcs, dims.subcarriers, dims.symbols, res, dims.layers, codes)?
            }
        };
        Ok(LinkSetup {
            dims,
            channel,
            scheme,
            codec,
        })
    }

    /// Generates slot `slot_index` of the stream identified by `seed`.
    /// Each slot draws from its own ChaCha stream, so slots can be produced
    /// in any order or in parallel.
    pub fn generate(&self, seed: u64, slot_index: u64, snr_db: f64) -> Result<Slot> {
        let mut rng = slot_rng(seed, slot_index);
        let g = self.channel.sample(&mut rng);
        let (_, h) = svd_precode(&g, self.dims.layers)?;
        self.transmit_over(h, &mut rng, snr_db)
    }

    /// Transmits fresh random payloads over a given channel.
    pub fn transmit_over<R: Rng + ?Sized>(&self, h: ChannelTensor, rng: &mut R, snr_db: f64) -> Result<Slot> {
        if !snr_db.is_finite() {
            return Err(Error::InvalidParameter("SNR must be finite".into()));
        }
        let layers = self.dims.layers;
        let mut payloads = Vec::with_capacity(layers);
        let mut codewords = Vec::with_capacity(layers);
        let mut data = Vec::with_capacity(layers);
        for _ in 0..layers {
            let payload: Vec<Bit> = (0..self.codec.payload_len()).map(|_| rng.random::<bool>() as Bit).collect();
            let cw = self.codec.encode(&payload)?;
            data.push(self.codec.modulate(&cw)?);
            payloads.push(payload);
            codewords.push(cw);
        }
        let data = MultiLayerGrid::from_layers(data)?;
        let tx = match &self.scheme {
            TxScheme::Sip { alpha, book } => superimpose(&data, book, *alpha)?,
            TxScheme::Dmrs { grids } => grids.assemble(&data)?,
        };
        let sigma2 = snr_to_noise_variance(snr_db);
        let (y, noise) = apply_channel_traced(&h, &tx, sigma2, rng)?;
        Ok(Slot {
            payloads,
            codewords,
            data,
            tx,
            h,
            y,
            noise,
            sigma2,
            snr_db,
        })
    }
}

/// Per-slot random stream: `(seed, slot_index)` selects a ChaCha stream.
pub fn slot_rng(seed: u64, slot_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot_index);
    rng
}

/// One simulated slot with all ground truth retained.
#[derive(Clone, Debug)]
pub struct Slot {
    pub payloads: Vec<Vec<Bit>>,
    pub codewords: Vec<Vec<Bit>>,
    /// Data grids `D_l` (already scaled by `1/√L`).
    pub data: MultiLayerGrid,
    pub tx: MultiLayerGrid,
    pub h: ChannelTensor,
    pub y: RxTensor,
    pub noise: RxTensor,
    pub sigma2: f64,
    pub snr_db: f64,
}

/// Number of payload bits that differ between two blocks.
pub fn bit_errors(a: &[Bit], b: &[Bit]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Ideal LLRs of a codeword with magnitude `mag`.
pub fn perfect_llrs(codec: &TbCodec, codeword: &[Bit], mag: f64) -> LlrGrid {
    let labels = codec.label_grid(codeword);
    let data = labels.data.iter().map(|&b| if b > 0.5 { -mag } else { mag }).collect();
    LlrGrid {
        data,
        ..labels
    }
}
