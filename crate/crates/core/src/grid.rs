//! Resource-grid tensors and the SNR/noise arithmetic shared by the whole link.
//!
//! All tensors are dense, row-major and complex double precision. The
//! innermost dimension is the last one listed in the type name, so an
//! [`RxTensor`] is laid out as `(S, T, Nr)` and a [`ChannelTensor`] as
//! `(S, T, L, Nr)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type C64 = Complex64;

/// Converts an SNR in dB to the per-element noise variance.
///
/// Transmit grids are normalized to unit total power per resource element,
/// so the variance is simply `10^(-snr/10)`.
pub fn snr_to_noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Inverse of [`snr_to_noise_variance`].
pub fn noise_variance_to_snr(sigma2: f64) -> f64 {
    -10.0 * sigma2.log10()
}

/// Slot geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    /// Subcarriers `S`.
    pub subcarriers: usize,
    /// OFDM symbols per slot `T`.
    pub symbols: usize,
    /// Transmission layers `L`.
    pub layers: usize,
    /// Receive antennas `Nr`.
    pub rx_antennas: usize,
    /// Transmit antennas `Nt`.
    pub tx_antennas: usize,
}

impl GridDims {
    pub fn new(
        subcarriers: usize,
        symbols: usize,
        layers: usize,
        rx_antennas: usize,
        tx_antennas: usize,
    ) -> Result<Self> {
        let dims = GridDims {
            subcarriers,
            symbols,
            layers,
            rx_antennas,
            tx_antennas,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0
            || self.symbols == 0
            || self.layers == 0
            || self.rx_antennas == 0
            || self.tx_antennas == 0
        {
            return Err(Error::InvalidDims(format!("all dimensions must be positive: {self:?}")));
        }
        if (self.subcarriers * self.symbols) % self.layers != 0 {
            return Err(Error::InvalidDims(format!(
                "S*T = {} is not divisible by L = {}",
                self.subcarriers * self.symbols,
                self.layers
            )));
        }
        if self.layers > self.rx_antennas.min(self.tx_antennas) {
            return Err(Error::InvalidDims(format!(
                "L = {} exceeds min(Nt, Nr) = {}",
                self.layers,
                self.rx_antennas.min(self.tx_antennas)
            )));
        }
        Ok(())
    }

    /// Resource elements per layer, `S*T`.
    pub fn res(&self) -> usize {
        self.subcarriers * self.symbols
    }

    /// Number of CDM groups `G = S*T/L`.
    pub fn groups(&self) -> usize {
        self.res() / self.layers
    }

    /// Same geometry with a different layer count.
    pub fn with_layers(&self, layers: usize) -> Result<Self> {
        GridDims::new(self.subcarriers, self.symbols, layers, self.rx_antennas, self.tx_antennas)
    }
}

fn check_finite(data: &[C64]) -> Result<()> {
    if data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// One `S x T` plane of complex symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct ResourceGrid {
    subcarriers: usize,
    symbols: usize,
    data: Vec<C64>,
}

impl ResourceGrid {
    pub fn zeros(subcarriers: usize, symbols: usize) -> Self {
        ResourceGrid {
            subcarriers,
            symbols,
            data: vec![C64::new(0.0, 0.0); subcarriers * symbols],
        }
    }

    pub fn filled(subcarriers: usize, symbols: usize, value: C64) -> Self {
        ResourceGrid {
            subcarriers,
            symbols,
            data: vec![value; subcarriers * symbols],
        }
    }

    pub fn from_vec(subcarriers: usize, symbols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != subcarriers * symbols {
            return Err(Error::DimensionMismatch(format!(
                "grid data has {} entries, expected {}x{}",
                data.len(),
                subcarriers,
                symbols
            )));
        }
        check_finite(&data)?;
        Ok(ResourceGrid {
            subcarriers,
            symbols,
            data,
        })
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.subcarriers, self.symbols)
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize) -> C64 {
        self.data[s * self.symbols + t]
    }

    #[inline]
    pub fn set(&mut self, s: usize, t: usize, value: C64) {
        self.data[s * self.symbols + t] = value;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn scaled(&self, k: f64) -> ResourceGrid {
        ResourceGrid {
            subcarriers: self.subcarriers,
            symbols: self.symbols,
            data: self.data.iter().map(|z| z * k).collect(),
        }
    }

    /// `a*self + b*other`, elementwise.
    pub fn axpby(&self, a: f64, other: &ResourceGrid, b: f64) -> Result<ResourceGrid> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "grid {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(ResourceGrid {
            subcarriers: self.subcarriers,
            symbols: self.symbols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| x * a + y * b)
                .collect(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}

/// Elementwise (Hadamard) product of a channel plane and a symbol plane.
pub fn hadamard_apply(h: &ResourceGrid, x: &ResourceGrid) -> Result<ResourceGrid> {
    if h.shape() != x.shape() {
        return Err(Error::DimensionMismatch(format!(
            "hadamard operands {:?} vs {:?}",
            h.shape(),
            x.shape()
        )));
    }
    Ok(ResourceGrid {
        subcarriers: h.subcarriers,
        symbols: h.symbols,
        data: h.data.iter().zip(&x.data).map(|(a, b)| a * b).collect(),
    })
}

/// `L` resource grids of identical shape, one per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiLayerGrid {
    layers: Vec<ResourceGrid>,
}

impl MultiLayerGrid {
    pub fn zeros(subcarriers: usize, symbols: usize, layers: usize) -> Self {
        MultiLayerGrid {
            layers: vec![ResourceGrid::zeros(subcarriers, symbols); layers],
        }
    }

    pub fn from_layers(layers: Vec<ResourceGrid>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidDims("a multi-layer grid needs at least one layer".into()))?
            .shape();
        if layers.iter().any(|g| g.shape() != first) {
            return Err(Error::DimensionMismatch("layer grids differ in shape".into()));
        }
        Ok(MultiLayerGrid { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.layers[0].shape()
    }

    pub fn layer(&self, l: usize) -> &ResourceGrid {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut ResourceGrid {
        &mut self.layers[l]
    }

    pub fn layers(&self) -> &[ResourceGrid] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ResourceGrid] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<ResourceGrid> {
        self.layers
    }
}

/// Mean per-RE total power across layers, `(1/(S*T)) * sum_{s,t,l} |x|^2`.
pub fn grid_power(x: &MultiLayerGrid) -> f64 {
    let (s, t) = x.shape();
    let total: f64 = x
        .layers()
        .iter()
        .flat_map(|g| g.as_slice())
        .map(|z| z.norm_sqr())
        .sum();
    total / (s * t) as f64
}

/// Received signal (or any per-receive-antenna tensor), shape `(S, T, Nr)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RxTensor {
    subcarriers: usize,
    symbols: usize,
    antennas: usize,
    data: Vec<C64>,
}

impl RxTensor {
    pub fn zeros(subcarriers: usize, symbols: usize, antennas: usize) -> Self {
        RxTensor {
            subcarriers,
            symbols,
            antennas,
            data: vec![C64::new(0.0, 0.0); subcarriers * symbols * antennas],
        }
    }

    pub fn from_vec(subcarriers: usize, symbols: usize, antennas: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != subcarriers * symbols * antennas {
            return Err(Error::DimensionMismatch(format!(
                "rx tensor data has {} entries, expected {}x{}x{}",
                data.len(),
                subcarriers,
                symbols,
                antennas
            )));
        }
        check_finite(&data)?;
        Ok(RxTensor {
            subcarriers,
            symbols,
            antennas,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.subcarriers, self.symbols, self.antennas)
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    #[inline]
    pub fn index(&self, s: usize, t: usize, r: usize) -> usize {
        (s * self.symbols + t) * self.antennas + r
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize, r: usize) -> C64 {
        self.data[self.index(s, t, r)]
    }

    #[inline]
    pub fn set(&mut self, s: usize, t: usize, r: usize, v: C64) {
        let i = self.index(s, t, r);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// The `(S, T)` plane of one receive antenna.
    pub fn antenna_plane(&self, r: usize) -> ResourceGrid {
        let data = self.data.iter().skip(r).step_by(self.antennas).copied().collect();
        ResourceGrid {
            subcarriers: self.subcarriers,
            symbols: self.symbols,
            data,
        }
    }

    fn check_same(&self, other: &RxTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "rx tensors {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &RxTensor) -> Result<()> {
        self.check_same(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &RxTensor) -> Result<()> {
        self.check_same(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a -= b);
        Ok(())
    }

    pub fn sub(&self, other: &RxTensor) -> Result<RxTensor> {
        let mut out = self.clone();
        out.sub_assign(other)?;
        Ok(out)
    }

    pub fn scaled(&self, k: f64) -> RxTensor {
        RxTensor {
            data: self.data.iter().map(|z| z * k).collect(),
            ..*self
        }
    }

    /// `self ∘ x'`, with the plane `x` replicated over every receive antenna.
    pub fn hadamard_replicated(&self, x: &ResourceGrid) -> Result<RxTensor> {
        if (self.subcarriers, self.symbols) != x.shape() {
            return Err(Error::DimensionMismatch(format!(
                "tensor plane {:?} vs grid {:?}",
                (self.subcarriers, self.symbols),
                x.shape()
            )));
        }
        let nr = self.antennas;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, h)| h * x.as_slice()[i / nr])
            .collect();
        Ok(RxTensor {
            data,
            ..*self
        })
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }

    pub fn sum_power(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &RxTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

// An (S, T, Nr) slice of a channel tensor has the same layout as a received
// signal tensor.
pub type LayerChannel = RxTensor;

/// Equivalent per-layer channel, shape `(S, T, L, Nr)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTensor {
    subcarriers: usize,
    symbols: usize,
    layers: usize,
    antennas: usize,
    data: Vec<C64>,
}

impl ChannelTensor {
    pub fn zeros(subcarriers: usize, symbols: usize, layers: usize, antennas: usize) -> Self {
        ChannelTensor {
            subcarriers,
            symbols,
            layers,
            antennas,
            data: vec![C64::new(0.0, 0.0); subcarriers * symbols * layers * antennas],
        }
    }

    pub fn from_vec(
        subcarriers: usize,
        symbols: usize,
        layers: usize,
        antennas: usize,
        data: Vec<C64>,
    ) -> Result<Self> {
        if data.len() != subcarriers * symbols * layers * antennas {
            return Err(Error::DimensionMismatch(format!(
                "channel tensor data has {} entries, expected {}x{}x{}x{}",
                data.len(),
                subcarriers,
                symbols,
                layers,
                antennas
            )));
        }
        check_finite(&data)?;
        Ok(ChannelTensor {
            subcarriers,
            symbols,
            layers,
            antennas,
            data,
        })
    }

    pub fn from_layers(layers: &[LayerChannel]) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidDims("channel tensor needs at least one layer".into()))?;
        let (s, t, nr) = first.shape();
        if layers.iter().any(|h| h.shape() != (s, t, nr)) {
            return Err(Error::DimensionMismatch("layer channels differ in shape".into()));
        }
        let nl = layers.len();
        let mut out = ChannelTensor::zeros(s, t, nl, nr);
        for (l, h) in layers.iter().enumerate() {
            for si in 0..s {
                for ti in 0..t {
                    for r in 0..nr {
                        out.set(si, ti, l, r, h.get(si, ti, r));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.subcarriers, self.symbols, self.layers, self.antennas)
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    #[inline]
    pub fn index(&self, s: usize, t: usize, l: usize, r: usize) -> usize {
        ((s * self.symbols + t) * self.layers + l) * self.antennas + r
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize, l: usize, r: usize) -> C64 {
        self.data[self.index(s, t, l, r)]
    }

    #[inline]
    pub fn set(&mut self, s: usize, t: usize, l: usize, r: usize, v: C64) {
        let i = self.index(s, t, l, r);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// The `(S, T, Nr)` slice of layer `l`.
    pub fn layer(&self, l: usize) -> LayerChannel {
        let mut out = RxTensor::zeros(self.subcarriers, self.symbols, self.antennas);
        for s in 0..self.subcarriers {
            for t in 0..self.symbols {
                for r in 0..self.antennas {
                    out.set(s, t, r, self.get(s, t, l, r));
                }
            }
        }
        out
    }

    /// The `(S, T)` plane `H_{r,l}`.
    pub fn plane(&self, l: usize, r: usize) -> ResourceGrid {
        let mut g = ResourceGrid::zeros(self.subcarriers, self.symbols);
        for s in 0..self.subcarriers {
            for t in 0..self.symbols {
                g.set(s, t, self.get(s, t, l, r));
            }
        }
        g
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}
