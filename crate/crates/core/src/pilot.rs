//! Pilot generation: DFT orthogonal-mask-code superimposed pilots and the
//! DMRS patterns of the orthogonal-pilot baseline.
//!
//! Superimposed pilots are built per CDM group. The `S·T` resource elements
//! are enumerated frequency first (`idx = t·S + s`) and cut into groups of
//! `L` consecutive elements, so when `L` divides `S` a group is `L` adjacent
//! subcarriers of one OFDM symbol. Group `g` carries a QPSK seed `p̂_g` of
//! power `1/L`; layer `l` sends `p̂_g·c_l[n]` on the `n`-th element.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{GridDims, MultiLayerGrid, ResourceGrid, C64};
use crate::{Error, Result};

/// DFT orthogonal mask code for layer `l` (0-based):
/// `c_l[n] = exp(-j·2π·n·l/L)`.
pub fn dft_omc(layers: usize, l: usize) -> Result<Vec<C64>> {
    if layers == 0 || l >= layers {
        return Err(Error::InvalidParameter(format!(
            "layer {l} out of range for {layers} layers"
        )));
    }
    Ok((0..layers)
        .map(|n| {
            // Reduce the phase index first so that e.g. L=4 yields exact ±1, ±j.
            let k = (n * l) % layers;
            exact_unit_root(k, layers)
        })
        .collect())
}

fn exact_unit_root(k: usize, layers: usize) -> C64 {
    if (4 * k) % layers == 0 {
        match (4 * k / layers) % 4 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, -1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, 1.0),
        }
    } else {
        C64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / layers as f64)
    }
}

/// Superimposed-pilot settings: pilot power ratio and seed for the group seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SipConfig {
    pub alpha: f64,
    pub seed: u64,
}

impl SipConfig {
    pub fn new(alpha: f64, seed: u64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(SipConfig { alpha, seed })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "pilot power ratio must lie in [0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Per-layer DFT codes, group seeds and the materialized pilot grids.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotBook {
    subcarriers: usize,
    symbols: usize,
    layers: usize,
    seeds: Vec<C64>,
    codes: Vec<Vec<C64>>,
    grids: MultiLayerGrid,
}

impl PilotBook {
    pub fn build(dims: &GridDims, seed: u64) -> Result<Self> {
        Self::build_for(dims.subcarriers, dims.symbols, dims.layers, seed)
    }

    pub fn build_for(subcarriers: usize, symbols: usize, layers: usize, seed: u64) -> Result<Self> {
        if subcarriers == 0 || symbols == 0 || layers == 0 {
            return Err(Error::InvalidDims("pilot book needs a nonempty grid".into()));
        }
        if (subcarriers * symbols) % layers != 0 {
            return Err(Error::InvalidDims(format!(
                "S·T = {} is not divisible by L = {}",
                subcarriers * symbols,
                layers
            )));
        }
        let groups = subcarriers * symbols / layers;
        let amp = 1.0 / (2.0 * layers as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<C64> = (0..groups)
            .map(|_| {
                let re = if rng.random::<bool>() { amp } else { -amp };
                let im = if rng.random::<bool>() { amp } else { -amp };
                C64::new(re, im)
            })
            .collect();
        let codes = (0..layers)
            .map(|l| dft_omc(layers, l))
            .collect::<Result<Vec<_>>>()?;
        let grids = (0..layers)
            .map(|l| {
                let mut g = ResourceGrid::zeros(subcarriers, symbols);
                for idx in 0..subcarriers * symbols {
                    let (s, t) = (idx % subcarriers, idx / subcarriers);
                    g.set(s, t, seeds[idx / layers] * codes[l][idx % layers]);
                }
                g
            })
            .collect();
        Ok(PilotBook {
            subcarriers,
            symbols,
            layers,
            seeds,
            codes,
            grids: MultiLayerGrid::from_layers(grids)?,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.subcarriers, self.symbols)
    }

    pub fn num_groups(&self) -> usize {
        self.seeds.len()
    }

    pub fn seeds(&self) -> &[C64] {
        &self.seeds
    }

    pub fn code(&self, l: usize) -> &[C64] {
        &self.codes[l]
    }

    pub fn grid(&self, l: usize) -> &ResourceGrid {
        self.grids.layer(l)
    }

    pub fn grids(&self) -> &MultiLayerGrid {
        &self.grids
    }

    /// Group index and position within the group of RE `(s, t)`.
    pub fn group_of(&self, s: usize, t: usize) -> (usize, usize) {
        let idx = t * self.subcarriers + s;
        (idx / self.layers, idx % self.layers)
    }

    /// REs of group `g` in code order.
    pub fn group_positions(&self, g: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (g * self.layers..(g + 1) * self.layers).map(|idx| (idx % self.subcarriers, idx / self.subcarriers))
    }

    /// `Σ_{n in g} p_l[n]·conj(p_k[n])`.
    pub fn group_inner_product(&self, g: usize, l: usize, k: usize) -> C64 {
        self.group_positions(g)
            .map(|(s, t)| self.grid(l).get(s, t) * self.grid(k).get(s, t).conj())
            .sum()
    }

    /// Structured dump for test vectors.
    pub fn dump(&self) -> PilotBookDump {
        PilotBookDump {
            subcarriers: self.subcarriers,
            symbols: self.symbols,
            layers: self.layers,
            groups: (0..self.num_groups())
                .map(|g| self.group_positions(g).map(|(s, t)| [s, t]).collect())
                .collect(),
            seeds: self.seeds.iter().map(|c| [c.re, c.im]).collect(),
            codes: self
                .codes
                .iter()
                .map(|c| c.iter().map(|z| [z.re, z.im]).collect())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotBookDump {
    pub subcarriers: usize,
    pub symbols: usize,
    pub layers: usize,
    /// `(s, t)` of each group member in code order.
    pub groups: Vec<Vec<[usize; 2]>>,
    pub seeds: Vec<[f64; 2]>,
    pub codes: Vec<Vec<[f64; 2]>>,
}

/// `x = √(1-α)·d + √α·p` for one layer.
pub fn superimpose_layer(d: &ResourceGrid, p: &ResourceGrid, alpha: f64) -> Result<ResourceGrid> {
    check_alpha(alpha)?;
    d.axpby((1.0 - alpha).sqrt(), p, alpha.sqrt())
}

/// Superimposes pilots on data that is already scaled to power `1/L` per RE.
pub fn superimpose(data: &MultiLayerGrid, book: &PilotBook, alpha: f64) -> Result<MultiLayerGrid> {
    check_alpha(alpha)?;
    if data.num_layers() != book.layers() || data.shape() != book.shape() {
        return Err(Error::DimensionMismatch(format!(
            "data {}x{:?} vs pilot book {}x{:?}",
            data.num_layers(),
            data.shape(),
            book.layers(),
            book.shape()
        )));
    }
    let layers = data
        .layers()
        .iter()
        .zip(book.grids().layers())
        .map(|(d, p)| superimpose_layer(d, p, alpha))
        .collect::<Result<Vec<_>>>()?;
    MultiLayerGrid::from_layers(layers)
}

/// Orthogonal DMRS layout: pilot symbols, comb per layer pair, ±1 cover
/// within a pair.
///
/// Layers `2q` and `2q+1` share comb `q` (subcarriers with `s % 2 == q`);
/// layer `2q+1` flips the sign on every second RE of its comb.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmrsPattern {
    pub pilot_symbols: Vec<usize>,
    /// Carry data on a comb left free by all layers.
    pub data_on_free_comb: bool,
    pub seed: u64,
}

impl DmrsPattern {
    /// Standard pattern with `Np` pilot symbols: `{0}` for one, `{0, 3, 6, 9}`
    /// for four. Data rides on the free comb only for the four-symbol pattern.
    pub fn standard(num_pilot_symbols: usize, symbols: usize, seed: u64) -> Result<Self> {
        let pilot_symbols = match num_pilot_symbols {
            1 => vec![0],
            4 => vec![0, 3, 6, 9],
            n => {
                return Err(Error::InvalidParameter(format!(
                    "DMRS supports 1 or 4 pilot symbols, got {n}"
                )))
            }
        };
        let p = DmrsPattern {
            pilot_symbols,
            data_on_free_comb: num_pilot_symbols == 4,
            seed,
        };
        p.validate(symbols)?;
        Ok(p)
    }

    pub fn num_pilot_symbols(&self) -> usize {
        self.pilot_symbols.len()
    }

    pub fn validate(&self, symbols: usize) -> Result<()> {
        if self.pilot_symbols.is_empty() {
            return Err(Error::InvalidParameter("DMRS pattern without pilot symbols".into()));
        }
        if self.pilot_symbols.len() >= symbols {
            return Err(Error::InvalidParameter(format!(
                "{} pilot symbols leave no data in a {symbols}-symbol slot",
                self.pilot_symbols.len()
            )));
        }
        if self.pilot_symbols.windows(2).any(|w| w[0] >= w[1])
            || self.pilot_symbols.iter().any(|&t| t >= symbols)
        {
            return Err(Error::InvalidParameter(
                "pilot symbols must be ascending and inside the slot".into(),
            ));
        }
        Ok(())
    }

    pub fn is_pilot_symbol(&self, t: usize) -> bool {
        self.pilot_symbols.contains(&t)
    }
}

/// Comb (0 or 1) and cover index of a layer.
pub fn dmrs_comb_and_cover(l: usize) -> (usize, usize) {
    (l / 2, l % 2)
}

/// Materialized DMRS grids plus data-RE mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DmrsGrids {
    pub pattern: DmrsPattern,
    pub pilots: MultiLayerGrid,
    /// Unit-power base sequence per `(comb RE index, pilot symbol)`.
    base: Vec<C64>,
    /// Per-layer pilot amplitude.
    pub amplitude: f64,
    /// Row-major `s·T + t`, true where data symbols are carried.
    pub data_mask: Vec<bool>,
}

impl DmrsGrids {
    pub fn build(pattern: &DmrsPattern, dims: &GridDims) -> Result<Self> {
        dims.validate()?;
        pattern.validate(dims.symbols)?;
        let (s_count, t_count, layers) = (dims.subcarriers, dims.symbols, dims.layers);
        if layers > 4 {
            return Err(Error::InvalidParameter(format!(
                "DMRS layout supports up to 4 layers, got {layers}"
            )));
        }
        if s_count % 4 != 0 {
            return Err(Error::InvalidDims(format!(
                "DMRS cover pairs need S divisible by 4, got {s_count}"
            )));
        }
        let combs_used = layers.div_ceil(2);
        let free_comb_data = pattern.data_on_free_comb && combs_used == 1;
        // Power on a pilot symbol averages to one per RE: an occupied comb RE
        // carries the power of both combs unless the free comb carries data.
        let re_power = if combs_used == 2 || free_comb_data { 1.0 } else { 2.0 };
        let sharing = |comb: usize| (0..layers).filter(|&l| l / 2 == comb).count();
        let amplitude = (re_power / sharing(0) as f64).sqrt();
        if combs_used == 2 && sharing(0) != sharing(1) {
            return Err(Error::InvalidParameter(
                "DMRS layout needs an even layer count when both combs are used".into(),
            ));
        }

        let comb_res = s_count / 2;
        let np = pattern.num_pilot_symbols();
        let mut rng = ChaCha8Rng::seed_from_u64(pattern.seed);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let base: Vec<C64> = (0..2 * comb_res * np)
            .map(|_| {
                C64::new(
                    if rng.random::<bool>() { h } else { -h },
                    if rng.random::<bool>() { h } else { -h },
                )
            })
            .collect();

        let mut pilots = MultiLayerGrid::zeros(s_count, t_count, layers);
        for l in 0..layers {
            let (comb, cover) = dmrs_comb_and_cover(l);
            let grid = pilots.layer_mut(l);
            for (pi, &t) in pattern.pilot_symbols.iter().enumerate() {
                for k in 0..comb_res {
                    let s = 2 * k + comb;
                    let sign = if cover == 1 && k % 2 == 1 { -1.0 } else { 1.0 };
                    let b = base[(comb * comb_res + k) * np + pi];
                    grid.set(s, t, b * (amplitude * sign));
                }
            }
        }
        let mut data_mask = vec![true; s_count * t_count];
        for s in 0..s_count {
            for &t in &pattern.pilot_symbols {
                let comb_occupied = s % 2 < combs_used;
                data_mask[s * t_count + t] = free_comb_data && !comb_occupied;
            }
        }
        Ok(DmrsGrids {
            pattern: pattern.clone(),
            pilots,
            base,
            amplitude,
            data_mask,
        })
    }

    pub fn is_data(&self, s: usize, t: usize) -> bool {
        self.data_mask[s * self.pilots.shape().1 + t]
    }

    pub fn num_data_res(&self) -> usize {
        self.data_mask.iter().filter(|&&d| d).count()
    }

    /// Data-RE ratio as an exact fraction `(numerator, denominator)` of `S·T`.
    pub fn omega(&self) -> (usize, usize) {
        (self.num_data_res(), self.data_mask.len())
    }

    /// Unit-power base symbol shared by a cover pair at comb RE `k`.
    pub fn base_symbol(&self, comb: usize, k: usize, pilot_index: usize) -> C64 {
        let comb_res = self.pilots.shape().0 / 2;
        self.base[(comb * comb_res + k) * self.pattern.num_pilot_symbols() + pilot_index]
    }

    /// Places per-layer data symbols (already scaled by `1/√L`) on the data
    /// REs and adds the pilots.
    pub fn assemble(&self, data: &MultiLayerGrid) -> Result<MultiLayerGrid> {
        if data.shape() != self.pilots.shape() || data.num_layers() != self.pilots.num_layers() {
            return Err(Error::DimensionMismatch("DMRS data grid shape".into()));
        }
        let mut out = self.pilots.clone();
        for (o, d) in out.layers_mut().iter_mut().zip(data.layers()) {
            for (i, (x, v)) in o.as_mut_slice().iter_mut().zip(d.as_slice()).enumerate() {
                if self.data_mask[i] {
                    *x += *v;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::grid_power;

    #[test]
    fn dft_examples() {
        assert_eq!(dft_omc(2, 0).unwrap(), vec![C64::new(1.0, 0.0); 2]);
        assert_eq!(dft_omc(2, 1).unwrap(), vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]);
        assert_eq!(
            dft_omc(4, 1).unwrap(),
            vec![C64::new(1.0, 0.0), C64::new(0.0, -1.0), C64::new(-1.0, 0.0), C64::new(0.0, 1.0)]
        );
        assert!(dft_omc(4, 4).is_err());
        for l_count in [1, 2, 3, 4, 8] {
            for l in 0..l_count {
                for k in 0..l_count {
                    let a = dft_omc(l_count, l).unwrap();
                    let b = dft_omc(l_count, k).unwrap();
                    let ip: C64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
                    let expect = if l == k { l_count as f64 } else { 0.0 };
                    assert!((ip - C64::new(expect, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn small_book_layout() {
        let book = PilotBook::build_for(4, 1, 2, 3).unwrap();
        assert_eq!(book.group_of(0, 0), (0, 0));
        assert_eq!(book.group_of(1, 0), (0, 1));
        assert_eq!(book.group_of(2, 0), (1, 0));
        let (p1, p2) = (book.grid(0), book.grid(1));
        assert_eq!(p1.get(0, 0), p2.get(0, 0));
        assert_eq!(p1.get(1, 0), -p2.get(1, 0));
        assert_eq!(p1.get(0, 0), book.seeds()[0]);
    }

    #[test]
    fn book_power_coverage_orthogonality() {
        for layers in [1, 2, 4, 8] {
            let book = PilotBook::build_for(24, 12, layers, 11).unwrap();
            for l in 0..layers {
                for p in book.grid(l).as_slice() {
                    assert!((p.norm_sqr() - 1.0 / layers as f64).abs() < 1e-15);
                }
            }
            for g in 0..book.num_groups() {
                for l in 0..layers {
                    for k in 0..layers {
                        if l != k {
                            assert!(book.group_inner_product(g, l, k).norm() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn book_deterministic_and_seed_sensitive() {
        let a = PilotBook::build_for(8, 2, 2, 5).unwrap();
        assert_eq!(a, PilotBook::build_for(8, 2, 2, 5).unwrap());
        assert_ne!(a, PilotBook::build_for(8, 2, 2, 6).unwrap());
        assert!(PilotBook::build_for(3, 1, 2, 0).is_err());
    }

    #[test]
    fn superimpose_examples() {
        let d = ResourceGrid::filled(2, 1, C64::new(0.5, 0.5));
        let p = ResourceGrid::filled(2, 1, C64::new(0.5, 0.5));
        let x = superimpose_layer(&d, &p, 0.05).unwrap();
        let k = 0.95f64.sqrt() + 0.05f64.sqrt();
        assert!((x.get(0, 0) - C64::new(0.5, 0.5) * k).norm() < 1e-15);
        assert_eq!(superimpose_layer(&d, &p, 0.0).unwrap(), d);
        assert!(superimpose_layer(&d, &p, 1.0).is_err());
        assert!(superimpose_layer(&d, &p, -0.1).is_err());
    }

    #[test]
    fn dmrs_omega_accounting() {
        let dims = GridDims::new(24, 12, 2, 4, 4).unwrap();
        let one = DmrsGrids::build(&DmrsPattern::standard(1, 12, 0).unwrap(), &dims).unwrap();
        assert_eq!(one.omega(), (24 * 11, 24 * 12));
        let four = DmrsGrids::build(&DmrsPattern::standard(4, 12, 0).unwrap(), &dims).unwrap();
        assert_eq!(four.omega(), (24 * 10, 24 * 12));
        let mut naive = DmrsPattern::standard(4, 12, 0).unwrap();
        naive.data_on_free_comb = false;
        let naive = DmrsGrids::build(&naive, &dims).unwrap();
        assert_eq!(naive.omega(), (24 * 8, 24 * 12));
        assert!(DmrsPattern::standard(2, 12, 0).is_err());
    }

    #[test]
    fn dmrs_cover_orthogonality_and_power() {
        for layers in [1, 2, 4] {
            for np in [1, 4] {
                let dims = GridDims::new(24, 12, layers, 4, 4).unwrap();
                let g = DmrsGrids::build(&DmrsPattern::standard(np, 12, 9).unwrap(), &dims).unwrap();
                // CDM pairs of adjacent comb REs
                for &t in &g.pattern.pilot_symbols {
                    for q in 0..layers.div_ceil(2) {
                        if 2 * q + 1 >= layers {
                            continue;
                        }
                        for k in (0..12).step_by(2) {
                            let (s0, s1) = (2 * k + q, 2 * (k + 1) + q);
                            let a = g.pilots.layer(2 * q);
                            let b = g.pilots.layer(2 * q + 1);
                            let ip = a.get(s0, t) * b.get(s0, t).conj() + a.get(s1, t) * b.get(s1, t).conj();
                            assert!(ip.norm() < 1e-12);
                        }
                    }
                }
                // expected power per RE is one: pilot power plus data power 1/L per layer
                let mut pw = 0.0;
                for (i, &d) in g.data_mask.iter().enumerate() {
                    let (s, t) = (i / 12, i % 12);
                    let pil: f64 = g.pilots.layers().iter().map(|p| p.get(s, t).norm_sqr()).sum();
                    pw += pil + if d { 1.0 } else { 0.0 };
                    if d && g.pattern.is_pilot_symbol(t) {
                        assert_eq!(pil, 0.0);
                    }
                }
                assert!((pw / (24.0 * 12.0) - 1.0).abs() < 1e-12, "L={layers} Np={np}");
            }
        }
    }

    #[test]
    fn dmrs_assemble_power_with_unit_data() {
        let dims = GridDims::new(24, 12, 2, 2, 2).unwrap();
        let g = DmrsGrids::build(&DmrsPattern::standard(1, 12, 1).unwrap(), &dims).unwrap();
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let data = MultiLayerGrid::from_layers(vec![
            ResourceGrid::filled(24, 12, C64::new(a * a, a * a)),
            ResourceGrid::filled(24, 12, C64::new(a * a, -a * a)),
        ])
        .unwrap();
        let x = g.assemble(&data).unwrap();
        assert!((grid_power(&x) - 1.0).abs() < 1e-12);
    }
}
