use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sipsim_core::channel::{
    apply_channel, sample_noise, svd_precode, ChannelCovariance, ChannelModel, DopplerSpec, Numerology, TapProfile,
};
use sipsim_core::classic::{dmrs_channel_estimate, dmrs_ls_estimate, lmmse_detect, FreqInterpolation, LmmseContext};
use sipsim_core::grid::{ChannelTensor, GridDims, MultiLayerGrid, ResourceGrid, C64};
use sipsim_core::pilot::{DmrsGrids, DmrsPattern};

fn model(dims: &GridDims, delay_spread: f64) -> ChannelModel {
    ChannelModel {
        profile: TapProfile::exponential(delay_spread, 12).unwrap().scaled_to(delay_spread).unwrap(),
        doppler: DopplerSpec::from_kmh(3.0, 4e9).unwrap(),
        numerology: Numerology::default(),
        subcarriers: dims.subcarriers,
        symbols: dims.symbols,
        rx: dims.rx_antennas,
        tx: dims.tx_antennas,
    }
}

#[test]
fn noise_only_pair_estimates_have_oracle_variance() {
    let dims = GridDims::new(24, 12, 2, 2, 2).unwrap();
    let grids = DmrsGrids::build(&DmrsPattern::standard(1, 12, 4).unwrap(), &dims).unwrap();
    let sigma2 = 0.3;
    let a2 = grids.amplitude * grids.amplitude;
    // Each estimate averages y0/p0 and y1/p1 with independent noise of
    // variance σ²/|p|² each.
    let oracle = 0.25 * (sigma2 / a2 + sigma2 / a2);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut acc = 0.0;
    let mut count = 0usize;
    let trials = 10_000 / 12 + 1;
    for _ in 0..trials {
        let y = sample_noise((24, 12, 2), sigma2, &mut rng).unwrap();
        let ls = dmrs_ls_estimate(&y, &grids).unwrap();
        for l in 0..2 {
            for r in 0..2 {
                for j in 0..ls.num_pairs() {
                    acc += ls.value(l, r, 0, j).norm_sqr();
                    count += 1;
                }
            }
        }
    }
    let var = acc / count as f64;
    assert!(count >= 10_000);
    assert!((var / oracle - 1.0).abs() < 0.1, "variance {var} vs oracle {oracle}");
    assert!((ls_noise_variance(&grids, sigma2) - oracle).abs() < 1e-15);
}

fn ls_noise_variance(grids: &DmrsGrids, sigma2: f64) -> f64 {
    let y = sipsim_core::grid::RxTensor::zeros(24, 12, 1);
    dmrs_ls_estimate(&y, grids).unwrap().noise_variance(sigma2)
}

fn mse(a: &ChannelTensor, b: &ChannelTensor) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.as_slice().len() as f64
}

#[test]
fn lmmse_interpolation_beats_linear() {
    let dims = GridDims::new(24, 12, 2, 4, 4).unwrap();
    let chan = model(&dims, 300e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let cov = ChannelCovariance::estimate(|| svd_precode(&chan.sample(&mut rng), 2).map(|(_, h)| h), 1000).unwrap();
    for np in [1, 4] {
        let grids = DmrsGrids::build(&DmrsPattern::standard(np, 12, 5).unwrap(), &dims).unwrap();
        let pilots_only = MultiLayerGrid::from_layers(grids.pilots.layers().to_vec()).unwrap();
        for snr_db in [0.0, 15.0] {
            let sigma2 = 10f64.powf(-snr_db / 10.0);
            let ctx = LmmseContext {
                covariance: cov.clone(),
                sigma2,
            };
            let (mut e_ls, mut e_lmmse) = (0.0, 0.0);
            let n = 1000;
            for _ in 0..n {
                let (_, h) = svd_precode(&chan.sample(&mut rng), 2).unwrap();
                let y = apply_channel(&h, &pilots_only, sigma2, &mut rng).unwrap();
                let ls = dmrs_ls_estimate(&y, &grids).unwrap();
                e_ls += mse(&dmrs_channel_estimate(&ls, FreqInterpolation::Linear, None).unwrap(), &h);
                e_lmmse += mse(&dmrs_channel_estimate(&ls, FreqInterpolation::Lmmse, Some(&ctx)).unwrap(), &h);
            }
            eprintln!("Np={np} {snr_db} dB: LS {:.4} LMMSE {:.4}", e_ls / n as f64, e_lmmse / n as f64);
            assert!(e_lmmse <= e_ls, "Np={np} {snr_db} dB");
        }
    }
}

#[test]
fn lmmse_detection_recovers_symbols_on_orthogonal_layers() {
    // Two layers on orthogonal receive directions, ε-level noise.
    let (s, t, layers, nr) = (2, 2, 2, 3);
    let mut h = ChannelTensor::zeros(s, t, layers, nr);
    for si in 0..s {
        for ti in 0..t {
            h.set(si, ti, 0, 0, C64::new(1.0, 0.5));
            h.set(si, ti, 0, 1, C64::new(-0.5, 1.0));
            h.set(si, ti, 1, 2, C64::new(0.0, 2.0));
        }
    }
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let sym = [C64::new(half, half), C64::new(-half, half), C64::new(half, -half), C64::new(-half, -half)];
    let scale = (1.0 / layers as f64).sqrt();
    let data: Vec<ResourceGrid> = (0..layers)
        .map(|l| ResourceGrid::from_vec(s, t, (0..s * t).map(|i| sym[(i + l) % 4] * scale).collect()).unwrap())
        .collect();
    let x = MultiLayerGrid::from_layers(data.clone()).unwrap();
    for eps in [1e-6, 1e-9] {
        let y = apply_channel(&h, &x, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let det = lmmse_detect(&y, &h, eps).unwrap();
        for l in 0..layers {
            for si in 0..s {
                for ti in 0..t {
                    let got = det.symbols[l].get(si, ti);
                    let want = data[l].get(si, ti) / scale;
                    assert!((got - want).norm() < 10.0 * eps, "eps {eps}: {got} vs {want}");
                }
            }
        }
    }
}
