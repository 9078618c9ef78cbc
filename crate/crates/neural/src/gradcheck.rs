//! Finite-difference check of the analytic gradients of one receiver
//! iteration: CE network → pilot cancellation → DD network → loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sipsim_core::classic::{ClassicCe, SmoothingPrior};
use sipsim_core::grid::{ChannelTensor, ResourceGrid, RxTensor, C64};
use sipsim_core::ic::{reconstruct_pilot_rx, reconstruct_sip, CeInput, DdInput};
use sipsim_core::link::LlrGrid;
use sipsim_core::pilot::PilotBook;
use sipsim_core::McsTable;

use crate::model::{ce_forward, dd_forward, ModelConfig, ReceiverNets};
use crate::train::{iteration_loss, NetGrads, Targets};
use crate::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckSetup {
    pub subcarriers: usize,
    pub symbols: usize,
    pub layers: usize,
    pub rx_antennas: usize,
    pub width: usize,
    pub blocks: usize,
    pub mcs: u32,
    pub alpha: f64,
    pub sigma2: f64,
    pub tau: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        GradCheckSetup {
            subcarriers: 4,
            symbols: 4,
            layers: 2,
            rx_antennas: 2,
            width: 4,
            blocks: 1,
            mcs: 7,
            alpha: 0.2,
            sigma2: 0.3,
            tau: 0.5,
            eps: 1e-4,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub parameters: usize,
    pub max_rel_error: f64,
    /// Largest analytic gradient magnitude, to show the check is not vacuous.
    pub max_abs_grad: f64,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Gradients below this magnitude are compared in absolute terms. Central
/// differences of an `O(10)` loss carry roundoff near `1e-15·10/ε ≈ 1e-10`.
pub const REL_FLOOR: f64 = 1e-6;

struct Problem {
    book: PilotBook,
    y_x: Vec<RxTensor>,
    d_hat: Vec<ResourceGrid>,
    x_hat: Vec<ResourceGrid>,
    h: ChannelTensor,
    labels: Vec<LlrGrid>,
    classic: ClassicCe,
}

fn cplx(rng: &mut ChaCha8Rng, std: f64) -> C64 {
    let n = Normal::new(0.0, std).expect("positive std");
    C64::new(n.sample(rng), n.sample(rng))
}

fn problem(setup: &GradCheckSetup, rng: &mut ChaCha8Rng) -> Result<Problem> {
    let (s, t, l, nr) = (setup.subcarriers, setup.symbols, setup.layers, setup.rx_antennas);
    let book = PilotBook::build_for(s, t, l, setup.seed)?;
    let m = McsTable::default().get(setup.mcs)?.bits_per_symbol;
    let h = ChannelTensor::from_vec(s, t, l, nr, (0..s * t * l * nr).map(|_| cplx(rng, 0.7)).collect())?;
    let mut y_x = Vec::new();
    let mut d_hat = Vec::new();
    let mut x_hat = Vec::new();
    let mut labels = Vec::new();
    for layer in 0..l {
        let d = ResourceGrid::from_vec(s, t, (0..s * t).map(|_| cplx(rng, 0.5)).collect())?;
        let x = reconstruct_sip(&d, book.grid(layer), setup.alpha)?;
        let noise = RxTensor::from_vec(s, t, nr, (0..s * t * nr).map(|_| cplx(rng, 0.4)).collect())?;
        let mut y = h.layer(layer).hadamard_replicated(&x)?;
        y.add_assign(&noise)?;
        y_x.push(y);
        d_hat.push(d);
        x_hat.push(x);
        let bits = (0..s * t * m).map(|_| rng.random_range(0..2u8) as f64).collect();
        labels.push(LlrGrid::from_vec(s, t, m, bits)?);
    }
    Ok(Problem {
        book,
        y_x,
        d_hat,
        x_hat,
        h,
        labels,
        classic: ClassicCe::new(SmoothingPrior::identity(s, t)),
    })
}

/// Loss of one iteration with train-mode networks; accumulates gradients
/// when `grads` is given.
fn objective(
    nets: &ReceiverNets<f64>,
    setup: &GradCheckSetup,
    p: &Problem,
    grads: Option<&mut NetGrads<f64>>,
) -> Result<f64> {
    let mcs = McsTable::default().get(setup.mcs)?.clone();
    let layers = setup.layers;
    let ce_inputs: Vec<CeInput> = (0..layers)
        .map(|l| CeInput {
            layer: l,
            iteration: 2,
            y_x: &p.y_x[l],
            book: &p.book,
            d_hat: &p.d_hat[l],
            x_hat: &p.x_hat[l],
            alpha: setup.alpha,
            sigma2: setup.sigma2,
            mcs: &mcs,
            reliability: 0.5,
        })
        .collect();
    let ce = ce_forward(&nets.ce, &nets.config, &p.classic, &ce_inputs, true)?;
    let y_d: Vec<RxTensor> = (0..layers)
        .map(|l| Ok(p.y_x[l].sub(&reconstruct_pilot_rx(&ce.h_hat[l], p.book.grid(l), setup.alpha)?)?))
        .collect::<Result<_>>()?;
    let dd_inputs: Vec<DdInput> = (0..layers)
        .map(|l| DdInput {
            layer: l,
            iteration: 2,
            y_d: &y_d[l],
            h_hat: &ce.h_hat[l],
            alpha: setup.alpha,
            sigma2: setup.sigma2,
            mcs: &mcs,
            layers,
            ref_power: p.y_x[l].mean_power(),
        })
        .collect();
    let dd = dd_forward(&nets.dd, &nets.config, &dd_inputs, true)?;
    let targets = Targets {
        h: &p.h,
        labels: &p.labels,
    };
    let (bce, mse) = iteration_loss(nets, &ce, &dd, &p.book, &targets, setup.tau, 1.0, grads)?;
    Ok(setup.tau * bce + (1.0 - setup.tau) * mse)
}

/// Random tiny networks with a non-zero output convolution, so that every
/// parameter influences the loss.
pub fn tiny_nets(setup: &GradCheckSetup, rng: &mut ChaCha8Rng) -> Result<ReceiverNets<f64>> {
    let config = ModelConfig {
        rx_antennas: setup.rx_antennas,
        m_max: 6,
        ce_width: setup.width,
        ce_blocks: setup.blocks,
        dd_width: setup.width,
        dd_blocks: setup.blocks,
    };
    let mut nets = ReceiverNets::<f64>::new(config, rng)?;
    let n = Normal::new(0.0, 0.3).expect("positive std");
    for net in [&mut nets.ce, &mut nets.dd] {
        for p in net.params_mut() {
            for v in p.iter_mut() {
                *v += n.sample(rng);
            }
        }
    }
    Ok(nets)
}

/// Compares analytic gradients of every parameter with central differences.
pub fn check_iteration_gradients(setup: &GradCheckSetup) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut nets = tiny_nets(setup, &mut rng)?;
    let p = problem(setup, &mut rng)?;
    let mut grads = NetGrads::zeros(&nets);
    objective(&nets, setup, &p, Some(&mut grads))?;

    let mut report = GradCheckReport {
        parameters: 0,
        max_rel_error: 0.0,
        max_abs_grad: 0.0,
    };
    for which in 0..2 {
        let analytic = if which == 0 { &grads.ce } else { &grads.dd };
        let count = analytic.0.len();
        for ti in 0..count {
            for i in 0..analytic.0[ti].len() {
                let orig = param(&mut nets, which, ti, i, None);
                param(&mut nets, which, ti, i, Some(orig + setup.eps));
                let up = objective(&nets, setup, &p, None)?;
                param(&mut nets, which, ti, i, Some(orig - setup.eps));
                let down = objective(&nets, setup, &p, None)?;
                param(&mut nets, which, ti, i, Some(orig));
                let numeric = (up - down) / (2.0 * setup.eps);
                let a = analytic.0[ti][i];
                report.parameters += 1;
                report.max_abs_grad = report.max_abs_grad.max(a.abs());
                report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric, REL_FLOOR));
            }
        }
    }
    Ok(report)
}

fn param(nets: &mut ReceiverNets<f64>, which: usize, tensor: usize, i: usize, set: Option<f64>) -> f64 {
    let net = if which == 0 { &mut nets.ce } else { &mut nets.dd };
    let mut params = net.params_mut();
    let old = params[tensor][i];
    if let Some(v) = set {
        params[tensor][i] = v;
    }
    old
}
