use proptest::prelude::*;
use sipsim_core::grid::{grid_power, hadamard_apply, MultiLayerGrid, ResourceGrid, RxTensor, C64};
use sipsim_core::modem::{maxlog_demap, Constellation};
use sipsim_core::pilot::{superimpose, superimpose_layer, PilotBook};

fn complex() -> impl Strategy<Value = C64> {
    (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(re, im)| C64::new(re, im))
}

fn grid(s: usize, t: usize) -> impl Strategy<Value = ResourceGrid> {
    prop::collection::vec(complex(), s * t).prop_map(move |v| ResourceGrid::from_vec(s, t, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pilot_books_are_orthogonal_with_power_one_over_l(
        layers in prop::sample::select(vec![1usize, 2, 4, 8]),
        s in 1usize..40,
        t in 1usize..15,
        seed in any::<u64>(),
    ) {
        if (s * t) % layers != 0 {
            prop_assert!(PilotBook::build_for(s, t, layers, seed).is_err());
            return Ok(());
        }
        let book = PilotBook::build_for(s, t, layers, seed).unwrap();
        for l in 0..layers {
            for si in 0..s {
                for ti in 0..t {
                    prop_assert!((book.grid(l).get(si, ti).norm_sqr() - 1.0 / layers as f64).abs() < 1e-12);
                }
            }
        }
        prop_assert_eq!(book.num_groups(), s * t / layers);
        for g in 0..book.num_groups() {
            for a in 0..layers {
                for b in 0..layers {
                    if a != b {
                        prop_assert!(book.group_inner_product(g, a, b).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn hadamard_distributes_over_addition(a in grid(3, 4), b in grid(3, 4), h in grid(3, 4)) {
        let sum = a.axpby(1.0, &b, 1.0).unwrap();
        let left = hadamard_apply(&h, &sum).unwrap();
        let right = hadamard_apply(&h, &a).unwrap().axpby(1.0, &hadamard_apply(&h, &b).unwrap(), 1.0).unwrap();
        for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn superposition_matches_elementwise_formula(d in grid(4, 3), seed in any::<u64>(), alpha in 0.0f64..0.99) {
        let book = PilotBook::build_for(4, 3, 2, seed).unwrap();
        let x = superimpose_layer(&d, book.grid(1), alpha).unwrap();
        for si in 0..4 {
            for ti in 0..3 {
                let want = d.get(si, ti) * (1.0 - alpha).sqrt() + book.grid(1).get(si, ti) * alpha.sqrt();
                prop_assert!((x.get(si, ti) - want).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn balanced_unit_modulus_data_gives_unit_grid_power(
        phases in prop::collection::vec(0.0f64..std::f64::consts::TAU, 2 * 24),
        seed in any::<u64>(),
        alpha in prop::sample::select(vec![0.0, 0.05, 0.5]),
    ) {
        let layers = 2;
        let scale = (1.0 / layers as f64).sqrt();
        let data: Vec<ResourceGrid> = (0..layers)
            .map(|l| {
                let v: Vec<C64> = (0..48)
                    .map(|i| {
                        let z = C64::from_polar(scale, phases[l * 24 + i / 2]);
                        if i % 2 == 0 { z } else { -z }
                    })
                    .collect();
                ResourceGrid::from_vec(8, 6, v).unwrap()
            })
            .collect();
        let data = MultiLayerGrid::from_layers(data).unwrap();
        let book = PilotBook::build_for(8, 6, layers, seed).unwrap();
        // Antithetic pair: (D, −D) averages the data–pilot cross term to zero.
        let neg = MultiLayerGrid::from_layers(data.layers().iter().map(|g| g.scaled(-1.0)).collect()).unwrap();
        let p = 0.5 * (grid_power(&superimpose(&data, &book, alpha).unwrap())
            + grid_power(&superimpose(&neg, &book, alpha).unwrap()));
        prop_assert!((p - 1.0).abs() < 1e-12, "grid power {}", p);
    }

    #[test]
    fn llrs_scale_inversely_with_noise_variance(
        y in complex(),
        h in complex(),
        sigma2 in 0.01f64..5.0,
        k in 0.1f64..10.0,
        m in prop::sample::select(vec![2usize, 4, 6]),
    ) {
        prop_assume!(h.norm() > 1e-3);
        let a = maxlog_demap(y, h, sigma2, m).unwrap();
        let b = maxlog_demap(y, h, sigma2 * k, m).unwrap();
        for (x, z) in a.iter().zip(&b) {
            prop_assert!((x - z * k).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn hard_demap_inverts_map(bits in prop::collection::vec(0u8..2, 6)) {
        let c = Constellation::new(6).unwrap();
        let mut out = [0u8; 6];
        c.hard_demap(c.map(&bits), &mut out);
        prop_assert_eq!(&out[..], &bits[..]);
    }

    #[test]
    fn replicated_hadamard_matches_per_antenna_products(hv in prop::collection::vec(complex(), 2 * 3 * 2), x in grid(2, 3)) {
        let h = RxTensor::from_vec(2, 3, 2, hv).unwrap();
        let y = h.hadamard_replicated(&x).unwrap();
        for si in 0..2 {
            for ti in 0..3 {
                for r in 0..2 {
                    prop_assert_eq!(y.get(si, ti, r), h.get(si, ti, r) * x.get(si, ti));
                }
            }
        }
    }
}
