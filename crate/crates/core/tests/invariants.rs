use dsqm::bohm::sample_initial;
use dsqm::madelung::to_polar;
use dsqm::manybody::{overlap_matrix, ManyBodyState};
use dsqm::propagator::evolve;
use dsqm::two_scale::{cm_coordinates, from_cm_coordinates};
use dsqm::{gaussian_packet, Frame, Grid, PairPotential, PotentialSpec, Splitting, Stepping};
use proptest::prelude::*;

fn line() -> Grid {
    Grid::line(-16.0, 16.0, 256).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolution_is_unitary(c in -3.0f64..3.0, v in -2.0f64..2.0, s in 0.6f64..1.5,
                            omega in 0.0f64..1.0, fourth in any::<bool>()) {
        let f = gaussian_packet(&line(), [c, 0.0], [v, 0.0], s, 1.0, 1.0).unwrap();
        let potential = if omega > 0.1 { PotentialSpec::Harmonic { omega: [omega, 0.0] } } else { PotentialSpec::Free };
        let splitting = if fourth { Splitting::Fourth } else { Splitting::Strang };
        let rec = evolve(&f, &potential, &Stepping::new(0.01, 200, 200).with_splitting(splitting)).unwrap();
        prop_assert!(rec.norm_drift() < 1e-12, "norm drift {}", rec.norm_drift());
    }

    #[test]
    fn polar_round_trip(c in -3.0f64..3.0, v in -3.0f64..3.0, s in 0.6f64..1.5, hbar in 0.3f64..2.0) {
        let f = gaussian_packet(&line(), [c, 0.0], [v, 0.0], s, hbar, 1.0).unwrap();
        let polar = to_polar(&f, None);
        let back = polar.to_wave(Frame::Laboratory).unwrap();
        for ((a, b), valid) in f.amplitudes().iter().zip(back.amplitudes()).zip(&polar.valid) {
            if *valid {
                prop_assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn sampling_stays_on_support(seed in any::<u64>(), c in -4.0f64..4.0) {
        let g = line();
        let f = gaussian_packet(&g, [c, 0.0], [0.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        let a = sample_initial(&g, &f.density(), 200, seed).unwrap();
        let b = sample_initial(&g, &f.density(), 200, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let mean = a.iter().map(|p| p[0]).sum::<f64>() / a.len() as f64;
        prop_assert!((mean - c).abs() < 0.5, "mean {} vs {}", mean, c);
        prop_assert!(a.iter().all(|p| p[0] > g.axis(0).lower && p[0] < g.axis(0).upper));
    }

    #[test]
    fn center_of_mass_round_trip(x1 in -5.0f64..5.0, x2 in -5.0f64..5.0, m1 in 0.5f64..4.0, m2 in 0.5f64..4.0) {
        let positions = [[x1, 0.0], [x2, 0.0]];
        let (cm, rel) = cm_coordinates(&positions, &[m1, m2]).unwrap();
        prop_assert!((m1 * rel[0][0] + m2 * rel[1][0]).abs() < 1e-12);
        let back = from_cm_coordinates(cm, &rel);
        for (p, q) in back.iter().zip(&positions) {
            prop_assert!((p[0] - q[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn overlaps_are_bounded_and_symmetric(a in -4.0f64..-0.5, b in 0.5f64..4.0, s in 0.4f64..1.2) {
        let g = line();
        let waves = [a, b].iter().map(|c| gaussian_packet(&g, [*c, 0.0], [0.0, 0.0], s, 1.0, 1.0).unwrap()).collect();
        let state = ManyBodyState::new(waves, PairPotential::None).unwrap();
        let o = overlap_matrix(&state);
        prop_assert!((o[0][1] - o[1][0]).abs() < 1e-15);
        prop_assert!(o[0][1] >= 0.0 && o[0][1] <= 1.0 + 1e-12);
        let exact = (-(b - a).powi(2) / (8.0 * s * s)).exp();
        prop_assert!((o[0][1] - exact).abs() < 1e-8, "{} vs {}", o[0][1], exact);
    }
}

#[test]
fn grid_construction_rejects_non_powers_of_two() {
    assert!(Grid::line(-1.0, 1.0, 100).is_err());
    assert!(Grid::line(1.0, -1.0, 64).is_err());
    assert_eq!(Grid::square(-1.0, 1.0, 64).unwrap().len(), 64 * 64);
}
