use rand::Rng as _;

use super::*;
use crate::rng;

fn random_interior(k: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.01).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

fn all_potentials() -> Vec<Potential> {
    let psi = negentropy_init_psi(DEFAULT_SEGMENTS, 1.0).unwrap();
    vec![
        Potential::negentropy(),
        Potential::l2(),
        Potential::Piecewise(PiecewisePotential::new(psi.clone()).unwrap()),
        Potential::AugmentedPiecewise(AugmentedPiecewisePotential::new(psi).unwrap()),
        Potential::Neural(MonotoneNetPotentialInv::near_negentropy(3, 0.1)),
    ]
}

#[test]
fn negentropy_closed_form_uniform_four_actions() {
    let h = mirror_map_value(&NegEntropyPotential, &[0.25; 4]).unwrap();
    assert!((h - (3.0 - 4f64.ln())).abs() < 1e-14);
    let hq = mirror_map_value_quadrature(&NegEntropyPotential, &[0.25; 4]).unwrap();
    assert!((hq - h).abs() < 1e-7);
}

#[test]
fn l2_closed_form() {
    // Two actions: 1/2 sum p^2 - 1.
    let h = mirror_map_value(&L2Potential, &[1.0, 0.0]).unwrap();
    assert!((h + 0.5).abs() < 1e-15);
    // In general the constant is |A| / 2.
    let p = [0.2, 0.3, 0.5];
    let expected = 0.5 * p.iter().map(|x| x * x).sum::<f64>() - 1.5;
    assert!((mirror_map_value(&L2Potential, &p).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn quadrature_matches_closed_forms() {
    let mut rng = rng::stream(1, &[]);
    for _ in 0..50 {
        let k = 2 + (rng.random::<u32>() % 5) as usize;
        let p = random_interior(k, &mut rng);
        let closed = p.iter().map(|&x| x * x.ln()).sum::<f64>() + (k as f64 - 1.0);
        assert!((mirror_map_value_quadrature(&NegEntropyPotential, &p).unwrap() - closed).abs() < 1e-7);
        let closed = 0.5 * p.iter().map(|x| x * x).sum::<f64>() - 0.5 * k as f64;
        assert!((mirror_map_value_quadrature(&L2Potential, &p).unwrap() - closed).abs() < 1e-7);
    }
    // Boundary point: the log singularity is integrable.
    let h = mirror_map_value_quadrature(&NegEntropyPotential, &[1.0, 0.0]).unwrap();
    assert!((h - 1.0).abs() < 1e-7);
}

#[test]
fn piecewise_closed_form_integral_matches_quadrature() {
    let psi = negentropy_init_psi(10, 1.0).unwrap();
    let pot = PiecewisePotential::new(psi).unwrap();
    for p in [0.0, 0.03, 0.1, 0.55, 0.999, 1.0] {
        let closed = pot.phi_inv_integral(1.0, p).unwrap();
        let quad = quadrature::integrate(|t| pot.phi_inv(t), 1.0, p, 1e-12).unwrap();
        assert!((closed - quad).abs() < 1e-10, "p={p}: {closed} vs {quad}");
    }
}

#[test]
fn bregman_zero_on_diagonal_and_nonnegative() {
    let mut rng = rng::stream(2, &[]);
    for pot in all_potentials() {
        for _ in 0..200 {
            let x = random_interior(4, &mut rng);
            let y = random_interior(4, &mut rng);
            assert!(bregman(&pot, &x, &x).unwrap().abs() <= 1e-10, "{}", pot.name());
            assert!(bregman(&pot, &x, &y).unwrap() >= -1e-10, "{}", pot.name());
        }
    }
}

#[test]
fn negentropy_bregman_is_kl() {
    let mut rng = rng::stream(3, &[]);
    for _ in 0..500 {
        let x = random_interior(5, &mut rng);
        let y = random_interior(5, &mut rng);
        let kl: f64 = x.iter().zip(&y).map(|(a, b)| a * (a / b).ln()).sum();
        assert!((bregman(&NegEntropyPotential, &x, &y).unwrap() - kl).abs() < 1e-7);
    }
}

#[test]
fn l2_bregman_is_half_squared_distance() {
    let mut rng = rng::stream(4, &[]);
    for _ in 0..500 {
        let x = random_interior(3, &mut rng);
        let y = random_interior(3, &mut rng);
        let d: f64 = 0.5 * x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        assert!((bregman(&L2Potential, &x, &y).unwrap() - d).abs() < 1e-9);
    }
}

#[test]
fn bregman_domain_error_on_boundary_gradient() {
    let err = bregman(&NegEntropyPotential, &[0.5, 0.5], &[1.0, 0.0]);
    assert!(matches!(err, Err(Error::Domain(_))));
    // Finite phi^{-1}(0): boundary y is fine.
    assert!(bregman(&L2Potential, &[0.5, 0.5], &[1.0, 0.0]).is_ok());
    assert!(matches!(bregman(&L2Potential, &[1.0], &[0.5, 0.5]), Err(Error::Dimension(_))));
}

#[test]
fn local_quadratic_model() {
    let y = [0.25; 4];
    let d = [1.0, -1.0, 0.5, -0.5];
    for eps in [1e-1, 1e-2, 1e-3] {
        let (lhs, rhs) = bregman_local_quadratic_check(&L2Potential, &y, &d, eps).unwrap();
        assert!((lhs / rhs - 1.0).abs() < 1e-6);
    }
    let (lhs, rhs) = bregman_local_quadratic_check(&NegEntropyPotential, &y, &d, 1e-3).unwrap();
    assert!((lhs / rhs - 1.0).abs() < 1e-2);
    let mut previous = f64::INFINITY;
    for eps in [0.1, 0.05, 0.025, 0.0125] {
        let (lhs, rhs) = bregman_local_quadratic_check(&NegEntropyPotential, &y, &d, eps).unwrap();
        let gap = (lhs / rhs - 1.0).abs();
        assert!(gap < previous);
        previous = gap;
    }
}

#[test]
fn init_psi_ratios_and_shape() {
    let psi = negentropy_init_psi(2, 1.0).unwrap();
    assert!((psi[0] / psi[1] - 3.0 * 10f64.ln() / 2f64.ln()).abs() < 1e-12);
    assert!((psi.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    let psi = negentropy_init_psi(50, 2.0).unwrap();
    assert!(psi.iter().all(|&w| w > 0.0));
    assert!(psi[1..].windows(2).all(|w| w[1] < w[0]));
    assert!((psi.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    assert!(negentropy_init_psi(1, 1.0).is_err());
}

#[test]
fn init_psi_tracks_rescaled_exponential() {
    // At knot j >= 1, phi = j/n and x_j = c (3 ln 10 + ln j), so
    // phi(x) = exp(x / c) / (1000 n). Between knots the linear interpolation
    // of exp stays within h^2 / 8 relative error for segment width h <= ln 2.
    let n = 40;
    let psi = negentropy_init_psi(n, 1.0).unwrap();
    let c = 1.0 / (3.0 * 10f64.ln() + (n as f64).ln());
    let pot = PiecewisePotential::new(psi).unwrap();
    let first = pot.knots()[1];
    let mut previous = 0.0;
    for i in 0..20 {
        let x = first + (1.0 - first) * i as f64 / 19.0;
        let reference = (x / c).exp() / (1000.0 * n as f64);
        let value = pot.phi(x);
        assert!(value > previous);
        previous = value;
        assert!((value / reference - 1.0).abs() < 0.07, "x={x}: {value} vs {reference}");
    }
}

#[test]
fn piecewise_hits_knots_exactly() {
    let mut rng = rng::stream(5, &[]);
    for _ in 0..50 {
        let n = 1 + (rng.random::<u32>() % 30) as usize;
        let psi: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let pot = PiecewisePotential::new(psi.clone()).unwrap();
        let mut cumulative = 0.0;
        for (j, w) in psi.iter().enumerate() {
            cumulative += w;
            assert_eq!(pot.phi(cumulative), (j + 1) as f64 / n as f64);
        }
        assert_eq!(pot.phi(-0.5), 0.0);
        assert_eq!(pot.phi(0.0), 0.0);
        assert_eq!(pot.phi(cumulative * 1.5), 1.0);
        for k in 1..=n {
            let p = k as f64 / n as f64;
            assert!((pot.phi(pot.phi_inv(p)) - p).abs() < 1e-12);
        }
    }
}

#[test]
fn augmented_extends_piecewise() {
    let psi = negentropy_init_psi(20, 1.0).unwrap();
    let base = PiecewisePotential::new(psi.clone()).unwrap();
    let aug = AugmentedPiecewisePotential::new(psi).unwrap();
    for i in 0..=200 {
        let x = i as f64 / 200.0;
        assert_eq!(base.phi(x), aug.phi(x));
    }
    for i in 0..100 {
        let x = -5.0 + i as f64 * 0.05;
        assert!(aug.phi(x) <= 0.0);
        assert_eq!(base.phi(x).max(0.0), aug.phi(x).max(0.0));
    }
    let mut previous = f64::NEG_INFINITY;
    for i in 0..1000 {
        let x = -3.0 + i as f64 * 0.006;
        let v = aug.phi(x);
        assert!(v > previous);
        previous = v;
    }
    assert!((aug.phi(1.5) - 1.5).abs() < 1e-12);
}

#[test]
fn potentials_are_monotone_under_random_parameters() {
    let mut rng = rng::stream(6, &[]);
    let grid: Vec<f64> = (1..=200).map(|i| i as f64 / 200.0).collect();
    for draw in 0..1000 {
        let pot = match draw % 3 {
            0 => {
                let n = 1 + (rng.random::<u32>() % 20) as usize;
                let psi = (0..n).map(|_| rng.random::<f64>() * 2.0 + 1e-6).collect();
                Potential::Piecewise(PiecewisePotential::new(psi).unwrap())
            }
            1 => {
                let n = 1 + (rng.random::<u32>() % 20) as usize;
                let psi = (0..n).map(|_| rng.random::<f64>() * 2.0 + 1e-6).collect();
                Potential::AugmentedPiecewise(AugmentedPiecewisePotential::new(psi).unwrap())
            }
            _ => {
                let raw = (0..NEURAL_NUM_PARAMS).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
                Potential::Neural(MonotoneNetPotentialInv::from_params(raw).unwrap())
            }
        };
        for w in grid.windows(2) {
            assert!(pot.phi_inv(w[0]) <= pot.phi_inv(w[1]), "{} at {}", pot.name(), w[0]);
        }
    }
    for pot in [Potential::negentropy(), Potential::l2()] {
        for w in grid.windows(2) {
            assert!(pot.phi_inv(w[0]) <= pot.phi_inv(w[1]));
        }
    }
}

#[test]
fn round_trip_through_phi() {
    for pot in all_potentials() {
        for i in 1..=100 {
            let p = 0.01 * i as f64;
            let back = pot.phi(pot.phi_inv(p));
            assert!((back - p).abs() <= 1e-8, "{}: {p} -> {back}", pot.name());
        }
    }
}

#[test]
fn neural_initialization_is_close_to_log() {
    let net = MonotoneNetPotentialInv::near_negentropy(1, 0.0);
    let offset = net.phi_inv(1.0);
    for i in 1..=10 {
        let p = 0.1 * i as f64;
        assert!((net.phi_inv(p) - offset - p.ln()).abs() < 1e-12);
    }
    assert!(net.phi_inv_at_zero().is_finite());
    assert!(MonotoneNetPotentialInv::from_params(vec![0.0; 3]).is_err());
}

#[test]
fn serialization_round_trips_bitwise() {
    for pot in all_potentials() {
        let text = pot.to_text();
        let back = Potential::from_text(&text).unwrap();
        assert_eq!(back.family(), pot.family());
        let (a, b) = (pot.params(), back.params());
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        for i in 1..=100 {
            let p = i as f64 / 100.0;
            assert_eq!(pot.phi_inv(p).to_bits(), back.phi_inv(p).to_bits());
        }
    }
}

#[test]
fn serialization_rejects_bad_input() {
    assert!(matches!(
        Potential::from_text("schema_version = 2\nfamily = l2\nnum_params = 0\nparams =\n"),
        Err(Error::Version { .. })
    ));
    assert!(matches!(
        Potential::from_text("schema_version = 1\nfamily = l2\nnum_params = 2\nparams = 1 2\n"),
        Err(Error::Parse { .. })
    ));
    let text = Potential::builtin("piecewise").unwrap().to_text();
    let truncated = &text[..text.len() / 2];
    assert!(matches!(Potential::from_text(truncated), Err(Error::Parse { .. })));
    assert!(Potential::from_text("schema_version = 1\nfamily = piecewise\nnum_params = 1\nparams = -1\n").is_err());
}
