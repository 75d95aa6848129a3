use iocrelax::estimators::{psi, psi_dmu};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MUS: [f64; 9] = [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0];
const SIGMAS: [f64; 5] = [0.1, 0.25, 0.5, 1.0, 2.0];

#[test]
fn matches_monte_carlo_on_grid() {
    let draws = 10_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut acc = [[0.0f64; 5]; 9];
    for _ in 0..draws / 2 {
        let z: f64 = rng.sample(StandardNormal);
        for (i, mu) in MUS.iter().enumerate() {
            for (j, s) in SIGMAS.iter().enumerate() {
                acc[i][j] += (mu + s * z).max(0.0) + (mu - s * z).max(0.0);
            }
        }
    }
    for (i, &mu) in MUS.iter().enumerate() {
        for (j, &s) in SIGMAS.iter().enumerate() {
            let mc = acc[i][j] / draws as f64;
            let dev = (psi(mu, s) - mc).abs();
            assert!(dev < 1e-3, "psi({mu}, {s}) = {} vs MC {mc}", psi(mu, s));
        }
    }
}

#[test]
fn derivative_matches_finite_differences() {
    let h = 1e-6;
    for &mu in &MUS {
        for &s in &SIGMAS {
            let fd = (psi(mu + h, s) - psi(mu - h, s)) / (2.0 * h);
            let an = psi_dmu(mu, s).unwrap();
            assert!((fd - an).abs() < 1e-8, "mu {mu} sigma {s}: {an} vs {fd}");
        }
    }
}

#[test]
fn degenerate_sigma() {
    assert_eq!(psi(0.7, 0.0), 0.7);
    assert_eq!(psi(-0.7, 0.0), 0.0);
    assert!(psi(0.0, -1e-3).is_nan());
    assert!(psi_dmu(0.0, 0.0).is_err());
}

proptest! {
    #[test]
    fn bounds_and_symmetry(mu in -20.0f64..20.0, s in 1e-3f64..10.0) {
        let v = psi(mu, s);
        prop_assert!(v >= mu.max(0.0) - 1e-12);
        prop_assert!(v <= mu.max(0.0) + s * 0.3989422804014327 + 1e-12);
        // E[max(0, X)] - E[max(0, -X)] = E[X]
        prop_assert!((v - psi(-mu, s) - mu).abs() <= 1e-9 * (1.0 + mu.abs()));
    }

    #[test]
    fn monotone_in_mu_and_sigma(mu in -5.0f64..5.0, d in 1e-3f64..1.0, s in 0.01f64..5.0) {
        prop_assert!(psi(mu + d, s) >= psi(mu, s));
        prop_assert!(psi(mu, s + d) >= psi(mu, s) - 1e-15);
        let g = psi_dmu(mu, s).unwrap();
        prop_assert!((0.0..=1.0).contains(&g));
    }
}
