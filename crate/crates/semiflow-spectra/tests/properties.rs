//! Property-based invariants: branch inversion, flow semigroup, seminorm scaling.

use num_complex::Complex64;
use proptest::prelude::*;
use semiflow_spectra::gbv::{seminorm, GbvParams, GridFunction};
use semiflow_spectra::hypothesis::ReturnTime;
use semiflow_spectra::maps::{make_explicit, AffineBranchSpec, Interval};
use semiflow_spectra::suspension::{FlowPoint, SuspensionSemiflow};

/// Two-branch expanding map with a cut at c: each branch surjects onto (0, 1).
fn two_branch(c: f64) -> semiflow_spectra::maps::PiecewiseMap {
    make_explicit(
        Interval { lo: 0.0, hi: 1.0 },
        &[
            AffineBranchSpec {
                domain: Interval { lo: 0.0, hi: c },
                slope: 1.0 / c,
                intercept: 0.0,
            },
            AffineBranchSpec {
                domain: Interval { lo: c, hi: 1.0 },
                slope: 1.0 / (1.0 - c),
                intercept: -c / (1.0 - c),
            },
        ],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// Applying a branch and then its inverse returns the starting point.
    #[test]
    fn branch_inverse_round_trip(c in 0.15f64..0.85, raw in 0.0f64..1.0) {
        let map = two_branch(c);
        // Keep clearly inside a branch: snap away from the cut point.
        let x = if (raw - c).abs() < 1e-6 { (raw + 0.01).fract().max(1e-3) } else { raw.max(1e-9) };
        prop_assume!(x > 0.0 && x < 1.0 && (x - c).abs() > 1e-7);
        let (y, branch_id) = map.evaluate(x).unwrap();
        let back = map.inverse_branch(branch_id, y).unwrap();
        prop_assert!((back - x).abs() < 1e-9, "x = {x}, back = {back}");
    }

    /// Flowing for t1 then t2 equals flowing for t1 + t2.
    #[test]
    fn flow_semigroup(raw_x in 0.0f64..1.0, raw_s in 0.0f64..1.0,
                      t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
        // Spread inputs off dyadic rationals so doubling orbits avoid exact branch
        // endpoints (the strict flow refuses those points).
        let x = (raw_x * std::f64::consts::PI).fract().clamp(1e-9, 1.0 - 1e-9);
        let map = two_branch(0.5);
        let sf = SuspensionSemiflow::new(map, ReturnTime::constant(1.0).unwrap(), 64, 1e-10).unwrap();
        let s = raw_s.clamp(0.0, 1.0 - 1e-9);
        let p = FlowPoint { x, s };
        let via_two = sf.flow(sf.flow(p, t1).unwrap(), t2).unwrap();
        let direct = sf.flow(p, t1 + t2).unwrap();
        prop_assert!((via_two.x - direct.x).abs() < 1e-9, "{via_two:?} vs {direct:?}");
        prop_assert!((via_two.s - direct.s).abs() < 1e-9, "{via_two:?} vs {direct:?}");
    }
}

/// The variation-type norm is absolutely homogeneous, including complex scalars.
#[test]
fn seminorm_is_absolutely_homogeneous() {
    let p = GbvParams::new(0.5, 0.1).unwrap();
    let omega = Interval { lo: 0.0, hi: 1.0 };
    let h = GridFunction::from_complex_fn(omega, 256, |x| {
        Complex64::new((7.0 * x).sin(), if x > 0.3 { 1.0 } else { -0.5 })
    })
    .unwrap();
    let base = seminorm(&h, &p).unwrap();
    for (re, im) in [(2.0, 0.0), (0.0, -3.0), (1.5, 2.5), (-0.4, 0.9)] {
        let c = Complex64::new(re, im);
        let mut hc = h.clone();
        hc.scale(c);
        let scaled = seminorm(&hc, &p).unwrap();
        assert!(
            (scaled - c.norm() * base).abs() < 1e-10 * (1.0 + base),
            "|c| = {}, scaled = {scaled}, base = {base}",
            c.norm()
        );
    }
}
