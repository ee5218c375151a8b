//! Oriented-rectangle overlap via the separating axis theorem.

use super::AgentDims;
use crate::math::{cos, sin};
use crate::tensor::State;

/// Corners of the footprint of an agent at `state`, counter-clockwise.
pub fn rectangle_corners(state: State, dims: AgentDims) -> [[f64; 2]; 4] {
    let (c, s) = (cos(state[2]), sin(state[2]));
    let (hl, hw) = (dims.length / 2.0, dims.width / 2.0);
    let mut out = [[0.0; 2]; 4];
    for (i, (u, v)) in [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].into_iter().enumerate() {
        out[i] = [state[0] + u * c - v * s, state[1] + u * s + v * c];
    }
    out
}

fn projection(corners: &[[f64; 2]; 4], axis: [f64; 2]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in corners {
        let d = p[0] * axis[0] + p[1] * axis[1];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// `true` when the two footprints overlap; touching boundaries count.
pub fn collision_check(state_a: State, dims_a: AgentDims, state_b: State, dims_b: AgentDims) -> bool {
    let ca = rectangle_corners(state_a, dims_a);
    let cb = rectangle_corners(state_b, dims_b);
    let axes = [
        [cos(state_a[2]), sin(state_a[2])],
        [-sin(state_a[2]), cos(state_a[2])],
        [cos(state_b[2]), sin(state_b[2])],
        [-sin(state_b[2]), cos(state_b[2])],
    ];
    axes.iter().all(|&axis| {
        let (a_lo, a_hi) = projection(&ca, axis);
        let (b_lo, b_hi) = projection(&cb, axis);
        a_hi >= b_lo && b_hi >= a_lo
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_4;
    use proptest::prelude::*;

    const D: AgentDims = AgentDims::new(2.0, 1.0);

    #[test]
    fn identical_boxes_collide() {
        assert!(collision_check([3.0, 4.0, 0.3], D, [3.0, 4.0, 0.3], D));
    }

    #[test]
    fn distant_boxes_do_not() {
        assert!(!collision_check([0.0, 0.0, 0.0], D, [10.0, 0.0, 0.0], D));
    }

    #[test]
    fn touching_counts() {
        assert!(collision_check([0.0, 0.0, 0.0], D, [2.0, 0.0, 0.0], D));
        assert!(!collision_check([0.0, 0.0, 0.0], D, [2.0 + 1e-9, 0.0, 0.0], D));
    }

    #[test]
    fn rotated_diagonal_case() {
        // Leftmost corner of the rotated box sits at (0.14, -0.35), inside the other box.
        assert!(collision_check([0.0, 0.0, 0.0], D, [1.2, 0.0, FRAC_PI_4], D));
        assert!(!collision_check([0.0, 0.0, 0.0], D, [1.2, 2.0, FRAC_PI_4], D));
    }

    proptest! {
        #[test]
        fn symmetric_and_rigid_invariant(
            ax in -5.0f64..5.0, ay in -5.0f64..5.0, ah in -3.2f64..3.2,
            bx in -5.0f64..5.0, by in -5.0f64..5.0, bh in -3.2f64..3.2,
            la in 0.5f64..5.0, wa in 0.3f64..2.5, lb in 0.5f64..5.0, wb in 0.3f64..2.5,
            rot in -3.2f64..3.2, tx in -100.0f64..100.0, ty in -100.0f64..100.0,
        ) {
            let (da, db) = (AgentDims::new(la, wa), AgentDims::new(lb, wb));
            let a = [ax, ay, ah];
            let b = [bx, by, bh];
            let hit = collision_check(a, da, b, db);
            prop_assert_eq!(hit, collision_check(b, db, a, da));
            let tf = |s: State| {
                let (c, sn) = (cos(rot), sin(rot));
                [s[0] * c - s[1] * sn + tx, s[0] * sn + s[1] * c + ty, s[2] + rot]
            };
            // Rigid motions perturb coordinates by rounding only; skip near-touching pairs.
            let margin = |grow: f64| collision_check(a, AgentDims::new(la + grow, wa + grow), b, AgentDims::new(lb + grow, wb + grow));
            prop_assume!(margin(1e-6) == margin(-1e-6));
            prop_assert_eq!(hit, collision_check(tf(a), da, tf(b), db));
        }
    }
}
