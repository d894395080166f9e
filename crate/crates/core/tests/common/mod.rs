//! Reference computations written independently of the library internals.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3xX, Vector3};
use rand::Rng;
use tensegrity::dynamics::{laws_from_prestress, DynamicsModel, DynamicsState, MassModel};
use tensegrity::sizing::{Material, BUCKLING_CONSTANT};
use tensegrity::statics::{prestress_modes, EquilibriumSolution, LoadCase};
use tensegrity::topology::{
    build_prism, build_rig, prism_equilibrium_twist, MemberKind, RigParams, Topology,
};

/// Net force on each free node, summed member by member: a string pulls
/// its ends together with `γ·ℓ`, a bar pushes them apart with `λ·ℓ`.
/// Returns the Euclidean norm over all free nodes.
pub fn node_balance_residual(t: &Topology, sol: &EquilibriumSolution, w: &LoadCase) -> f64 {
    let x = t.positions();
    let mut net: Vec<Vector3<f64>> = (0..t.node_count())
        .map(|i| w.forces.column(i).into())
        .collect();
    let (mut si, mut bi) = (0, 0);
    for m in &t.members {
        let [a, b] = m.ends;
        let a_to_b: Vector3<f64> = x.column(b) - x.column(a);
        let q = match m.kind {
            MemberKind::String => {
                si += 1;
                sol.gamma[si - 1]
            }
            MemberKind::Bar => {
                bi += 1;
                -sol.lambda[bi - 1]
            }
        };
        net[a] += a_to_b * q;
        net[b] -= a_to_b * q;
    }
    t.nodes
        .iter()
        .zip(&net)
        .filter(|(n, _)| !n.anchored)
        .map(|(_, f)| f.norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Equilibrium matrix built node by node: for free node `i` and member
/// `m`, the column holds the unit-density force `m` exerts on `i` (strings
/// first, bars after, bars with the compressive sign).
pub fn brute_equilibrium_matrix(t: &Topology) -> DMatrix<f64> {
    let x = t.positions();
    let free: Vec<usize> = (0..t.node_count())
        .filter(|&i| !t.nodes[i].anchored)
        .collect();
    let order: Vec<usize> = t
        .string_indices()
        .into_iter()
        .chain(t.bar_indices())
        .collect();
    let mut a = DMatrix::zeros(3 * free.len(), order.len());
    for (row, &i) in free.iter().enumerate() {
        for (col, &m) in order.iter().enumerate() {
            let [p, q] = t.members[m].ends;
            let other = if p == i {
                q
            } else if q == i {
                p
            } else {
                continue;
            };
            let toward: Vector3<f64> = x.column(other) - x.column(i);
            let sign = if t.members[m].kind == MemberKind::String {
                1.0
            } else {
                -1.0
            };
            for axis in 0..3 {
                a[(3 * row + axis, col)] = sign * toward[axis];
            }
        }
    }
    a
}

/// Right singular vectors of `a` whose singular values fall below
/// `rel_tol · σ_max`. Rows are zero-padded to a square matrix so the SVD
/// returns a complete right basis.
pub fn brute_null_space(a: &DMatrix<f64>, rel_tol: f64) -> Vec<Vec<f64>> {
    let (m, n) = a.shape();
    let mut sq = DMatrix::zeros(m.max(n), n);
    sq.view_mut((0, 0), (m, n)).copy_from(a);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values.max();
    (0..n)
        .filter(|&k| svd.singular_values[k] <= rel_tol * smax)
        .map(|k| vt.row(k).iter().copied().collect())
        .collect()
}

/// Whether a one-dimensional self-stress vector can be scaled so every
/// string entry is strictly positive.
pub fn single_mode_all_positive(mode: &[f64], strings: usize) -> bool {
    let s = &mode[..strings];
    let scale = mode.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-9 * scale;
    s.iter().all(|v| *v > eps) || s.iter().all(|v| *v < -eps)
}

/// String mass from the stress needed to carry `γ·ℓ` at yield.
pub fn string_mass_oracle(gamma: f64, length: f64, m: &Material) -> f64 {
    let force = gamma * length;
    let area = force / m.yield_strength;
    m.density * area * length
}

/// Bar mass from yield and from Euler buckling of a solid round section,
/// `F = c·E·A²/(4ℓ²)` (with `c = π` this is `π²EI/ℓ²`, `I = A²/(4π)`).
pub fn bar_mass_oracle(lambda: f64, length: f64, m: &Material) -> (f64, f64) {
    let force = lambda * length;
    let yield_area = force / m.yield_strength;
    let buckling_area =
        (4.0 * force * length * length / (BUCKLING_CONSTANT * m.youngs_modulus)).sqrt();
    (
        m.density * yield_area * length,
        m.density * buckling_area * length,
    )
}

/// Centripetal force density on a bar of length `l` with end masses `m`
/// spinning at `omega` about its centre: each end needs `m ω² l/2` inward,
/// which the bar supplies in tension, i.e. `λ = −m ω²/2`.
pub fn rotor_lambda(m: f64, omega: f64) -> f64 {
    -m * omega * omega / 2.0
}

pub fn random_prism<R: Rng>(rng: &mut R) -> Topology {
    let n = rng.random_range(3..=8);
    let twist = prism_equilibrium_twist(n) + rng.random_range(-0.3..0.3);
    build_prism(
        n,
        rng.random_range(0.2..3.0),
        rng.random_range(0.2..3.0),
        twist,
    )
    .unwrap()
}

pub fn random_rig<R: Rng>(rng: &mut R) -> Topology {
    let k = rng.random_range(3..=6);
    let r = rng.random_range(0.05..0.3);
    let angle: f64 = rng.random_range(0.3..1.2);
    let h1 = rng.random_range(0.3..1.2) * r * angle.tan();
    let h2 = h1 + rng.random_range(0.3..1.2) * r * angle.tan();
    let p = RigParams {
        ring_radii: [r, r, r],
        ring_heights: [0.0, h1, h2],
        stay_angle: angle,
        nodes_per_ring: k,
        stays_per_joint: rng.random_range(1..=2.min(k - 1)),
    };
    build_rig(&p).unwrap()
}

/// Load equal to `N K` for random `γ ≥ 0` and `λ`, so an exact solution exists.
pub fn reachable_load<R: Rng>(t: &Topology, rng: &mut R) -> LoadCase {
    let sol = EquilibriumSolution {
        gamma: (0..t.string_count())
            .map(|_| rng.random_range(0.0..10.0))
            .collect(),
        lambda: (0..t.bar_count())
            .map(|_| rng.random_range(-5.0..10.0))
            .collect(),
        ..EquilibriumSolution::zeros(t)
    };
    // The oracle residual with zero load is −N K on every node.
    let mut w = LoadCase::zeros(t.node_count());
    let x = t.positions();
    let (mut si, mut bi) = (0, 0);
    for m in &t.members {
        let [a, b] = m.ends;
        let a_to_b: Vector3<f64> = x.column(b) - x.column(a);
        let q = match m.kind {
            MemberKind::String => {
                si += 1;
                sol.gamma[si - 1]
            }
            MemberKind::Bar => {
                bi += 1;
                -sol.lambda[bi - 1]
            }
        };
        w.add(a, -a_to_b * q);
        w.add(b, a_to_b * q);
    }
    for i in t.anchored_nodes() {
        w.set(i, Vector3::zeros());
    }
    w
}

/// Three-strut prism prestressed along its self-stress mode (largest γ
/// equal to `peak`), no gravity, nodes given a small kick.
pub fn prestressed_prism(
    stiffness: f64,
    peak: f64,
    bar_mass: f64,
) -> (Topology, DynamicsModel, DynamicsState) {
    let t = build_prism(3, 0.3, 0.5, prism_equilibrium_twist(3)).unwrap();
    let x = t.positions();
    let mode = prestress_modes(&t, &x).unwrap().positive_mode.unwrap();
    let gamma: Vec<f64> = mode.as_slice()[..t.string_count()].to_vec();
    let gmax = gamma.iter().cloned().fold(0.0, f64::max);
    let gamma: Vec<f64> = gamma.iter().map(|g| g / gmax * peak).collect();
    let laws = laws_from_prestress(&t, &x, &gamma, stiffness, 0.0).unwrap();
    let model = DynamicsModel::new(
        &t,
        &MassModel::uniform(&t, bar_mass, 0.0, 0.0),
        laws,
        Vector3::zeros(),
    )
    .unwrap();
    let mut s = DynamicsState::at_rest(x);
    s.velocities[(0, 0)] = 0.05;
    s.velocities[(1, 4)] = -0.03;
    s.velocities[(2, 2)] = 0.02;
    (t, model, s)
}

pub fn max_abs_diff(a: &Matrix3xX<f64>, b: &Matrix3xX<f64>) -> f64 {
    (a - b).amax()
}

pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub const TAU: f64 = 2.0 * PI;
