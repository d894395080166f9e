//! Force-density equilibrium `N K = W` with
//! `K = C_sᵀ diag(γ) C_s − C_bᵀ diag(λ) C_b`.
//!
//! γ are string force densities (tension, N/m, never negative) and λ are
//! bar force densities with compression positive. Anchored nodes have their
//! balance rows dropped; the support reactions are recovered afterwards.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnls;
use crate::topology::{MemberKind, Topology};

/// Relative factor in the residual tolerance `1e-8 · (1 + ‖W‖)`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// External nodal forces W, one column per node, newtons.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadCase {
    pub forces: Matrix3xX<f64>,
}

#[derive(Serialize, Deserialize)]
struct LoadCaseFile {
    #[serde(default)]
    forces: BTreeMap<String, [f64; 3]>,
}

impl LoadCase {
    pub fn zeros(nodes: usize) -> Self {
        Self {
            forces: Matrix3xX::zeros(nodes),
        }
    }

    pub fn node_count(&self) -> usize {
        self.forces.ncols()
    }

    pub fn set(&mut self, node: usize, force: Vector3<f64>) {
        self.forces.set_column(node, &force);
    }

    pub fn add(&mut self, node: usize, force: Vector3<f64>) {
        let f = self.forces.column(node) + force;
        self.forces.set_column(node, &f);
    }

    pub fn norm(&self) -> f64 {
        self.forces.norm()
    }

    /// Parses `{"forces": {"<node id>": [fx, fy, fz], ...}}`; nodes not
    /// listed carry no load.
    pub fn from_json_str(s: &str, nodes: usize) -> Result<Self> {
        let file: LoadCaseFile = serde_json::from_str(s)?;
        let mut lc = Self::zeros(nodes);
        for (key, f) in file.forces {
            let id: usize = key
                .trim()
                .parse()
                .map_err(|_| Error::Argument(format!("load case key {key:?} is not a node id")))?;
            if id >= nodes {
                return Err(Error::Argument(format!(
                    "load case references node {id}, topology has {nodes}"
                )));
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::Argument(format!("non-finite load on node {id}")));
            }
            lc.add(id, Vector3::from(f));
        }
        Ok(lc)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut forces = BTreeMap::new();
        for (i, c) in self.forces.column_iter().enumerate() {
            if c.iter().any(|x| *x != 0.0) {
                forces.insert(i.to_string(), [c[0], c[1], c[2]]);
            }
        }
        Ok(serde_json::to_string_pretty(&LoadCaseFile { forces })?)
    }

    pub fn load(path: impl AsRef<Path>, nodes: usize) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s, nodes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    /// String force densities in string order, N/m.
    pub gamma: Vec<f64>,
    /// Bar force densities in bar order, N/m, compression positive.
    pub lambda: Vec<f64>,
    /// Frobenius norm of `N K − W` over free nodes, N.
    pub residual_norm: f64,
    /// Dimension of the self-stress space (solutions with W = 0).
    pub nullspace_dim: usize,
    /// Force applied by each support to its anchored node, N.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reactions: BTreeMap<usize, [f64; 3]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EquilibriumSolution {
    pub fn zeros(topology: &Topology) -> Self {
        Self {
            gamma: vec![0.0; topology.string_count()],
            lambda: vec![0.0; topology.bar_count()],
            residual_norm: 0.0,
            nullspace_dim: 0,
            reactions: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }
}

fn check_positions(topology: &Topology, positions: &Matrix3xX<f64>) -> Result<()> {
    if positions.ncols() != topology.node_count() {
        return Err(Error::Dimension(format!(
            "{} position columns for {} nodes",
            positions.ncols(),
            topology.node_count()
        )));
    }
    Ok(())
}

/// Assembles `K` and the residual `N K − W` (3 × n) for given force densities.
pub fn equilibrium_operator(
    topology: &Topology,
    positions: &Matrix3xX<f64>,
    gamma: &[f64],
    lambda: &[f64],
    load: &LoadCase,
) -> Result<(DMatrix<f64>, Matrix3xX<f64>)> {
    check_positions(topology, positions)?;
    if gamma.len() != topology.string_count() || lambda.len() != topology.bar_count() {
        return Err(Error::Dimension(format!(
            "got {} gamma / {} lambda entries for {} strings / {} bars",
            gamma.len(),
            lambda.len(),
            topology.string_count(),
            topology.bar_count()
        )));
    }
    if load.node_count() != topology.node_count() {
        return Err(Error::Dimension(format!(
            "load has {} nodes, topology has {}",
            load.node_count(),
            topology.node_count()
        )));
    }
    let (cb, cs) = topology.connectivity_matrices()?;
    let g = DMatrix::from_diagonal(&DVector::from_column_slice(gamma));
    let l = DMatrix::from_diagonal(&DVector::from_column_slice(lambda));
    let k = cs.transpose() * g * &cs - cb.transpose() * l * &cb;
    let n = DMatrix::from_column_slice(3, positions.ncols(), positions.as_slice());
    let nk = n * &k;
    let residual = Matrix3xX::from_fn(positions.ncols(), |r, c| nk[(r, c)] - load.forces[(r, c)]);
    Ok((k, residual))
}

/// Equilibrium matrix A (3n × (α + β)) with `A [γ; λ] = vec(N K)`; row
/// `3·i + axis` belongs to node `i`. String columns come first.
pub fn equilibrium_matrix(topology: &Topology, positions: &Matrix3xX<f64>) -> Result<DMatrix<f64>> {
    check_positions(topology, positions)?;
    topology.connectivity_matrices()?;
    let n = topology.node_count();
    let strings = topology.string_indices();
    let bars = topology.bar_indices();
    let mut a = DMatrix::zeros(3 * n, strings.len() + bars.len());
    let columns = strings
        .iter()
        .map(|&m| (m, 1.0))
        .chain(bars.iter().map(|&m| (m, -1.0)));
    for (col, (m, sign)) in columns.enumerate() {
        let [p, q] = topology.members[m].ends;
        let v = topology.member_vector(positions, m) * sign;
        for axis in 0..3 {
            // Column p of N C_mᵀ C_m is −v, column q is +v.
            a[(3 * p + axis, col)] -= v[axis];
            a[(3 * q + axis, col)] += v[axis];
        }
    }
    Ok(a)
}

fn free_rows(topology: &Topology) -> Vec<usize> {
    topology
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.anchored)
        .flat_map(|(i, _)| (0..3).map(move |axis| 3 * i + axis))
        .collect()
}

fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |r, c| a[(rows[r], c)])
}

/// Orthonormal basis of the null space of `a`, one vector per column.
fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to at least n rows so the SVD returns a full right basis.
    let padded = if m < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let smax = svd.singular_values.max();
    let tol = if smax == 0.0 {
        0.0
    } else {
        nnls::rank_tolerance(a, smax)
    };
    let null: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax == 0.0 || svd.singular_values[i] <= tol)
        .collect();
    DMatrix::from_fn(n, null.len(), |r, c| vt[(null[c], r)])
}

/// Self-stress states of a topology in a given configuration.
#[derive(Clone, Debug)]
pub struct PrestressModes {
    /// Orthonormal basis over `[γ; λ]` (strings first), one mode per column.
    pub basis: DMatrix<f64>,
    /// Whether some combination of the modes has every γ strictly positive.
    pub has_positive_mode: bool,
    /// One such combination, scaled to unit norm, when it exists.
    pub positive_mode: Option<DVector<f64>>,
}

impl PrestressModes {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Basis of the homogeneous solutions of `N K = 0` on free nodes, with a
/// check for a strictly positive string state.
///
/// Positivity is decided by asking whether `A_s (1 + g) + A_b λ = 0` has a
/// solution with `g ≥ 0`, i.e. whether a state with every γ ≥ 1 exists.
pub fn prestress_modes(topology: &Topology, positions: &Matrix3xX<f64>) -> Result<PrestressModes> {
    topology.ensure_valid()?;
    let a = select_rows(
        &equilibrium_matrix(topology, positions)?,
        &free_rows(topology),
    );
    let basis = null_space(&a);
    let alpha = topology.string_count();

    let (has_positive_mode, positive_mode) = if alpha == 0 || basis.ncols() == 0 {
        (false, None)
    } else {
        let ones = DVector::from_element(alpha, 1.0);
        let a_s = a.columns(0, alpha).into_owned();
        let rhs = -(&a_s * &ones);
        let mask: Vec<bool> = (0..a.ncols()).map(|j| j < alpha).collect();
        let sol = nnls::solve(&a, &rhs, &mask);
        let scale = rhs.norm().max(a.norm() * f64::EPSILON);
        if sol.residual_norm <= 1e-9 * scale {
            let mut mode = sol.x;
            for j in 0..alpha {
                mode[j] += 1.0;
            }
            let norm = mode.norm();
            (true, Some(mode / norm))
        } else {
            (false, None)
        }
    };

    Ok(PrestressModes {
        basis,
        has_positive_mode,
        positive_mode,
    })
}

/// Solves for γ ≥ 0 and λ minimising `‖N K − W‖` on free nodes.
pub fn solve_force_densities(
    topology: &Topology,
    positions: &Matrix3xX<f64>,
    load: &LoadCase,
) -> Result<EquilibriumSolution> {
    topology.ensure_valid()?;
    check_positions(topology, positions)?;
    if load.node_count() != topology.node_count() {
        return Err(Error::Dimension(format!(
            "load has {} nodes, topology has {}",
            load.node_count(),
            topology.node_count()
        )));
    }
    let alpha = topology.string_count();
    let rows = free_rows(topology);
    let a = select_rows(&equilibrium_matrix(topology, positions)?, &rows);
    let b = DVector::from_fn(rows.len(), |r, _| {
        let row = rows[r];
        load.forces[(row % 3, row / 3)]
    });
    let mask: Vec<bool> = (0..a.ncols()).map(|j| j < alpha).collect();
    let sol = nnls::solve(&a, &b, &mask);

    let gamma: Vec<f64> = sol.x.iter().take(alpha).copied().collect();
    let lambda: Vec<f64> = sol.x.iter().skip(alpha).copied().collect();
    let (_, residual) = equilibrium_operator(topology, positions, &gamma, &lambda, load)?;

    let mut free_sq = 0.0;
    let mut reactions = BTreeMap::new();
    for (i, node) in topology.nodes.iter().enumerate() {
        let c = residual.column(i);
        if node.anchored {
            reactions.insert(i, [c[0], c[1], c[2]]);
        } else {
            free_sq += c.norm_squared();
        }
    }
    let residual_norm = free_sq.sqrt();
    let tolerance = RESIDUAL_TOLERANCE * (1.0 + load.norm());
    if residual_norm > tolerance {
        return Err(Error::Unstable {
            residual: residual_norm,
            tolerance,
        });
    }

    let nullspace_dim = null_space(&a).ncols();
    let bars = topology.bar_indices();
    let scale = lambda
        .iter()
        .chain(&gamma)
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let warnings = lambda
        .iter()
        .enumerate()
        .filter(|(_, l)| **l < -1e-12 * scale.max(1.0))
        .map(|(j, l)| {
            format!(
                "bar {j} (member {}) is in tension: lambda = {l:.6e} N/m",
                bars[j]
            )
        })
        .collect();

    Ok(EquilibriumSolution {
        gamma,
        lambda,
        residual_norm,
        nullspace_dim,
        reactions,
        warnings,
    })
}

/// Axial force per member in member order: strings `γ‖s‖` (tension),
/// bars `λ‖b‖` (compression positive).
pub fn member_forces(
    topology: &Topology,
    positions: &Matrix3xX<f64>,
    solution: &EquilibriumSolution,
) -> Result<Vec<f64>> {
    check_positions(topology, positions)?;
    if solution.gamma.len() != topology.string_count()
        || solution.lambda.len() != topology.bar_count()
    {
        return Err(Error::Dimension(
            "solution does not match the topology's member counts".into(),
        ));
    }
    let mut gi = 0;
    let mut bi = 0;
    Ok(topology
        .members
        .iter()
        .enumerate()
        .map(|(m, member)| {
            let len = topology.member_vector(positions, m).norm();
            match member.kind {
                MemberKind::String => {
                    gi += 1;
                    solution.gamma[gi - 1] * len
                }
                MemberKind::Bar => {
                    bi += 1;
                    solution.lambda[bi - 1] * len
                }
            }
        })
        .collect())
}
