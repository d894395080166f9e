//! Tensegrity dynamics with rigid bars, elastic tension-only strings and
//! anchored nodes, in the matrix form
//!
//! ```text
//! N̈ M_s + N K_s = W + Ω Pᵀ,   K_s = C_sᵀ γ̂ C_s − C_bᵀ λ̂ C_b
//! ```
//!
//! Mass is lumped at the nodes: each bar and each string gives half its
//! mass to either end. The bar force densities λ are the multipliers that
//! keep every `‖b_j‖` constant; they solve
//!
//! ```text
//! Σ_k H_jk λ_k = −‖ḃ_j‖² − b_jᵀ (a⁰_{j+} − a⁰_{j−}),   H_jk = Σ_v C_jv C_kv m_v⁻¹ b_jᵀ b_k
//! ```
//!
//! where `a⁰` is the acceleration without bar forces. When no two bars
//! share a node `H` is diagonal and this is `λ̂ = −l̂⁻² μ̂ [ḂᵀḂ + ...]`
//! with `μ` the reduced end mass. Anchored nodes (the rows selected by `P`)
//! have zero inverse mass; Ω collects their support reactions.
//!
//! Integration is classical fourth-order Runge–Kutta followed by a
//! mass-weighted projection of positions and velocities back onto the bar
//! length constraints.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statics::LoadCase;
use crate::topology::Topology;

/// Default fixed step, seconds.
pub const DEFAULT_DT: f64 = 1e-4;

/// Projection stops once every bar is within this relative length error.
const PROJECTION_TOLERANCE: f64 = 1e-14;
const PROJECTION_MAX_ITER: usize = 25;

/// Elastic, tension-only string with linear viscous damping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StringLaw {
    /// N/m
    pub stiffness: f64,
    /// m
    pub rest_length: f64,
    /// N·s/m
    #[serde(default)]
    pub damping: f64,
}

impl StringLaw {
    pub fn new(stiffness: f64, rest_length: f64, damping: f64) -> Self {
        Self {
            stiffness,
            rest_length,
            damping,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        if !(self.stiffness >= 0.0 && self.stiffness.is_finite())
            || !(self.rest_length > 0.0 && self.rest_length.is_finite())
            || !(self.damping >= 0.0 && self.damping.is_finite())
        {
            return Err(Error::Model(format!(
                "string {index}: stiffness and damping must be >= 0 and rest length > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Force density for string vector `s` and its rate `s_dot`; exactly
    /// zero when the string is not longer than its rest length.
    pub fn force_density(&self, s: &Vector3<f64>, s_dot: &Vector3<f64>) -> f64 {
        let len = s.norm();
        if len <= self.rest_length {
            return 0.0;
        }
        let rate = s.dot(s_dot) / len;
        let tension = self.stiffness * (len - self.rest_length) + self.damping * rate;
        if tension > 0.0 {
            tension / len
        } else {
            0.0
        }
    }

    fn elastic_energy(&self, len: f64) -> f64 {
        if len > self.rest_length {
            let e = len - self.rest_length;
            0.5 * self.stiffness * e * e
        } else {
            0.0
        }
    }
}

/// Nodes positions N and velocities Ṅ (3 × n) at a time.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsState {
    pub positions: Matrix3xX<f64>,
    pub velocities: Matrix3xX<f64>,
    pub time: f64,
}

impl DynamicsState {
    pub fn at_rest(positions: Matrix3xX<f64>) -> Self {
        let n = positions.ncols();
        Self {
            positions,
            velocities: Matrix3xX::zeros(n),
            time: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .chain(self.velocities.iter())
            .all(|x| x.is_finite())
            && self.time.is_finite()
    }
}

/// Member and point masses, kg.
#[derive(Clone, Debug, PartialEq)]
pub struct MassModel {
    pub bar_mass: Vec<f64>,
    pub string_mass: Vec<f64>,
    pub node_mass: Vec<f64>,
}

impl MassModel {
    pub fn uniform(topology: &Topology, bar_mass: f64, string_mass: f64, node_mass: f64) -> Self {
        Self {
            bar_mass: vec![bar_mass; topology.bar_count()],
            string_mass: vec![string_mass; topology.string_count()],
            node_mass: vec![node_mass; topology.node_count()],
        }
    }
}

/// Kinetic, gravitational and elastic energy, J.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub kinetic: f64,
    pub gravitational: f64,
    pub elastic: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.gravitational + self.elastic
    }
}

/// Matrix-form operators evaluated at one state.
#[derive(Clone, Debug)]
pub struct DynamicsOperators {
    /// Diagonal of the lumped mass matrix M_s.
    pub mass: DVector<f64>,
    /// K_s = C_sᵀ γ̂ C_s − C_bᵀ λ̂ C_b.
    pub stiffness: DMatrix<f64>,
    /// P: n × (anchored count) selection of anchored nodes.
    pub constraint: DMatrix<f64>,
    /// Ω: support reactions, one column per anchored node.
    pub multipliers: Matrix3xX<f64>,
    /// B = N C_bᵀ
    pub bar_vectors: Matrix3xX<f64>,
    /// S = N C_sᵀ
    pub string_vectors: Matrix3xX<f64>,
    /// Bar rest lengths (the diagonal of l̂).
    pub bar_lengths: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    /// N̈
    pub acceleration: Matrix3xX<f64>,
    /// External load including gravity.
    pub load: Matrix3xX<f64>,
}

#[derive(Clone, Debug)]
struct Forces {
    acceleration: Matrix3xX<f64>,
    gamma: Vec<f64>,
    lambda: Vec<f64>,
    /// External load plus gravity.
    applied: Matrix3xX<f64>,
}

/// Everything needed to evaluate accelerations: connectivity, lumped
/// masses, bar rest lengths, string laws and gravity.
#[derive(Clone, Debug)]
pub struct DynamicsModel {
    node_mass: Vec<f64>,
    inv_mass: Vec<f64>,
    anchored: Vec<bool>,
    bars: Vec<[usize; 2]>,
    bar_lengths: Vec<f64>,
    /// Bars with at least one free end; only these carry constraints.
    active: Vec<usize>,
    /// Per node: (position in `active`, sign of the connectivity entry).
    incidence: Vec<Vec<(usize, f64)>>,
    strings: Vec<[usize; 2]>,
    laws: Vec<StringLaw>,
    gravity: Vector3<f64>,
}

impl DynamicsModel {
    pub fn new(
        topology: &Topology,
        masses: &MassModel,
        laws: Vec<StringLaw>,
        gravity: Vector3<f64>,
    ) -> Result<Self> {
        topology.ensure_valid()?;
        let n = topology.node_count();
        let bar_idx = topology.bar_indices();
        let str_idx = topology.string_indices();
        if masses.bar_mass.len() != bar_idx.len()
            || masses.string_mass.len() != str_idx.len()
            || masses.node_mass.len() != n
        {
            return Err(Error::Model("mass model does not match topology".into()));
        }
        if laws.len() != str_idx.len() {
            return Err(Error::Model(format!(
                "{} string laws for {} strings",
                laws.len(),
                str_idx.len()
            )));
        }
        for (i, law) in laws.iter().enumerate() {
            law.validate(i)?;
        }
        if masses
            .bar_mass
            .iter()
            .chain(&masses.string_mass)
            .chain(&masses.node_mass)
            .any(|m| !(*m >= 0.0 && m.is_finite()))
        {
            return Err(Error::Model("masses must be finite and nonnegative".into()));
        }
        if !gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::Model("gravity must be finite".into()));
        }

        let mut node_mass = masses.node_mass.clone();
        let pos = topology.positions();
        let bars: Vec<[usize; 2]> = bar_idx.iter().map(|&m| topology.members[m].ends).collect();
        let strings: Vec<[usize; 2]> = str_idx.iter().map(|&m| topology.members[m].ends).collect();
        for (j, [a, b]) in bars.iter().enumerate() {
            node_mass[*a] += 0.5 * masses.bar_mass[j];
            node_mass[*b] += 0.5 * masses.bar_mass[j];
        }
        for (i, [a, b]) in strings.iter().enumerate() {
            node_mass[*a] += 0.5 * masses.string_mass[i];
            node_mass[*b] += 0.5 * masses.string_mass[i];
        }
        let anchored = topology.anchored();
        let mut inv_mass = vec![0.0; n];
        for i in 0..n {
            if !anchored[i] {
                if node_mass[i] <= 0.0 {
                    return Err(Error::Model(format!(
                        "free node {i} has no mass; M_s would be singular"
                    )));
                }
                inv_mass[i] = 1.0 / node_mass[i];
            }
        }
        let bar_lengths: Vec<f64> = bar_idx
            .iter()
            .map(|&m| topology.member_vector(&pos, m).norm())
            .collect();
        if let Some(j) = bar_lengths.iter().position(|l| l.is_nan() || *l <= 0.0) {
            return Err(Error::Model(format!(
                "bar {j} has zero length; l̂ is singular"
            )));
        }
        let active: Vec<usize> = (0..bars.len())
            .filter(|&j| !(anchored[bars[j][0]] && anchored[bars[j][1]]))
            .collect();
        let mut incidence = vec![Vec::new(); n];
        for (k, &j) in active.iter().enumerate() {
            incidence[bars[j][0]].push((k, -1.0));
            incidence[bars[j][1]].push((k, 1.0));
        }

        Ok(Self {
            node_mass,
            inv_mass,
            anchored,
            bars,
            bar_lengths,
            active,
            incidence,
            strings,
            laws,
            gravity,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_mass.len()
    }

    /// Lumped nodal masses (the diagonal of M_s).
    pub fn node_masses(&self) -> &[f64] {
        &self.node_mass
    }

    pub fn bar_lengths(&self) -> &[f64] {
        &self.bar_lengths
    }

    pub fn laws(&self) -> &[StringLaw] {
        &self.laws
    }

    pub fn anchored(&self) -> &[bool] {
        &self.anchored
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    fn check_state(&self, state: &DynamicsState) -> Result<()> {
        let n = self.node_count();
        if state.positions.ncols() != n || state.velocities.ncols() != n {
            return Err(Error::Dimension(format!(
                "state has {} / {} columns, model has {n} nodes",
                state.positions.ncols(),
                state.velocities.ncols()
            )));
        }
        Ok(())
    }

    fn check_load(&self, load: &Matrix3xX<f64>) -> Result<()> {
        if load.ncols() != self.node_count() {
            return Err(Error::Dimension(format!(
                "load has {} columns, model has {} nodes",
                load.ncols(),
                self.node_count()
            )));
        }
        if !load.iter().all(|f| f.is_finite()) {
            return Err(Error::Argument("load contains non-finite entries".into()));
        }
        Ok(())
    }

    /// Bar vector `x[b] − x[a]` of bar `j`.
    fn bar_vector(&self, x: &Matrix3xX<f64>, j: usize) -> Vector3<f64> {
        let [a, b] = self.bars[j];
        x.column(b) - x.column(a)
    }

    /// String force densities γ for the given state.
    pub fn string_force_densities(&self, state: &DynamicsState) -> Vec<f64> {
        self.gamma(&state.positions, &state.velocities)
    }

    fn gamma(&self, x: &Matrix3xX<f64>, v: &Matrix3xX<f64>) -> Vec<f64> {
        self.strings
            .iter()
            .zip(&self.laws)
            .map(|([a, b], law)| {
                let s = x.column(*b) - x.column(*a);
                let sd = v.column(*b) - v.column(*a);
                law.force_density(&s, &sd)
            })
            .collect()
    }

    /// Constraint matrix `H_jk = Σ_v C_jv C_kv m_v⁻¹ b_jᵀ b_k` over active bars.
    fn constraint_matrix(&self, bvec: &[Vector3<f64>]) -> DMatrix<f64> {
        let na = self.active.len();
        let mut h = DMatrix::zeros(na, na);
        for (v, inc) in self.incidence.iter().enumerate() {
            let w = self.inv_mass[v];
            if w == 0.0 {
                continue;
            }
            for &(j, sj) in inc {
                for &(k, sk) in inc {
                    h[(j, k)] += sj * sk * w * bvec[j].dot(&bvec[k]);
                }
            }
        }
        h
    }

    /// Adds `m_v⁻¹ Σ_k C_kv μ_k b_k` to each column of `target`.
    fn apply_constraint_forces(
        &self,
        target: &mut Matrix3xX<f64>,
        bvec: &[Vector3<f64>],
        mu: &DVector<f64>,
    ) {
        for (v, inc) in self.incidence.iter().enumerate() {
            let w = self.inv_mass[v];
            if w == 0.0 {
                continue;
            }
            let mut d = Vector3::zeros();
            for &(k, sk) in inc {
                d += bvec[k] * (sk * mu[k]);
            }
            let c = target.column(v) + d * w;
            target.set_column(v, &c);
        }
    }

    fn forces(
        &self,
        x: &Matrix3xX<f64>,
        v: &Matrix3xX<f64>,
        load: &Matrix3xX<f64>,
    ) -> Result<Forces> {
        let n = self.node_count();
        let mut applied = load.clone();
        for i in 0..n {
            let c = applied.column(i) + self.gravity * self.node_mass[i];
            applied.set_column(i, &c);
        }
        let gamma = self.gamma(x, v);
        let mut f = applied.clone();
        for (([a, b], g), _) in self.strings.iter().zip(&gamma).zip(&self.laws) {
            if *g == 0.0 {
                continue;
            }
            let s = (x.column(*b) - x.column(*a)) * *g;
            let fa = f.column(*a) + s;
            f.set_column(*a, &fa);
            let fb = f.column(*b) - s;
            f.set_column(*b, &fb);
        }
        let mut acc = Matrix3xX::zeros(n);
        for i in 0..n {
            acc.set_column(i, &(f.column(i) * self.inv_mass[i]));
        }

        let bvec: Vec<Vector3<f64>> = self.active.iter().map(|&j| self.bar_vector(x, j)).collect();
        let rhs = DVector::from_fn(self.active.len(), |k, _| {
            let [a, b] = self.bars[self.active[k]];
            let bd = v.column(b) - v.column(a);
            let da = acc.column(b) - acc.column(a);
            -(bd.norm_squared() + bvec[k].dot(&da))
        });
        let h = self.constraint_matrix(&bvec);
        let mu = solve_symmetric(h, &rhs).ok_or_else(|| {
            Error::Model("bar constraint matrix is singular (zero-length bar?)".into())
        })?;
        self.apply_constraint_forces(&mut acc, &bvec, &mu);

        let mut lambda = vec![0.0; self.bars.len()];
        for (k, &j) in self.active.iter().enumerate() {
            lambda[j] = mu[k];
        }
        Ok(Forces {
            acceleration: acc,
            gamma,
            lambda,
            applied,
        })
    }

    /// Bar force densities λ (compression positive) that hold bar lengths
    /// fixed at this state under the given external load.
    pub fn bar_force_densities(
        &self,
        state: &DynamicsState,
        load: &Matrix3xX<f64>,
    ) -> Result<Vec<f64>> {
        self.check_state(state)?;
        self.check_load(load)?;
        Ok(self
            .forces(&state.positions, &state.velocities, load)?
            .lambda)
    }

    pub fn acceleration(
        &self,
        state: &DynamicsState,
        load: &Matrix3xX<f64>,
    ) -> Result<Matrix3xX<f64>> {
        self.check_state(state)?;
        self.check_load(load)?;
        Ok(self
            .forces(&state.positions, &state.velocities, load)?
            .acceleration)
    }

    /// Assembles the matrix-form operators at `state`.
    pub fn operators(
        &self,
        state: &DynamicsState,
        load: &Matrix3xX<f64>,
    ) -> Result<DynamicsOperators> {
        self.check_state(state)?;
        self.check_load(load)?;
        let f = self.forces(&state.positions, &state.velocities, load)?;
        let n = self.node_count();
        let nb = self.bars.len();
        let ns = self.strings.len();
        let mut cb = DMatrix::zeros(nb, n);
        for (j, [a, b]) in self.bars.iter().enumerate() {
            cb[(j, *a)] = -1.0;
            cb[(j, *b)] = 1.0;
        }
        let mut cs = DMatrix::zeros(ns, n);
        for (i, [a, b]) in self.strings.iter().enumerate() {
            cs[(i, *a)] = -1.0;
            cs[(i, *b)] = 1.0;
        }
        let g = DMatrix::from_diagonal(&DVector::from_column_slice(&f.gamma));
        let l = DMatrix::from_diagonal(&DVector::from_column_slice(&f.lambda));
        let stiffness = cs.transpose() * g * &cs - cb.transpose() * l * &cb;

        let anchors: Vec<usize> = (0..n).filter(|&i| self.anchored[i]).collect();
        let constraint =
            DMatrix::from_fn(
                n,
                anchors.len(),
                |r, c| if anchors[c] == r { 1.0 } else { 0.0 },
            );
        let x = DMatrix::from_column_slice(3, n, state.positions.as_slice());
        let nk = &x * &stiffness;
        // Ω = N K_s − W on anchored columns, since N̈ = 0 there.
        let multipliers = Matrix3xX::from_fn(anchors.len(), |r, c| {
            nk[(r, anchors[c])] - f.applied[(r, anchors[c])]
        });
        let bar_vectors = Matrix3xX::from_fn(nb, |r, j| {
            state.positions[(r, self.bars[j][1])] - state.positions[(r, self.bars[j][0])]
        });
        let string_vectors = Matrix3xX::from_fn(ns, |r, i| {
            state.positions[(r, self.strings[i][1])] - state.positions[(r, self.strings[i][0])]
        });
        Ok(DynamicsOperators {
            mass: DVector::from_column_slice(&self.node_mass),
            stiffness,
            constraint,
            multipliers,
            bar_vectors,
            string_vectors,
            bar_lengths: self.bar_lengths.clone(),
            gamma: f.gamma,
            lambda: f.lambda,
            acceleration: f.acceleration,
            load: f.applied,
        })
    }

    /// Kinetic, gravitational (relative to the origin) and elastic energy.
    pub fn energy(&self, state: &DynamicsState) -> Energy {
        let mut e = Energy::default();
        for i in 0..self.node_count() {
            let m = self.node_mass[i];
            e.kinetic += 0.5 * m * state.velocities.column(i).norm_squared();
            e.gravitational -= m * self.gravity.dot(&state.positions.column(i));
        }
        for ([a, b], law) in self.strings.iter().zip(&self.laws) {
            let len = (state.positions.column(*b) - state.positions.column(*a)).norm();
            e.elastic += law.elastic_energy(len);
        }
        e
    }

    /// Largest `|‖b_j‖ − L_j| / L_j` over bars.
    pub fn max_length_drift(&self, positions: &Matrix3xX<f64>) -> f64 {
        (0..self.bars.len())
            .map(|j| {
                (self.bar_vector(positions, j).norm() - self.bar_lengths[j]).abs()
                    / self.bar_lengths[j]
            })
            .fold(0.0, f64::max)
    }

    /// Total linear momentum Σ m_i ẋ_i.
    pub fn momentum(&self, state: &DynamicsState) -> Vector3<f64> {
        (0..self.node_count()).fold(Vector3::zeros(), |p, i| {
            p + state.velocities.column(i) * self.node_mass[i]
        })
    }

    /// Total angular momentum Σ m_i x_i × ẋ_i about the origin.
    pub fn angular_momentum(&self, state: &DynamicsState) -> Vector3<f64> {
        (0..self.node_count()).fold(Vector3::zeros(), |l, i| {
            let x: Vector3<f64> = state.positions.column(i).into();
            let v: Vector3<f64> = state.velocities.column(i).into();
            l + x.cross(&v) * self.node_mass[i]
        })
    }

    /// Restores bar lengths (mass-weighted Newton projection) and removes
    /// velocity components along bar length changes. Returns the largest
    /// nodal displacement applied.
    fn project(&self, state: &mut DynamicsState) -> Result<f64> {
        let before = state.positions.clone();
        if !self.active.is_empty() {
            for _ in 0..PROJECTION_MAX_ITER {
                let drift = self
                    .active
                    .iter()
                    .map(|&j| {
                        (self.bar_vector(&state.positions, j).norm() - self.bar_lengths[j]).abs()
                            / self.bar_lengths[j]
                    })
                    .fold(0.0, f64::max);
                if drift <= PROJECTION_TOLERANCE {
                    break;
                }
                let bvec: Vec<Vector3<f64>> = self
                    .active
                    .iter()
                    .map(|&j| self.bar_vector(&state.positions, j))
                    .collect();
                let c = DVector::from_fn(self.active.len(), |k, _| {
                    let l = self.bar_lengths[self.active[k]];
                    -0.5 * (bvec[k].norm_squared() - l * l)
                });
                let mu = solve_symmetric(self.constraint_matrix(&bvec), &c)
                    .ok_or_else(|| Error::Model("singular projection".into()))?;
                self.apply_constraint_forces(&mut state.positions, &bvec, &mu);
            }
            let bvec: Vec<Vector3<f64>> = self
                .active
                .iter()
                .map(|&j| self.bar_vector(&state.positions, j))
                .collect();
            let c = DVector::from_fn(self.active.len(), |k, _| {
                let [a, b] = self.bars[self.active[k]];
                -bvec[k].dot(&(state.velocities.column(b) - state.velocities.column(a)))
            });
            let nu = solve_symmetric(self.constraint_matrix(&bvec), &c)
                .ok_or_else(|| Error::Model("singular projection".into()))?;
            self.apply_constraint_forces(&mut state.velocities, &bvec, &nu);
        }
        Ok((0..self.node_count())
            .map(|i| (state.positions.column(i) - before.column(i)).norm())
            .fold(0.0, f64::max))
    }
}

/// Solves a symmetric positive (semi)definite system, falling back to a
/// pseudo-inverse when Cholesky fails.
fn solve_symmetric(h: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if h.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    if !h.iter().chain(rhs.iter()).all(|v| v.is_finite()) {
        return None;
    }
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let svd = h.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return None;
    }
    let tol = 1e-12 * smax;
    svd.solve(rhs, tol).ok()
}

/// One classical RK4 step without constraint projection.
pub fn advance_rk4(
    state: &DynamicsState,
    model: &DynamicsModel,
    load: &Matrix3xX<f64>,
    dt: f64,
) -> Result<DynamicsState> {
    model.check_state(state)?;
    model.check_load(load)?;
    let x0 = &state.positions;
    let v0 = &state.velocities;
    let h = dt;
    let k1v = model.forces(x0, v0, load)?.acceleration;
    let k1x = v0.clone();
    let x2 = x0 + &k1x * (0.5 * h);
    let v2 = v0 + &k1v * (0.5 * h);
    let k2v = model.forces(&x2, &v2, load)?.acceleration;
    let k2x = v2;
    let x3 = x0 + &k2x * (0.5 * h);
    let v3 = v0 + &k2v * (0.5 * h);
    let k3v = model.forces(&x3, &v3, load)?.acceleration;
    let k3x = v3;
    let x4 = x0 + &k3x * h;
    let v4 = v0 + &k3v * h;
    let k4v = model.forces(&x4, &v4, load)?.acceleration;
    let k4x = v4;

    let w = h / 6.0;
    let positions = x0 + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * w;
    let velocities = v0 + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * w;
    Ok(DynamicsState {
        positions,
        velocities,
        time: state.time + dt,
    })
}

/// Outcome of one projected step.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub state: DynamicsState,
    /// Largest relative bar length error before projection.
    pub drift: f64,
    /// Largest nodal displacement applied by the projection, m.
    pub projection: f64,
}

/// One RK4 step followed by projection onto the bar length constraints
/// and the anchored positions.
pub fn step(
    state: &DynamicsState,
    model: &DynamicsModel,
    load: &Matrix3xX<f64>,
    dt: f64,
) -> Result<StepReport> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Argument(format!("dt must be positive, got {dt}")));
    }
    let fail = || Error::IntegrationFailure {
        time: state.time,
        last_good: Box::new(state.clone()),
    };
    let mut next = match advance_rk4(state, model, load, dt) {
        Ok(s) => s,
        Err(Error::Model(_)) => return Err(fail()),
        Err(e) => return Err(e),
    };
    if !next.is_finite() {
        return Err(fail());
    }
    for (i, anchored) in model.anchored.iter().enumerate() {
        if *anchored {
            next.positions.set_column(i, &state.positions.column(i));
            next.velocities.set_column(i, &Vector3::zeros());
        }
    }
    let drift = model.max_length_drift(&next.positions);
    let projection = model.project(&mut next).map_err(|_| fail())?;
    if !next.is_finite() {
        return Err(fail());
    }
    Ok(StepReport {
        state: next,
        drift,
        projection,
    })
}

/// Piecewise-constant external load: each entry applies from its start
/// time until the next entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadSchedule {
    entries: Vec<(f64, Matrix3xX<f64>)>,
}

impl LoadSchedule {
    pub fn constant(load: LoadCase) -> Self {
        Self {
            entries: vec![(f64::NEG_INFINITY, load.forces)],
        }
    }

    pub fn new(mut entries: Vec<(f64, LoadCase)>) -> Self {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            entries: entries.into_iter().map(|(t, l)| (t, l.forces)).collect(),
        }
    }

    /// Load in effect at time `t`, or `None` before the first entry.
    pub fn at(&self, t: f64) -> Option<&Matrix3xX<f64>> {
        self.entries
            .iter()
            .rev()
            .find(|(start, _)| *start <= t)
            .map(|(_, w)| w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub state: DynamicsState,
    pub energy: Energy,
    /// Largest pre-projection relative bar length error since the previous sample.
    pub max_drift: f64,
    /// Largest projection displacement since the previous sample, m.
    pub max_projection: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// CSV: `time`, `n<i>_x,n<i>_y,n<i>_z` per node, then the diagnostics.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self
            .samples
            .first()
            .map_or(0, |s| s.state.positions.ncols());
        let mut header = vec!["time".to_string()];
        for i in 0..n {
            for axis in ["x", "y", "z"] {
                header.push(format!("n{i}_{axis}"));
            }
        }
        header.extend(
            [
                "kinetic",
                "gravitational",
                "elastic",
                "total_energy",
                "max_drift",
                "max_projection",
            ]
            .map(String::from),
        );
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.state.time.to_string()];
            row.extend(s.state.positions.iter().map(|x| x.to_string()));
            row.extend(
                [
                    s.energy.kinetic,
                    s.energy.gravitational,
                    s.energy.elastic,
                    s.energy.total(),
                    s.max_drift,
                    s.max_projection,
                ]
                .map(|x| x.to_string()),
            );
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Integrates from `initial` for `duration` seconds with fixed step `dt`,
/// keeping every `stride`-th state plus the final one. The initial state is
/// taken as given: velocities that stretch bars are only corrected by the
/// first step's projection.
pub fn simulate(
    initial: &DynamicsState,
    model: &DynamicsModel,
    schedule: &LoadSchedule,
    duration: f64,
    dt: f64,
    stride: usize,
) -> Result<Trajectory> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::Argument(format!(
            "duration must be >= 0, got {duration}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Argument(format!("dt must be positive, got {dt}")));
    }
    if stride == 0 {
        return Err(Error::Argument("sample stride must be >= 1".into()));
    }
    model.check_state(initial)?;
    let zero = Matrix3xX::zeros(model.node_count());

    let mut state = initial.clone();
    for (i, anchored) in model.anchored.iter().enumerate() {
        if *anchored {
            state.velocities.set_column(i, &Vector3::zeros());
        }
    }
    let t0 = state.time;
    let mut traj = Trajectory {
        samples: vec![Sample {
            energy: model.energy(&state),
            state: state.clone(),
            max_drift: model.max_length_drift(&state.positions),
            max_projection: 0.0,
        }],
    };
    let steps = if duration == 0.0 {
        0
    } else {
        ((duration / dt) * (1.0 - 1e-12)).ceil() as usize
    };
    let (mut drift, mut proj) = (0.0f64, 0.0f64);
    for k in 0..steps {
        let t_next = if k + 1 == steps {
            t0 + duration
        } else {
            t0 + (k + 1) as f64 * dt
        };
        let h = t_next - state.time;
        let load = schedule.at(state.time).unwrap_or(&zero);
        let report = match step(&state, model, load, h) {
            Ok(r) => r,
            Err(e) => {
                return Err(Error::Simulation {
                    reason: e.to_string(),
                    partial: Box::new(traj),
                })
            }
        };
        state = report.state;
        state.time = t_next;
        drift = drift.max(report.drift);
        proj = proj.max(report.projection);
        if (k + 1) % stride == 0 || k + 1 == steps {
            traj.samples.push(Sample {
                energy: model.energy(&state),
                state: state.clone(),
                max_drift: drift,
                max_projection: proj,
            });
            drift = 0.0;
            proj = 0.0;
        }
    }
    Ok(traj)
}

/// String laws whose tensions reproduce force densities `gamma` at the
/// current geometry: `L₀ = ℓ (1 − γ/k)`.
pub fn laws_from_prestress(
    topology: &Topology,
    positions: &Matrix3xX<f64>,
    gamma: &[f64],
    stiffness: f64,
    damping: f64,
) -> Result<Vec<StringLaw>> {
    let strings = topology.string_indices();
    if gamma.len() != strings.len() {
        return Err(Error::Dimension("gamma does not match string count".into()));
    }
    strings
        .iter()
        .zip(gamma)
        .map(|(&m, &g)| {
            let len = topology.member_vector(positions, m).norm();
            if !(g >= 0.0 && g < stiffness) {
                return Err(Error::Model(format!(
                    "string member {m}: force density {g} needs 0 <= gamma < stiffness {stiffness}"
                )));
            }
            Ok(StringLaw::new(
                stiffness,
                len * (1.0 - g / stiffness),
                damping,
            ))
        })
        .collect()
}

/// JSON configuration for a dynamics run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub gravity: [f64; 3],
    /// kg per bar
    pub bar_mass: f64,
    /// kg per string
    pub string_mass: f64,
    /// Extra point mass per node, kg.
    pub node_mass: f64,
    /// Uniform string stiffness, N/m.
    pub string_stiffness: f64,
    /// Uniform string damping, N·s/m.
    pub string_damping: f64,
    /// Rest length as a fraction of each string's initial length.
    pub rest_length_ratio: f64,
    /// Per-string laws; overrides the uniform settings when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub string_laws: Option<Vec<StringLaw>>,
    pub schedule: Vec<ScheduleEntry>,
    /// Initial nodal velocities, m/s, keyed by node id.
    pub initial_velocities: BTreeMap<String, [f64; 3]>,
    pub dt: f64,
    pub duration: f64,
    pub sample_stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub start: f64,
    #[serde(default)]
    pub forces: BTreeMap<String, [f64; 3]>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            gravity: [0.0, 0.0, -9.81],
            bar_mass: 0.1,
            string_mass: 0.0,
            node_mass: 0.0,
            string_stiffness: 1000.0,
            string_damping: 0.0,
            rest_length_ratio: 1.0,
            string_laws: None,
            schedule: Vec::new(),
            initial_velocities: BTreeMap::new(),
            dt: DEFAULT_DT,
            duration: 1.0,
            sample_stride: 100,
        }
    }
}

fn forces_to_load(forces: &BTreeMap<String, [f64; 3]>, nodes: usize) -> Result<LoadCase> {
    let json = serde_json::json!({ "forces": forces }).to_string();
    LoadCase::from_json_str(&json, nodes)
}

impl DynamicsConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds the model, initial state and load schedule for `topology`.
    pub fn build(
        &self,
        topology: &Topology,
    ) -> Result<(DynamicsModel, DynamicsState, LoadSchedule)> {
        let n = topology.node_count();
        let positions = topology.positions();
        let laws = match &self.string_laws {
            Some(l) => l.clone(),
            None => topology
                .member_lengths(&positions)
                .iter()
                .zip(&topology.members)
                .filter(|(_, m)| m.kind == crate::topology::MemberKind::String)
                .map(|(len, _)| {
                    StringLaw::new(
                        self.string_stiffness,
                        len * self.rest_length_ratio,
                        self.string_damping,
                    )
                })
                .collect(),
        };
        let masses = MassModel::uniform(topology, self.bar_mass, self.string_mass, self.node_mass);
        let model = DynamicsModel::new(topology, &masses, laws, Vector3::from(self.gravity))?;
        let mut state = DynamicsState::at_rest(positions);
        state.velocities = forces_to_load(&self.initial_velocities, n)?.forces;
        let schedule = LoadSchedule::new(
            self.schedule
                .iter()
                .map(|e| Ok((e.start, forces_to_load(&e.forces, n)?)))
                .collect::<Result<Vec<_>>>()?,
        );
        Ok((model, state, schedule))
    }
}
