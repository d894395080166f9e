//! Minimum structural mass for given force densities.
//!
//! Strings are sized for yield, `(ρ_s/σ_s) γ ‖s‖²`. Bars take the larger of
//! the yield mass `(ρ_b/σ_b) λ ‖b‖²` and the buckling mass
//! `2 ρ_b λ^½ (‖b‖⁵ / (c E_b))^½`, where `c` is [`BUCKLING_CONSTANT`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statics::{solve_force_densities, EquilibriumSolution, LoadCase};
use crate::topology::{build_bar_system, BarSystem, MemberKind, Topology};

/// Factor multiplying `E_b` inside the buckling radical.
#[cfg(not(feature = "euler-pi-cubed"))]
pub const BUCKLING_CONSTANT: f64 = PI;
/// Factor multiplying `E_b` inside the buckling radical.
#[cfg(feature = "euler-pi-cubed")]
pub const BUCKLING_CONSTANT: f64 = PI * PI * PI;

/// Force densities this far below zero are treated as round-off.
const NEGATIVE_ROUNDOFF: f64 = 1e-12;

const BUILTIN_MATERIALS: &str = include_str!("../profiles/materials.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    /// kg/m³
    pub density: f64,
    /// Pa
    pub yield_strength: f64,
    /// Pa
    pub youngs_modulus: f64,
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("density", self.density),
            ("yield strength", self.yield_strength),
            ("Young's modulus", self.youngs_modulus),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "material {:?}: {what} must be positive, got {v}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn aluminum() -> Self {
        MaterialLibrary::builtin().get("aluminum").unwrap().clone()
    }

    pub fn uhmwpe() -> Self {
        MaterialLibrary::builtin().get("uhmwpe").unwrap().clone()
    }
}

/// Named materials, looked up by each member's `material` field.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialLibrary {
    materials: BTreeMap<String, Material>,
}

#[derive(Serialize, Deserialize)]
struct MaterialsFile {
    materials: Vec<Material>,
}

impl MaterialLibrary {
    /// Aluminum (bars) and UHMWPE (strings).
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN_MATERIALS).expect("bundled materials parse")
    }

    pub fn from_materials(materials: impl IntoIterator<Item = Material>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for m in materials {
            m.validate()?;
            map.insert(m.name.clone(), m);
        }
        Ok(Self { materials: map })
    }

    /// Parses `{"materials": [...]}`. Entries are added on top of the
    /// built-in materials, replacing any with the same name.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: MaterialsFile = serde_json::from_str(s)?;
        Self::from_materials(file.materials)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lib = Self::builtin();
        for (k, v) in Self::from_json_str(&s)?.materials {
            lib.materials.insert(k, v);
        }
        Ok(lib)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MaterialsFile {
            materials: self.materials.values().cloned().collect(),
        })?)
    }

    pub fn get(&self, name: &str) -> Option<&Material> {
        self.materials.get(name)
    }

    pub fn insert(&mut self, material: Material) -> Result<()> {
        material.validate()?;
        self.materials.insert(material.name.clone(), material);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureMode {
    Yield,
    Buckling,
}

fn check_length(length: f64) -> Result<()> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::Argument(format!(
            "member length must be positive, got {length}"
        )));
    }
    Ok(())
}

/// Yield-limited string mass, kg.
pub fn string_mass(gamma: f64, length: f64, material: &Material) -> Result<f64> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::Argument(format!(
            "string force density must be nonnegative, got {gamma}"
        )));
    }
    check_length(length)?;
    Ok(material.density / material.yield_strength * gamma * length * length)
}

/// Bar mass, kg, and the failure mode that governs it. Ties go to yield.
pub fn bar_mass(lambda: f64, length: f64, material: &Material) -> Result<(f64, FailureMode)> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Argument(format!(
            "bar force density must be nonnegative (compression), got {lambda}"
        )));
    }
    check_length(length)?;
    let rho = material.density;
    let yield_mass = rho / material.yield_strength * lambda * length * length;
    let buckling_mass = 2.0
        * rho
        * lambda.sqrt()
        * (length.powi(5) / (BUCKLING_CONSTANT * material.youngs_modulus)).sqrt();
    if buckling_mass > yield_mass {
        Ok((buckling_mass, FailureMode::Buckling))
    } else {
        Ok((yield_mass, FailureMode::Yield))
    }
}

/// Force density at which a bar's yield and buckling masses coincide:
/// `4 σ² ‖b‖ / (c E)`. Below it buckling governs.
pub fn crossover_force_density(length: f64, material: &Material) -> f64 {
    4.0 * material.yield_strength * material.yield_strength * length
        / (BUCKLING_CONSTANT * material.youngs_modulus)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberMass {
    pub member: usize,
    pub kind: MemberKind,
    pub material: String,
    pub length: f64,
    pub force_density: f64,
    pub mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<FailureMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub members: Vec<MemberMass>,
    pub string_total: f64,
    pub bar_total: f64,
    pub total: f64,
}

/// Sum in ascending order so the result does not depend on member order.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

impl MassReport {
    fn from_members(members: Vec<MemberMass>) -> Self {
        let of = |kind| {
            ordered_sum(
                members
                    .iter()
                    .filter(|m| m.kind == kind)
                    .map(|m| m.mass)
                    .collect(),
            )
        };
        let string_total = of(MemberKind::String);
        let bar_total = of(MemberKind::Bar);
        Self {
            members,
            string_total,
            bar_total,
            total: string_total + bar_total,
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV with columns `member,kind,length,force_density,mass,mode`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["member", "kind", "length", "force_density", "mass", "mode"])?;
        for m in &self.members {
            let mode = match m.mode {
                Some(FailureMode::Yield) => "yield",
                Some(FailureMode::Buckling) => "buckling",
                None => "",
            };
            w.write_record([
                m.member.to_string(),
                m.kind.to_string(),
                m.length.to_string(),
                m.force_density.to_string(),
                m.mass.to_string(),
                mode.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn clamp_roundoff(x: f64) -> f64 {
    if (-NEGATIVE_ROUNDOFF..0.0).contains(&x) {
        0.0
    } else {
        x
    }
}

/// Member-by-member minimum mass for an equilibrium solution, materials
/// resolved through each member's `material` name.
pub fn total_min_mass(
    topology: &Topology,
    positions: &Matrix3xX<f64>,
    solution: &EquilibriumSolution,
    materials: &MaterialLibrary,
) -> Result<MassReport> {
    if solution.gamma.len() != topology.string_count()
        || solution.lambda.len() != topology.bar_count()
        || positions.ncols() != topology.node_count()
    {
        return Err(Error::Dimension(
            "solution or positions do not match the topology".into(),
        ));
    }
    let mut members = Vec::with_capacity(topology.members.len());
    let (mut gi, mut bi) = (0, 0);
    for (idx, member) in topology.members.iter().enumerate() {
        let material = materials.get(&member.material).ok_or_else(|| {
            Error::Config(format!(
                "member {idx} uses material {:?}, which is not defined",
                member.material
            ))
        })?;
        let length = topology.member_vector(positions, idx).norm();
        let (force_density, mass, mode) = match member.kind {
            MemberKind::String => {
                let g = clamp_roundoff(solution.gamma[gi]);
                gi += 1;
                (g, string_mass(g, length, material)?, None)
            }
            MemberKind::Bar => {
                let l = clamp_roundoff(solution.lambda[bi]);
                bi += 1;
                let (m, mode) = bar_mass(l, length, material)
                    .map_err(|e| Error::Argument(format!("bar member {idx}: {e}")))?;
                (l, m, Some(mode))
            }
        };
        members.push(MemberMass {
            member: idx,
            kind: member.kind,
            material: member.material.clone(),
            length,
            force_density,
            mass,
            mode,
        });
    }
    Ok(MassReport::from_members(members))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub aspect: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuumComparison {
    pub system: BarSystem,
    pub load: f64,
    pub span: f64,
    pub continuum_mass: f64,
    /// Regime of the continuum bar.
    pub regime: FailureMode,
    pub best_aspect: Option<f64>,
    pub best_mass: Option<f64>,
    /// `best_mass / continuum_mass`.
    pub ratio: Option<f64>,
    /// Set when the load was too small for a finite ratio and a probe load
    /// stood in for it.
    pub limit_guard: bool,
    pub sweep: Vec<SweepPoint>,
}

/// Load used when the requested load gives zero masses.
const PROBE_LOAD: f64 = 1e-6;

/// Compares a single continuum bar carrying `load` over `span` with the
/// lightest bar/string system found over `aspects`.
pub fn compare_to_continuum_bar(
    load: f64,
    span: f64,
    bar_material: &Material,
    string_material: &Material,
    system: BarSystem,
    aspects: &[f64],
) -> Result<ContinuumComparison> {
    if !(load >= 0.0 && load.is_finite()) {
        return Err(Error::Argument(format!(
            "load must be nonnegative, got {load}"
        )));
    }
    if !(span > 0.0 && span.is_finite()) {
        return Err(Error::Argument(format!(
            "span must be positive, got {span}"
        )));
    }
    let mut effective_load = load;
    let mut continuum_mass = bar_mass(load / span, span, bar_material)?.0;
    let limit_guard = continuum_mass == 0.0;
    if limit_guard {
        effective_load = PROBE_LOAD;
        continuum_mass = bar_mass(effective_load / span, span, bar_material)?.0;
    }
    let regime = if effective_load / span < crossover_force_density(span, bar_material) {
        FailureMode::Buckling
    } else {
        FailureMode::Yield
    };

    let materials = MaterialLibrary::from_materials([
        Material {
            name: "bar".into(),
            ..bar_material.clone()
        },
        Material {
            name: "string".into(),
            ..string_material.clone()
        },
    ])?;

    let mut sweep = Vec::with_capacity(aspects.len());
    let mut best: Option<(f64, f64)> = None;
    for &aspect in aspects {
        match system_mass(system, span, aspect, effective_load, &materials) {
            Ok(mass) => {
                if best.is_none_or(|(_, m)| mass < m) {
                    best = Some((aspect, mass));
                }
                sweep.push(SweepPoint {
                    aspect,
                    mass: Some(mass),
                    skipped: None,
                });
            }
            Err(e) => sweep.push(SweepPoint {
                aspect,
                mass: None,
                skipped: Some(e.to_string()),
            }),
        }
    }

    Ok(ContinuumComparison {
        system,
        load,
        span,
        continuum_mass,
        regime,
        best_aspect: best.map(|b| b.0),
        best_mass: best.map(|b| b.1),
        ratio: best.map(|b| b.1 / continuum_mass),
        limit_guard,
        sweep,
    })
}

fn system_mass(
    system: BarSystem,
    span: f64,
    aspect: f64,
    load: f64,
    materials: &MaterialLibrary,
) -> Result<f64> {
    let mut t = build_bar_system(system, span, aspect)?;
    for m in &mut t.members {
        m.material = match m.kind {
            MemberKind::Bar => "bar".into(),
            MemberKind::String => "string".into(),
        };
    }
    // Equal and opposite compressive end loads on the two terminals.
    let mut w = LoadCase::zeros(t.node_count());
    w.set(0, Vector3::new(load, 0.0, 0.0));
    w.set(1, Vector3::new(-load, 0.0, 0.0));
    let p = t.positions();
    let sol = solve_force_densities(&t, &p, &w)?;
    Ok(total_min_mass(&t, &p, &sol, materials)?.total)
}

/// Evenly spaced aspect ratios in `[lo, hi]`.
pub fn aspect_sweep(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_materials_carry_listed_constants() {
        let al = Material::aluminum();
        assert_eq!(
            (al.density, al.yield_strength, al.youngs_modulus),
            (2700.0, 110e6, 60e9)
        );
        let pe = Material::uhmwpe();
        assert_eq!(
            (pe.density, pe.yield_strength, pe.youngs_modulus),
            (970.0, 2.7e9, 120e9)
        );
    }

    #[test]
    fn string_mass_values() {
        let pe = Material::uhmwpe();
        assert_eq!(string_mass(0.0, 1.0, &pe).unwrap(), 0.0);
        let m = string_mass(1000.0, 1.0, &pe).unwrap();
        assert!((m - 970.0 * 1000.0 / 2.7e9).abs() < 1e-18);
        assert!((m - 3.593e-4).abs() < 1e-7);
        let m2 = string_mass(1000.0, 2.0, &pe).unwrap();
        assert!((m2 / m - 4.0).abs() < 1e-14);
        assert!(string_mass(-1.0, 1.0, &pe).is_err());
        assert!(string_mass(1.0, 0.0, &pe).is_err());
    }

    #[test]
    fn bar_mass_zero_is_yield() {
        assert_eq!(
            bar_mass(0.0, 1.0, &Material::aluminum()).unwrap(),
            (0.0, FailureMode::Yield)
        );
        assert!(bar_mass(-1.0, 1.0, &Material::aluminum()).is_err());
    }

    #[test]
    fn buckling_mass_scales_with_length_to_five_halves() {
        let al = Material::aluminum();
        let (m1, mode1) = bar_mass(10.0, 1.0, &al).unwrap();
        let (m2, mode2) = bar_mass(10.0, 2.0, &al).unwrap();
        assert_eq!(
            (mode1, mode2),
            (FailureMode::Buckling, FailureMode::Buckling)
        );
        assert!((m2 / m1 - 2f64.powf(2.5)).abs() < 1e-12 * 2f64.powf(2.5));
    }

    #[test]
    fn crossover_matches_bisection() {
        let al = Material::aluminum();
        // Bisection on the sign of yield − buckling, independent of the closed form.
        let diff = |l: f64| {
            al.density / al.yield_strength * l
                - 2.0
                    * al.density
                    * l.sqrt()
                    * (1.0 / (BUCKLING_CONSTANT * al.youngs_modulus)).sqrt()
        };
        let (mut lo, mut hi) = (1e-3_f64, 1e9_f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if diff(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let star = crossover_force_density(1.0, &al);
        assert!((star - lo).abs() < 1e-9 * star);
        assert_eq!(
            bar_mass(0.5 * star, 1.0, &al).unwrap().1,
            FailureMode::Buckling
        );
        assert_eq!(
            bar_mass(2.0 * star, 1.0, &al).unwrap().1,
            FailureMode::Yield
        );
    }

    #[test]
    fn materials_json_round_trip() {
        let lib = MaterialLibrary::builtin();
        let back = MaterialLibrary::from_json_str(&lib.to_json_string().unwrap()).unwrap();
        assert_eq!(back, lib);
        assert!(MaterialLibrary::from_json_str(
            r#"{"materials":[{"name":"x","density":0,"yield_strength":1,"youngs_modulus":1}]}"#
        )
        .is_err());
    }

    #[test]
    fn csv_columns() {
        let r = MassReport::from_members(vec![MemberMass {
            member: 0,
            kind: MemberKind::Bar,
            material: "aluminum".into(),
            length: 1.0,
            force_density: 2.0,
            mass: 3.0,
            mode: Some(FailureMode::Buckling),
        }]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "member,kind,length,force_density,mass,mode\n0,bar,1,2,3,buckling\n"
        );
    }

    #[test]
    fn aspect_sweep_endpoints() {
        let s = aspect_sweep(0.1, 0.9, 5);
        assert_eq!(s.len(), 5);
        assert_eq!((s[0], s[4]), (0.1, 0.9));
        assert!((s[2] - 0.5).abs() < 1e-15);
        assert!(aspect_sweep(0.1, 0.9, 0).is_empty());
    }
}
