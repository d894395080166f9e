//! Tensegrity graphs: nodes, bars and strings, their validation, builders
//! for the canonical test structures, and connectivity matrices.
//!
//! Node and member ordering produced by every builder is a pure function of
//! its arguments, so the derived matrices are reproducible bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default material name assigned to bars by the builders.
pub const DEFAULT_BAR_MATERIAL: &str = "aluminum";
/// Default material name assigned to strings by the builders.
pub const DEFAULT_STRING_MATERIAL: &str = "uhmwpe";

/// Smallest string inclination (radians) accepted by [`build_bar_system`].
pub const MIN_BAR_SYSTEM_ANGLE: f64 = 1e-3;

/// Inner radius of the rig's middle ring: a 6 in inner diameter.
pub const RIG_MIDDLE_RING_RADIUS: f64 = 0.5 * 6.0 * 0.0254;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    #[serde(rename = "pos")]
    pub position: [f64; 3],
    #[serde(default)]
    pub anchored: bool,
}

impl Node {
    pub fn new(id: usize, position: [f64; 3]) -> Self {
        Self {
            id,
            position,
            anchored: false,
        }
    }

    pub fn pos(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemberKind {
    Bar,
    String,
}

impl fmt::Display for MemberKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemberKind::Bar => f.write_str("bar"),
            MemberKind::String => f.write_str("string"),
        }
    }
}

/// A bar or string. `ends[0]` carries the −1 entry of the connectivity row,
/// `ends[1]` the +1 entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub kind: MemberKind,
    pub ends: [usize; 2],
    pub material: String,
}

impl Member {
    pub fn bar(a: usize, b: usize) -> Self {
        Self {
            kind: MemberKind::Bar,
            ends: [a, b],
            material: DEFAULT_BAR_MATERIAL.to_string(),
        }
    }

    pub fn string(a: usize, b: usize) -> Self {
        Self {
            kind: MemberKind::String,
            ends: [a, b],
            material: DEFAULT_STRING_MATERIAL.to_string(),
        }
    }
}

/// Free-form description attached to a topology. `groups` names sets of
/// node or member indices (e.g. `"stays"`, `"terminals"`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub groups: BTreeMap<String, Vec<usize>>,
}

impl Metadata {
    fn is_empty(&self) -> bool {
        self.name.is_empty() && self.tags.is_empty() && self.groups.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    #[serde(default, skip_serializing_if = "Metadata::is_empty")]
    pub metadata: Metadata,
    pub nodes: Vec<Node>,
    pub members: Vec<Member>,
}

/// One problem found by [`Topology::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NoNodes,
    NonContiguousId { index: usize, id: usize },
    NonFinitePosition { node: usize },
    DanglingNode { member: usize, node: usize },
    SelfLoop { member: usize },
    ZeroLength { member: usize },
    DuplicateMember { first: usize, second: usize },
    IsolatedNode { node: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoNodes => write!(f, "topology has no nodes"),
            Violation::NonContiguousId { index, id } => {
                write!(
                    f,
                    "node at index {index} has id {id}; ids must be contiguous from 0"
                )
            }
            Violation::NonFinitePosition { node } => {
                write!(f, "node {node} has a non-finite position")
            }
            Violation::DanglingNode { member, node } => {
                write!(f, "member {member} references missing node {node}")
            }
            Violation::SelfLoop { member } => {
                write!(
                    f,
                    "member {member} is a zero-length/self-loop (both ends on one node)"
                )
            }
            Violation::ZeroLength { member } => {
                write!(f, "member {member} has zero length")
            }
            Violation::DuplicateMember { first, second } => {
                write!(f, "member {second} duplicates member {first}")
            }
            Violation::IsolatedNode { node } => {
                write!(f, "isolated node {node} has no members")
            }
        }
    }
}

impl Topology {
    pub fn new(nodes: Vec<Node>, members: Vec<Member>) -> Self {
        Self {
            metadata: Metadata::default(),
            nodes,
            members,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Member indices of all bars, in member order.
    pub fn bar_indices(&self) -> Vec<usize> {
        self.indices_of(MemberKind::Bar)
    }

    /// Member indices of all strings, in member order.
    pub fn string_indices(&self) -> Vec<usize> {
        self.indices_of(MemberKind::String)
    }

    fn indices_of(&self, kind: MemberKind) -> Vec<usize> {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn bar_count(&self) -> usize {
        self.members
            .iter()
            .filter(|m| m.kind == MemberKind::Bar)
            .count()
    }

    pub fn string_count(&self) -> usize {
        self.members
            .iter()
            .filter(|m| m.kind == MemberKind::String)
            .count()
    }

    /// Nodal matrix N: column `i` holds the coordinates of node `i`.
    pub fn positions(&self) -> Matrix3xX<f64> {
        Matrix3xX::from_fn(self.nodes.len(), |r, c| self.nodes[c].position[r])
    }

    pub fn anchored(&self) -> Vec<bool> {
        self.nodes.iter().map(|n| n.anchored).collect()
    }

    pub fn anchored_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.anchored)
            .map(|(i, _)| i)
            .collect()
    }

    /// Returns a copy with the listed nodes anchored.
    pub fn with_anchored(mut self, nodes: &[usize]) -> Self {
        for &i in nodes {
            if let Some(n) = self.nodes.get_mut(i) {
                n.anchored = true;
            }
        }
        self
    }

    /// Returns a copy whose node positions are taken from `positions`.
    pub fn with_positions(mut self, positions: &Matrix3xX<f64>) -> Result<Self> {
        if positions.ncols() != self.nodes.len() {
            return Err(Error::Dimension(format!(
                "{} position columns for {} nodes",
                positions.ncols(),
                self.nodes.len()
            )));
        }
        for (i, n) in self.nodes.iter_mut().enumerate() {
            n.position = [positions[(0, i)], positions[(1, i)], positions[(2, i)]];
        }
        Ok(self)
    }

    /// Member vector `x[ends[1]] - x[ends[0]]` for the given positions.
    pub fn member_vector(&self, positions: &Matrix3xX<f64>, member: usize) -> Vector3<f64> {
        let [a, b] = self.members[member].ends;
        positions.column(b) - positions.column(a)
    }

    pub fn member_lengths(&self, positions: &Matrix3xX<f64>) -> Vec<f64> {
        (0..self.members.len())
            .map(|m| self.member_vector(positions, m).norm())
            .collect()
    }

    /// Lists every structural problem; an empty list means the topology is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.nodes.len();
        if n == 0 {
            out.push(Violation::NoNodes);
        }
        for (index, node) in self.nodes.iter().enumerate() {
            if node.id != index {
                out.push(Violation::NonContiguousId { index, id: node.id });
            }
            if node.position.iter().any(|x| !x.is_finite()) {
                out.push(Violation::NonFinitePosition { node: index });
            }
        }

        let mut seen: HashMap<(MemberKind, usize, usize), usize> = HashMap::new();
        let mut referenced = vec![false; n];
        for (mi, m) in self.members.iter().enumerate() {
            let [a, b] = m.ends;
            let mut dangling = false;
            for e in [a, b] {
                if e >= n {
                    out.push(Violation::DanglingNode {
                        member: mi,
                        node: e,
                    });
                    dangling = true;
                } else {
                    referenced[e] = true;
                }
            }
            if a == b {
                out.push(Violation::SelfLoop { member: mi });
                continue;
            }
            if dangling {
                continue;
            }
            if self.nodes[a].position == self.nodes[b].position {
                out.push(Violation::ZeroLength { member: mi });
            }
            let key = (m.kind, a.min(b), a.max(b));
            if let Some(&first) = seen.get(&key) {
                out.push(Violation::DuplicateMember { first, second: mi });
            } else {
                seen.insert(key, mi);
            }
        }
        for (node, r) in referenced.iter().enumerate() {
            if !r {
                out.push(Violation::IsolatedNode { node });
            }
        }
        out
    }

    /// Fails with [`Error::InvalidTopology`] unless [`Topology::validate`] is clean.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidTopology(v))
        }
    }

    /// Bar and string connectivity matrices `(C_b, C_s)`, one row per
    /// member with −1 at `ends[0]` and +1 at `ends[1]`.
    pub fn connectivity_matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.nodes.len();
        let build = |kind: MemberKind| -> Result<DMatrix<f64>> {
            let idx = self.indices_of(kind);
            let mut c = DMatrix::zeros(idx.len(), n);
            for (row, &mi) in idx.iter().enumerate() {
                let [a, b] = self.members[mi].ends;
                for e in [a, b] {
                    if e >= n {
                        return Err(Error::DanglingNode {
                            member: mi,
                            node: e,
                        });
                    }
                }
                c[(row, a)] -= 1.0;
                c[(row, b)] += 1.0;
            }
            Ok(c)
        };
        Ok((build(MemberKind::Bar)?, build(MemberKind::String)?))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = self.to_json_string()?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

fn polar(radius: f64, angle: f64, z: f64) -> [f64; 3] {
    [radius * angle.cos(), radius * angle.sin(), z]
}

/// Equilibrium twist of an `n`-strut prism built by [`build_prism`]:
/// `π/2 + π/n`.
pub fn prism_equilibrium_twist(n_struts: usize) -> f64 {
    PI / 2.0 + PI / n_struts as f64
}

/// Regular `n`-strut tensegrity prism.
///
/// Nodes `0..n` lie on the bottom circle (z = 0) counterclockwise from the
/// +x axis, nodes `n..2n` on the top circle (z = `height`), top node `i`
/// rotated by `twist` from bottom node `i`. Members, in order: bars
/// `i → n+i`, bottom ring strings, top ring strings, then the vertical
/// strings `i → n+(i−1) mod n`.
pub fn build_prism(n_struts: usize, radius: f64, height: f64, twist: f64) -> Result<Topology> {
    if n_struts < 3 {
        return Err(Error::Argument(format!(
            "prism needs n_struts >= 3, got {n_struts}"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) || !(height > 0.0 && height.is_finite()) {
        return Err(Error::Argument(format!(
            "prism radius and height must be positive, got radius {radius}, height {height}"
        )));
    }
    if !twist.is_finite() {
        return Err(Error::Argument("prism twist must be finite".into()));
    }
    let n = n_struts;
    let step = 2.0 * PI / n as f64;
    let mut nodes = Vec::with_capacity(2 * n);
    for i in 0..n {
        nodes.push(Node::new(i, polar(radius, step * i as f64, 0.0)));
    }
    for i in 0..n {
        nodes.push(Node::new(
            n + i,
            polar(radius, step * i as f64 + twist, height),
        ));
    }
    let mut members = Vec::with_capacity(4 * n);
    members.extend((0..n).map(|i| Member::bar(i, n + i)));
    members.extend((0..n).map(|i| Member::string(i, (i + 1) % n)));
    members.extend((0..n).map(|i| Member::string(n + i, n + (i + 1) % n)));
    members.extend((0..n).map(|i| Member::string(i, n + (i + n - 1) % n)));

    let mut t = Topology::new(nodes, members);
    t.metadata.name = format!("prism-{n}");
    t.metadata.groups.insert("bottom".into(), (0..n).collect());
    t.metadata.groups.insert("top".into(), (n..2 * n).collect());
    Ok(t)
}

/// Planar bar/string network standing in for a single compressive member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarSystem {
    /// Two collinear half-bars and a transverse bar meeting at a centre
    /// node, braced by four strings from the transverse tips to the terminals.
    TBar,
    /// A rhombus of four bars held open by one transverse string.
    DBar,
}

impl fmt::Display for BarSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BarSystem::TBar => f.write_str("tbar"),
            BarSystem::DBar => f.write_str("dbar"),
        }
    }
}

/// T-bar or D-bar spanning `span` along x. Terminal nodes 0 and 1 sit at
/// `(∓span/2, 0, 0)`; the transverse tips sit at `(0, ±aspect·span/2, 0)`.
pub fn build_bar_system(kind: BarSystem, span: f64, aspect: f64) -> Result<Topology> {
    if !(span > 0.0 && span.is_finite()) {
        return Err(Error::Argument(format!(
            "span must be positive, got {span}"
        )));
    }
    if !(aspect > 0.0 && aspect < 1.0) {
        return Err(Error::Argument(format!(
            "aspect must lie in (0, 1), got {aspect}"
        )));
    }
    if aspect.atan() < MIN_BAR_SYSTEM_ANGLE {
        return Err(Error::Geometry(format!(
            "aspect {aspect} gives a string angle below {MIN_BAR_SYSTEM_ANGLE} rad"
        )));
    }
    let h = 0.5 * span;
    let w = aspect * h;
    let (nodes, members) = match kind {
        BarSystem::TBar => (
            vec![
                Node::new(0, [-h, 0.0, 0.0]),
                Node::new(1, [h, 0.0, 0.0]),
                Node::new(2, [0.0, 0.0, 0.0]),
                Node::new(3, [0.0, w, 0.0]),
                Node::new(4, [0.0, -w, 0.0]),
            ],
            vec![
                Member::bar(0, 2),
                Member::bar(2, 1),
                Member::bar(2, 3),
                Member::bar(2, 4),
                Member::string(0, 3),
                Member::string(3, 1),
                Member::string(0, 4),
                Member::string(4, 1),
            ],
        ),
        BarSystem::DBar => (
            vec![
                Node::new(0, [-h, 0.0, 0.0]),
                Node::new(1, [h, 0.0, 0.0]),
                Node::new(2, [0.0, w, 0.0]),
                Node::new(3, [0.0, -w, 0.0]),
            ],
            vec![
                Member::bar(0, 2),
                Member::bar(2, 1),
                Member::bar(0, 3),
                Member::bar(3, 1),
                Member::string(3, 2),
            ],
        ),
    };
    let mut t = Topology::new(nodes, members);
    t.metadata.name = format!("{kind}");
    t.metadata.tags.insert("aspect".into(), aspect.to_string());
    t.metadata.groups.insert("terminals".into(), vec![0, 1]);
    Ok(t)
}

/// Parameters of the drilling-rig frame: three stacked rings of joints
/// joined by connecting rods and braced by stay cables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigParams {
    /// Bottom, middle and top ring radii, metres.
    pub ring_radii: [f64; 3],
    /// Bottom, middle and top ring heights, metres (strictly increasing).
    pub ring_heights: [f64; 3],
    /// Elevation of every primary stay above the base plane, radians.
    pub stay_angle: f64,
    /// Joints per ring.
    pub nodes_per_ring: usize,
    /// Stays leaving each upper-ring joint toward the ring below. The first
    /// one is the primary stay at `stay_angle`; extra stays go to further
    /// lower-ring neighbours and are listed in the `secondary_stays` group.
    pub stays_per_joint: usize,
}

impl Default for RigParams {
    fn default() -> Self {
        let r = RIG_MIDDLE_RING_RADIUS;
        Self {
            ring_radii: [r, r, r],
            ring_heights: [0.0, 0.125, 0.25],
            stay_angle: PI / 4.0,
            nodes_per_ring: 4,
            stays_per_joint: 1,
        }
    }
}

/// Builds the rig frame.
///
/// Each storey is a twisted prism: rod `i` joins lower joint `i` to upper
/// joint `i`, and the primary stay runs from upper joint `i` down to lower
/// joint `i−1`. The storey twist is solved so that every primary stay
/// descends at exactly `stay_angle`. Ring segments of the middle and top
/// rings are bars; the bottom ring is anchored.
///
/// Node order: bottom ring, middle ring, top ring. Member order: lower rods,
/// upper rods, middle ring bars, top ring bars, lower stays, upper stays,
/// secondary stays.
pub fn build_rig(params: &RigParams) -> Result<Topology> {
    let k = params.nodes_per_ring;
    if k < 3 {
        return Err(Error::Argument(format!(
            "rig needs at least 3 joints per ring, got {k}"
        )));
    }
    if params
        .ring_radii
        .iter()
        .any(|r| !(*r > 0.0 && r.is_finite()))
    {
        return Err(Error::Argument("ring radii must be positive".into()));
    }
    let h = params.ring_heights;
    if !(h.iter().all(|x| x.is_finite()) && h[0] < h[1] && h[1] < h[2]) {
        return Err(Error::Argument(
            "ring heights must be finite and strictly increasing".into(),
        ));
    }
    let a = params.stay_angle;
    if !(a > 0.0 && a < PI / 2.0) {
        return Err(Error::Argument(format!(
            "stay angle must lie in (0, pi/2), got {a}"
        )));
    }
    if params.stays_per_joint == 0 || params.stays_per_joint >= k {
        return Err(Error::Argument(format!(
            "stays_per_joint must lie in 1..{k}, got {}",
            params.stays_per_joint
        )));
    }

    let step = 2.0 * PI / k as f64;
    // Angular separation between an upper joint and the lower joint its
    // primary stay lands on, from the law of cosines on the horizontal chord.
    let separation = |s: usize| -> Result<f64> {
        let (rl, ru) = (params.ring_radii[s], params.ring_radii[s + 1]);
        let chord = (h[s + 1] - h[s]) / a.tan();
        let c = (rl * rl + ru * ru - chord * chord) / (2.0 * rl * ru);
        if !(-1.0..=1.0).contains(&c) {
            return Err(Error::Geometry(format!(
                "a stay at {:.6} rad cannot reach ring {s} from ring {}: horizontal run {chord:.6} m \
                 outside [{:.6}, {:.6}] m",
                a,
                s + 1,
                (ru - rl).abs(),
                ru + rl
            )));
        }
        Ok(c.acos())
    };
    let twist = [separation(0)? - step, separation(1)? - step];

    let mut nodes = Vec::with_capacity(3 * k);
    let mut offset = 0.0;
    for ring in 0..3 {
        if ring > 0 {
            offset += twist[ring - 1];
        }
        for i in 0..k {
            let mut node = Node::new(
                ring * k + i,
                polar(params.ring_radii[ring], step * i as f64 + offset, h[ring]),
            );
            node.anchored = ring == 0;
            nodes.push(node);
        }
    }

    let id = |ring: usize, i: isize| ring * k + i.rem_euclid(k as isize) as usize;
    let mut members = Vec::new();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut push = |members: &mut Vec<Member>, group: &str, m: Member| {
        groups
            .entry(group.to_string())
            .or_default()
            .push(members.len());
        members.push(m);
    };
    for ring in 0..2 {
        for i in 0..k as isize {
            push(
                &mut members,
                "rods",
                Member::bar(id(ring, i), id(ring + 1, i)),
            );
        }
    }
    for (ring, group) in [(1, "ring_middle"), (2, "ring_top")] {
        for i in 0..k as isize {
            push(
                &mut members,
                group,
                Member::bar(id(ring, i), id(ring, i + 1)),
            );
        }
    }
    for ring in 0..2 {
        for i in 0..k as isize {
            push(
                &mut members,
                "stays",
                Member::string(id(ring, i - 1), id(ring + 1, i)),
            );
        }
    }
    // Further neighbours: i+1, i-2, i+2, ...
    for extra in 1..params.stays_per_joint {
        let off = if extra % 2 == 1 {
            extra.div_ceil(2) as isize
        } else {
            -((extra / 2) as isize + 1)
        };
        for ring in 0..2 {
            for i in 0..k as isize {
                push(
                    &mut members,
                    "secondary_stays",
                    Member::string(id(ring, i + off), id(ring + 1, i)),
                );
            }
        }
    }

    let mut t = Topology::new(nodes, members);
    t.metadata.name = "dreams-rig".into();
    t.metadata.groups = groups;
    t.metadata
        .groups
        .insert("ring_bottom_nodes".into(), (0..k).collect());
    t.metadata
        .groups
        .insert("ring_middle_nodes".into(), (k..2 * k).collect());
    t.metadata
        .groups
        .insert("ring_top_nodes".into(), (2 * k..3 * k).collect());
    t.ensure_valid()?;
    Ok(t)
}
