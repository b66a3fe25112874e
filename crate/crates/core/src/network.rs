//! Communication graph between the leader and the followers.
//!
//! Every follower `i` measures a weighted set of neighbors; the weights on
//! its incoming edges (including a possible edge from the leader) sum to
//! one, so the degree matrix is the identity and the Laplacian-like matrix
//! is `L_m = I - A_m`. Agent indices are zero-based in the API and
//! one-based in edge-list files and reports.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg;

/// Tolerance on incoming-weight sums and the balance residual.
pub const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("agent count must be at least 1, got {0}")]
    InvalidCount(usize),
    #[error("incoming weights of agent {agent} sum to {sum}, expected 1")]
    WeightPolicyViolation { agent: usize, sum: f64 },
    #[error("invalid weight policy: {0}")]
    InvalidPolicy(String),
    #[error("edge weight {0} is not strictly positive")]
    InvalidWeight(f64),
    #[error("self edge on agent {0}")]
    SelfEdge(usize),
    #[error("agent index {index} out of range for m = {m}")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("duplicate edge into agent {dst} from {src}")]
    DuplicateEdge { src: String, dst: usize },
    #[error("agent {0} has no directed path from the leader")]
    UnreachableAgent(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("custom networks must be supplied as an edge list")]
    CustomNeedsEdges,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Topology {
    StarLike,
    CyclicLike,
    Path,
    /// Seeded layered graph; agents are grouped into q-levels.
    Random,
    Custom,
}

impl Topology {
    pub const BUILT_IN: [Topology; 4] =
        [Topology::StarLike, Topology::CyclicLike, Topology::Path, Topology::Random];

    pub fn name(self) -> &'static str {
        match self {
            Topology::StarLike => "star_like",
            Topology::CyclicLike => "cyclic_like",
            Topology::Path => "path",
            Topology::Random => "random",
            Topology::Custom => "custom",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topology {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "star_like" | "star" => Ok(Topology::StarLike),
            "cyclic_like" | "cyclic" => Ok(Topology::CyclicLike),
            "path" => Ok(Topology::Path),
            "random" => Ok(Topology::Random),
            "custom" => Ok(Topology::Custom),
            other => Err(format!("unknown topology `{other}`")),
        }
    }
}

/// How built-in topologies split each agent's unit of incoming weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPolicy {
    /// Leader share of a q = 1 agent (star: every agent; cyclic: agent 1).
    pub leader_share: f64,
    /// Share a deeper agent (q > 1) gives to its parents at level q - 1 in
    /// the random layered graph; the rest goes to same-level peers.
    pub parent_share: f64,
    /// Level sizes for the random layered graph; `None` splits `m` into
    /// three near-equal levels.
    pub levels: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for WeightPolicy {
    fn default() -> Self {
        WeightPolicy { leader_share: 0.5, parent_share: 0.75, levels: None, seed: 7 }
    }
}

impl WeightPolicy {
    fn check(&self) -> Result<(), NetworkError> {
        for (name, v) in [("leader_share", self.leader_share), ("parent_share", self.parent_share)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(NetworkError::InvalidPolicy(format!("{name} = {v} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Directed weighted edges into each follower.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub m: usize,
    pub topology: Topology,
    /// `(i, j, w_ij)`: agent `i` measures agent `j` with weight `w_ij`.
    pub follower_edges: Vec<(usize, usize, f64)>,
    /// `(i, w_il)`: agent `i` measures the leader.
    pub leader_edges: Vec<(usize, f64)>,
    pub seed: u64,
}

impl NetworkSpec {
    /// Checks positivity, indices, self edges, duplicates and unit incoming
    /// weight per agent.
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.m == 0 {
            return Err(NetworkError::InvalidCount(0));
        }
        let m = self.m;
        let mut sums = vec![0.0; m];
        let mut seen = BTreeSet::new();
        for &(i, w) in &self.leader_edges {
            if i >= m {
                return Err(NetworkError::IndexOutOfRange { index: i + 1, m });
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(NetworkError::InvalidWeight(w));
            }
            if !seen.insert((i, None)) {
                return Err(NetworkError::DuplicateEdge { src: "L".into(), dst: i + 1 });
            }
            sums[i] += w;
        }
        for &(i, j, w) in &self.follower_edges {
            for idx in [i, j] {
                if idx >= m {
                    return Err(NetworkError::IndexOutOfRange { index: idx + 1, m });
                }
            }
            if i == j {
                return Err(NetworkError::SelfEdge(i + 1));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(NetworkError::InvalidWeight(w));
            }
            if !seen.insert((i, Some(j))) {
                return Err(NetworkError::DuplicateEdge { src: (j + 1).to_string(), dst: i + 1 });
            }
            sums[i] += w;
        }
        for (agent, sum) in sums.into_iter().enumerate() {
            if (sum - 1.0).abs() > WEIGHT_TOL {
                return Err(NetworkError::WeightPolicyViolation { agent: agent + 1, sum });
            }
        }
        Ok(())
    }

    /// Serializes to the `src dst weight` edge-list format.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &(i, w) in &self.leader_edges {
            out.push_str(&format!("L {} {}\n", i + 1, w));
        }
        for &(i, j, w) in &self.follower_edges {
            out.push_str(&format!("{} {} {}\n", j + 1, i + 1, w));
        }
        out
    }
}

/// Builds one of the built-in topologies.
pub fn build_topology(
    kind: Topology,
    m: usize,
    policy: &WeightPolicy,
) -> Result<NetworkSpec, NetworkError> {
    if m < 1 {
        return Err(NetworkError::InvalidCount(m));
    }
    policy.check()?;
    let mut spec = NetworkSpec {
        m,
        topology: kind,
        follower_edges: Vec::new(),
        leader_edges: Vec::new(),
        seed: policy.seed,
    };
    if m == 1 && kind != Topology::Custom {
        spec.leader_edges.push((0, 1.0));
        spec.validate()?;
        return Ok(spec);
    }
    match kind {
        Topology::StarLike => {
            let lead = policy.leader_share;
            for i in 0..m {
                spec.leader_edges.push((i, lead));
                if lead < 1.0 {
                    let nbrs: BTreeSet<usize> = [(i + m - 1) % m, (i + 1) % m].into_iter().collect();
                    let w = (1.0 - lead) / nbrs.len() as f64;
                    spec.follower_edges.extend(nbrs.into_iter().map(|j| (i, j, w)));
                }
            }
        }
        Topology::Path => {
            spec.leader_edges.push((0, 1.0));
            spec.follower_edges.extend((1..m).map(|i| (i, i - 1, 1.0)));
        }
        Topology::CyclicLike => {
            let lead = policy.leader_share;
            spec.leader_edges.push((0, lead));
            if lead < 1.0 {
                spec.follower_edges.push((0, m - 1, 1.0 - lead));
            }
            spec.follower_edges.extend((1..m).map(|i| (i, i - 1, 1.0)));
        }
        Topology::Random => random_layered(&mut spec, policy)?,
        Topology::Custom => return Err(NetworkError::CustomNeedsEdges),
    }
    spec.validate()?;
    Ok(spec)
}

/// Near-equal split of `m` agents into (at most) three q-levels.
pub fn default_levels(m: usize) -> Vec<usize> {
    let k = m.min(3);
    (0..k).map(|l| m / k + usize::from(l < m % k)).collect()
}

fn random_layered(spec: &mut NetworkSpec, policy: &WeightPolicy) -> Result<(), NetworkError> {
    let m = spec.m;
    let levels = policy.levels.clone().unwrap_or_else(|| default_levels(m));
    if levels.iter().sum::<usize>() != m || levels.iter().any(|&n| n == 0) {
        return Err(NetworkError::InvalidPolicy(format!(
            "level sizes {levels:?} do not partition {m} agents"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut start = 0;
    let mut prev: Vec<usize> = Vec::new();
    for (lvl, &size) in levels.iter().enumerate() {
        let members: Vec<usize> = (start..start + size).collect();
        for &i in &members {
            let peers: Vec<usize> = members.iter().copied().filter(|&j| j != i).collect();
            // (share toward the leader side, sources on the leader side)
            let (upstream_share, upstream): (f64, Vec<Option<usize>>) = if lvl == 0 {
                (policy.leader_share, vec![None])
            } else {
                let k = rng.random_range(1..=prev.len().min(2));
                let picks = sample(&mut rng, prev.len(), k).into_vec();
                let mut picks: Vec<usize> = picks.into_iter().map(|p| prev[p]).collect();
                picks.sort_unstable();
                (policy.parent_share, picks.into_iter().map(Some).collect())
            };
            let peer = (!peers.is_empty() && upstream_share < 1.0)
                .then(|| peers[rng.random_range(0..peers.len())]);
            let up_total = if peer.is_some() { upstream_share } else { 1.0 };
            let w_up = up_total / upstream.len() as f64;
            for src in upstream {
                match src {
                    None => spec.leader_edges.push((i, w_up)),
                    Some(j) => spec.follower_edges.push((i, j, w_up)),
                }
            }
            if let Some(j) = peer {
                spec.follower_edges.push((i, j, 1.0 - upstream_share));
            }
        }
        prev = members;
        start += size;
    }
    Ok(())
}

/// Parses the `src dst weight` edge-list format. The leader is the token
/// `L`; agents are numbered from 1. Blank lines and `#` comments are
/// ignored; anything else malformed is rejected. `m` defaults to the
/// largest index seen.
pub fn parse_edge_list(text: &str, m: Option<usize>) -> Result<NetworkSpec, NetworkError> {
    let mut follower_edges = Vec::new();
    let mut leader_edges = Vec::new();
    let mut seen = BTreeSet::new();
    let mut max_index = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| NetworkError::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(perr(format!("expected `src dst weight`, got `{line}`")));
        }
        let agent = |tok: &str| -> Result<usize, NetworkError> {
            match tok.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(perr(format!("invalid agent `{tok}`"))),
            }
        };
        let src = if fields[0] == "L" { None } else { Some(agent(fields[0])?) };
        if fields[1] == "L" {
            return Err(perr("the leader cannot be a destination".into()));
        }
        let dst = agent(fields[1])?;
        let w: f64 = fields[2].parse().map_err(|_| perr(format!("invalid weight `{}`", fields[2])))?;
        if !seen.insert((src, dst)) {
            return Err(NetworkError::DuplicateEdge {
                src: src.map_or("L".to_string(), |s| s.to_string()),
                dst,
            });
        }
        max_index = max_index.max(dst).max(src.unwrap_or(0));
        match src {
            None => leader_edges.push((dst - 1, w)),
            Some(s) => follower_edges.push((dst - 1, s - 1, w)),
        }
    }
    let m = m.unwrap_or(max_index);
    let spec = NetworkSpec { m, topology: Topology::Custom, follower_edges, leader_edges, seed: 0 };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMatrices {
    /// Laplacian-like matrix `D - A_m`.
    pub l_m: DMatrix<f64>,
    /// Diagonal leader-weight matrix.
    pub a_ell: DMatrix<f64>,
    /// Follower adjacency, `a_m[(i, j)] = w_ij`.
    pub a_m: DMatrix<f64>,
    /// Diagonal of incoming-weight sums.
    pub d: DMatrix<f64>,
    /// Breadth-first distance from the leader (1 = direct leader edge).
    pub q_level: Vec<usize>,
}

impl NetworkMatrices {
    pub fn m(&self) -> usize {
        self.l_m.nrows()
    }

    pub fn max_level(&self) -> usize {
        self.q_level.iter().copied().max().unwrap_or(0)
    }
}

pub fn assemble_matrices(spec: &NetworkSpec) -> Result<NetworkMatrices, NetworkError> {
    spec.validate()?;
    let m = spec.m;
    let mut a_m = DMatrix::zeros(m, m);
    let mut a_ell = DMatrix::zeros(m, m);
    for &(i, j, w) in &spec.follower_edges {
        a_m[(i, j)] = w;
    }
    for &(i, w) in &spec.leader_edges {
        a_ell[(i, i)] = w;
    }
    let d = DMatrix::from_diagonal(&DVector::from_fn(m, |i, _| {
        a_m.row(i).sum() + a_ell[(i, i)]
    }));
    let l_m = &d - &a_m;
    let q_level = levels_from(&a_m, &a_ell);
    if let Some(i) = q_level.iter().position(|&q| q == 0) {
        return Err(NetworkError::UnreachableAgent(i + 1));
    }
    Ok(NetworkMatrices { l_m, a_ell, a_m, d, q_level })
}

/// BFS levels; 0 marks an unreachable agent.
fn levels_from(a_m: &DMatrix<f64>, a_ell: &DMatrix<f64>) -> Vec<usize> {
    let m = a_m.nrows();
    let mut level = vec![0usize; m];
    let mut queue = VecDeque::new();
    for i in 0..m {
        if a_ell[(i, i)] != 0.0 {
            level[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..m {
            if level[i] == 0 && a_m[(i, j)] != 0.0 {
                level[i] = level[j] + 1;
                queue.push_back(i);
            }
        }
    }
    level
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub balance_residual: f64,
    pub min_laplacian_re: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

pub fn validate_network(mats: &NetworkMatrices) -> ValidationReport {
    let m = mats.m();
    let ones = DVector::from_element(m, 1.0);
    let balance_residual = ((&mats.l_m - &mats.a_ell) * &ones).amax();
    let min_laplacian_re = linalg::eigenvalues(&mats.l_m)
        .iter()
        .map(|l| l.re)
        .fold(f64::INFINITY, f64::min);
    let diag: Vec<f64> = (0..m).map(|i| mats.a_ell[(i, i)]).collect();
    let off_diag = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .any(|(i, j)| mats.a_ell[(i, j)] != 0.0);
    let leader_ok = !off_diag
        && diag.iter().all(|&w| (0.0..=1.0).contains(&w))
        && diag.iter().any(|&w| w > 0.0);
    let degree_dev = (&mats.d - DMatrix::<f64>::identity(m, m)).amax();
    let levels = levels_from(&mats.a_m, &mats.a_ell);
    let unreachable: Vec<usize> =
        levels.iter().enumerate().filter(|(_, &q)| q == 0).map(|(i, _)| i + 1).collect();

    let checks = vec![
        Check {
            name: "balance",
            passed: balance_residual <= WEIGHT_TOL,
            detail: format!("||(L_m - A_l) 1||_inf = {balance_residual:.3e}"),
        },
        Check {
            name: "laplacian spectrum",
            passed: min_laplacian_re > 0.0,
            detail: format!("min Re eig(L_m) = {min_laplacian_re:.6}"),
        },
        Check {
            name: "leader weights",
            passed: leader_ok,
            detail: format!("diag(A_l) = {diag:?} (need entries in [0, 1], at least one nonzero)"),
        },
        Check {
            name: "degree identity",
            passed: degree_dev <= WEIGHT_TOL,
            detail: format!("||D - I||_max = {degree_dev:.3e}"),
        },
        Check {
            name: "leader reachability",
            passed: unreachable.is_empty(),
            detail: if unreachable.is_empty() {
                "every agent has a directed path from the leader".into()
            } else {
                format!("unreachable agents {unreachable:?}")
            },
        },
    ];
    ValidationReport { checks, balance_residual, min_laplacian_re }
}

/// Distributed error `L_m y - A_l y_leader`.
pub fn error_signal(
    mats: &NetworkMatrices,
    y: &DVector<f64>,
    y_leader: &DVector<f64>,
) -> Result<DVector<f64>, NetworkError> {
    let m = mats.m();
    for v in [y, y_leader] {
        if v.len() != m {
            return Err(NetworkError::DimensionMismatch { expected: m, found: v.len() });
        }
    }
    Ok(&mats.l_m * y - &mats.a_ell * y_leader)
}
