//! Power network model: case parsing, incidence and susceptance data, and
//! the DC Laplacian / connectivity matrices derived from them.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// 1-based bus identifier, matching the usual test-case numbering.
pub type BusId = usize;

/// Validation failures while building a [`PowerNetwork`].
#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("bus ids must be the set 1..={expected}, got unexpected id {got}")]
    BadBusIds { expected: usize, got: usize },
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("network must have at least one bus")]
    Empty,
    #[error("branch {index} references bus {bus} outside 1..={bus_count}")]
    BusOutOfRange {
        index: usize,
        bus: BusId,
        bus_count: usize,
    },
    #[error("branch {index} is a self-loop at bus {bus}")]
    SelfLoop { index: usize, bus: BusId },
    #[error("branches {first} and {second} join the same bus pair ({i}, {j})")]
    DuplicateBranch {
        first: usize,
        second: usize,
        i: BusId,
        j: BusId,
    },
    #[error("branch {index} has non-positive reactance {reactance}")]
    NonPositiveReactance { index: usize, reactance: f64 },
    #[error("network is not connected: bus {0} is unreachable from bus 1")]
    Disconnected(BusId),
}

/// Case-file problems: I/O, malformed syntax, or a network that fails validation.
#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read case file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] NetworkError),
}

/// A transmission branch with its series reactance in per-unit.
///
/// Endpoints are normalized so `from > to`; `index` is the 1-based branch
/// number in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub index: usize,
    pub from: BusId,
    pub to: BusId,
    pub reactance: f64,
}

/// An undirected, connected power network under the lossless DC model.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNetwork {
    bus_count: usize,
    branches: Vec<Branch>,
}

impl PowerNetwork {
    /// Builds a network from a bus count and `(from, to, reactance)` triples,
    /// enforcing every structural invariant (no self-loops or duplicate
    /// pairs, strictly positive reactances, connected graph).
    pub fn new(
        bus_count: usize,
        branches: impl IntoIterator<Item = (BusId, BusId, f64)>,
    ) -> Result<Self, NetworkError> {
        if bus_count == 0 {
            return Err(NetworkError::Empty);
        }
        let mut out = Vec::new();
        for (pos, (a, b, x)) in branches.into_iter().enumerate() {
            let index = pos + 1;
            for bus in [a, b] {
                if bus == 0 || bus > bus_count {
                    return Err(NetworkError::BusOutOfRange {
                        index,
                        bus,
                        bus_count,
                    });
                }
            }
            if a == b {
                return Err(NetworkError::SelfLoop { index, bus: a });
            }
            if !x.is_finite() || x <= 0.0 {
                return Err(NetworkError::NonPositiveReactance {
                    index,
                    reactance: x,
                });
            }
            // orientation convention: larger bus index first
            let (from, to) = (a.max(b), a.min(b));
            if let Some(prev) = out
                .iter()
                .find(|p: &&Branch| p.from == from && p.to == to)
            {
                return Err(NetworkError::DuplicateBranch {
                    first: prev.index,
                    second: index,
                    i: from,
                    j: to,
                });
            }
            out.push(Branch {
                index,
                from,
                to,
                reactance: x,
            });
        }
        let net = PowerNetwork {
            bus_count,
            branches: out,
        };
        if let Some(unreached) = net.first_unreachable() {
            return Err(NetworkError::Disconnected(unreached));
        }
        Ok(net)
    }

    fn first_unreachable(&self) -> Option<BusId> {
        let mut seen = vec![false; self.bus_count + 1];
        let mut stack = vec![1];
        seen[1] = true;
        while let Some(b) = stack.pop() {
            for br in &self.branches {
                let other = if br.from == b {
                    br.to
                } else if br.to == b {
                    br.from
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        (2..=self.bus_count).find(|&b| !seen[b])
    }

    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// Buses joined to `bus` by a branch, ascending.
    pub fn neighbors(&self, bus: BusId) -> Vec<BusId> {
        let mut out: Vec<BusId> = self
            .branches
            .iter()
            .filter_map(|br| {
                if br.from == bus {
                    Some(br.to)
                } else if br.to == bus {
                    Some(br.from)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// 1-based indices of the branches incident to `bus`, ascending.
    pub fn incident_branches(&self, bus: BusId) -> Vec<usize> {
        self.branches
            .iter()
            .filter(|br| br.from == bus || br.to == bus)
            .map(|br| br.index)
            .collect()
    }

    /// K x B branch-bus incidence matrix: +1 at the larger endpoint,
    /// -1 at the smaller one.
    pub fn incidence(&self) -> IncidenceMatrix {
        let k = self.branches.len();
        let mut m = DMatrix::zeros(k, self.bus_count);
        for br in &self.branches {
            m[(br.index - 1, br.from - 1)] = 1.0;
            m[(br.index - 1, br.to - 1)] = -1.0;
        }
        IncidenceMatrix(m)
    }

    /// Nominal branch susceptances 1/x under the lossless DC approximation.
    pub fn nominal_susceptance(&self) -> SusceptanceVector {
        SusceptanceVector(DVector::from_iterator(
            self.branches.len(),
            self.branches.iter().map(|br| 1.0 / br.reactance),
        ))
    }

    /// Weighted graph Laplacian D' diag(s) D, the DC power-flow Jacobian
    /// with respect to the bus angles.
    ///
    /// Panics if `s` does not have one entry per branch.
    pub fn dc_laplacian(&self, s: &SusceptanceVector) -> DMatrix<f64> {
        assert_eq!(
            s.len(),
            self.branches.len(),
            "susceptance vector length must equal the branch count"
        );
        let b = self.bus_count;
        let mut l = DMatrix::zeros(b, b);
        for br in &self.branches {
            let w = s.0[br.index - 1];
            let (i, j) = (br.from - 1, br.to - 1);
            l[(i, i)] += w;
            l[(j, j)] += w;
            l[(i, j)] -= w;
            l[(j, i)] -= w;
        }
        l
    }

    /// Binary connectivity matrix with a unit diagonal: entry (i, j) is 1
    /// exactly when i = j or a branch joins buses i and j.
    pub fn topological_connectivity(&self) -> ConnectivityMatrix {
        let mut c = ConnectivityMatrix::identity(self.bus_count);
        for br in &self.branches {
            c.set_pair(br.from, br.to);
        }
        c
    }

    /// Renders the network in the case-file syntax accepted by
    /// [`PowerNetwork::parse_str`].
    pub fn to_case_string(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let ids: Vec<String> = (1..=self.bus_count).map(|b| b.to_string()).collect();
        writeln!(out, "buses: [{}]", ids.join(", ")).unwrap();
        writeln!(out, "branches:").unwrap();
        for br in &self.branches {
            writeln!(
                out,
                "  - {{from: {}, to: {}, x: {}}}",
                br.from, br.to, br.reactance
            )
            .unwrap();
        }
        out
    }

    /// Parses the structured-text case format. See the crate documentation
    /// for the schema; unknown branch fields (r, b, ...) are ignored.
    pub fn parse_str(text: &str) -> Result<Self, CaseError> {
        parse_case_text(text)
    }

    /// Reads and parses a case file from disk.
    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, CaseError> {
        let text = std::fs::read_to_string(path)?;
        parse_case_text(&text)
    }
}

/// The standard IEEE 14-bus, 20-branch test network shipped with the crate.
pub fn case14() -> PowerNetwork {
    PowerNetwork::parse_str(CASE14_TEXT).expect("embedded case14 fixture is valid")
}

/// Raw text of the embedded 14-bus fixture.
pub const CASE14_TEXT: &str = include_str!("../data/case14");

/// K x B incidence matrix with entries in {-1, 0, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix(DMatrix<f64>);

impl IncidenceMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn branch_count(&self) -> usize {
        self.0.nrows()
    }

    pub fn bus_count(&self) -> usize {
        self.0.ncols()
    }
}

/// Per-branch susceptances; the detector treats these as a free parameter
/// vector, so entries are not sign-constrained here.
#[derive(Debug, Clone, PartialEq)]
pub struct SusceptanceVector(pub(crate) DVector<f64>);

impl SusceptanceVector {
    pub fn from_vec(values: Vec<f64>) -> Self {
        SusceptanceVector(DVector::from_vec(values))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    /// Entry for the k-th branch (1-based).
    pub fn branch(&self, k: usize) -> f64 {
        self.0[k - 1]
    }

    /// Every entry scaled by `1 + shift`.
    pub fn scaled(&self, shift: f64) -> Self {
        SusceptanceVector(&self.0 * (1.0 + shift))
    }
}

impl From<DVector<f64>> for SusceptanceVector {
    fn from(v: DVector<f64>) -> Self {
        SusceptanceVector(v)
    }
}

/// Symmetric binary bus-coverage matrix used by the placement program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivityMatrix {
    size: usize,
    entries: Vec<bool>,
}

impl ConnectivityMatrix {
    pub(crate) fn identity(size: usize) -> Self {
        let mut c = ConnectivityMatrix {
            size,
            entries: vec![false; size * size],
        };
        for i in 0..size {
            c.entries[i * size + i] = true;
        }
        c
    }

    pub(crate) fn set_pair(&mut self, i: BusId, j: BusId) {
        self.entries[(i - 1) * self.size + (j - 1)] = true;
        self.entries[(j - 1) * self.size + (i - 1)] = true;
    }

    /// Builds a matrix with unit diagonal and the given undirected bus pairs.
    pub fn from_edges(size: usize, edges: &[(BusId, BusId)]) -> Self {
        let mut c = ConnectivityMatrix::identity(size);
        for &(i, j) in edges {
            c.set_pair(i, j);
        }
        c
    }

    /// Validates and adopts a dense 0/1 matrix. The diagonal is taken as
    /// given, so infeasible (zero-row) covering instances can be expressed.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self, ConnectivityError> {
        if m.nrows() != m.ncols() {
            return Err(ConnectivityError::NotSquare(m.nrows(), m.ncols()));
        }
        let size = m.nrows();
        let mut entries = vec![false; size * size];
        for i in 0..size {
            for j in 0..size {
                let v = m[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(ConnectivityError::NotBinary { i, j, value: v });
                }
                if m[(j, i)] != v {
                    return Err(ConnectivityError::NotSymmetric(i, j));
                }
                entries[i * size + j] = v == 1.0;
            }
        }
        Ok(ConnectivityMatrix { size, entries })
    }

    /// Number of buses on each axis.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Entry for the 1-based bus pair (i, j).
    pub fn covers(&self, i: BusId, j: BusId) -> bool {
        self.entries[(i - 1) * self.size + (j - 1)]
    }

    /// 1-based ids of the buses whose PMUs would cover `bus`.
    pub fn coverers_of(&self, bus: BusId) -> impl Iterator<Item = BusId> + '_ {
        let row = bus - 1;
        (0..self.size)
            .filter(move |&j| self.entries[row * self.size + j])
            .map(|j| j + 1)
    }

    /// Count of off-diagonal 1-pairs, i.e. edges of the coverage graph.
    pub fn edge_count(&self) -> usize {
        let mut n = 0;
        for i in 0..self.size {
            for j in (i + 1)..self.size {
                if self.entries[i * self.size + j] {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |i, j| {
            if self.entries[i * self.size + j] {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Rejected inputs to [`ConnectivityMatrix::from_dense`].
#[derive(Debug, Error)]
pub enum ConnectivityError {
    #[error("connectivity matrix must be square, got {0} x {1}")]
    NotSquare(usize, usize),
    #[error("entry ({i}, {j}) = {value} is not 0 or 1")]
    NotBinary { i: usize, j: usize, value: f64 },
    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
}

// ---------------------------------------------------------------------------
// case-file parser

fn parse_err(line: usize, message: impl Into<String>) -> CaseError {
    CaseError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_case_text(text: &str) -> Result<PowerNetwork, CaseError> {
    let mut buses: Option<(usize, Vec<BusId>)> = None;
    let mut branches: Option<Vec<(BusId, BusId, f64)>> = None;

    // strip comments, keep 1-based line numbers
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, raw)| {
            let body = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            (i + 1, body.trim_end())
        })
        .collect();

    let mut idx = 0;
    while idx < lines.len() {
        let (lno, line) = lines[idx];
        let trimmed = line.trim();
        if trimmed.is_empty() {
            idx += 1;
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("buses:") {
            if buses.is_some() {
                return Err(parse_err(lno, "duplicate `buses` section"));
            }
            buses = Some((lno, parse_bus_list(lno, rest.trim())?));
            idx += 1;
        } else if let Some(rest) = trimmed.strip_prefix("branches:") {
            if branches.is_some() {
                return Err(parse_err(lno, "duplicate `branches` section"));
            }
            let rest = rest.trim();
            let mut items = Vec::new();
            if rest.is_empty() {
                // block list: `- {from: .., to: .., x: ..}` per line
                idx += 1;
                while idx < lines.len() {
                    let (ilno, iline) = lines[idx];
                    let t = iline.trim();
                    if t.is_empty() {
                        idx += 1;
                        continue;
                    }
                    let Some(body) = t.strip_prefix('-') else {
                        break;
                    };
                    items.push(parse_branch_map(ilno, body.trim())?);
                    idx += 1;
                }
            } else if rest.starts_with('[') {
                // inline list on one line
                let inner = rest
                    .strip_prefix('[')
                    .and_then(|r| r.strip_suffix(']'))
                    .ok_or_else(|| {
                        parse_err(lno, "inline branch list must close with `]` on the same line")
                    })?;
                for chunk in split_inline_maps(inner) {
                    items.push(parse_branch_map(lno, chunk.trim())?);
                }
                idx += 1;
            } else {
                return Err(parse_err(
                    lno,
                    "expected `[` or an indented `- {from, to, x}` list after `branches:`",
                ));
            }
            branches = Some(items);
        } else {
            return Err(parse_err(
                lno,
                format!("unexpected content `{trimmed}`; expected `buses:` or `branches:`"),
            ));
        }
    }

    let (bline, ids) = buses.ok_or_else(|| parse_err(0, "missing `buses` section"))?;
    let branch_list = branches.ok_or_else(|| parse_err(0, "missing `branches` section"))?;

    // ids must form exactly 1..=B
    let count = ids.len();
    let mut seen = vec![false; count + 1];
    for id in &ids {
        if *id == 0 || *id > count {
            return Err(parse_err(
                bline,
                format!("bus ids must be the set 1..={count}, got {id}"),
            ));
        }
        if seen[*id] {
            return Err(CaseError::Invalid(NetworkError::DuplicateBus(*id)));
        }
        seen[*id] = true;
    }

    Ok(PowerNetwork::new(count, branch_list)?)
}

fn parse_bus_list(lno: usize, rest: &str) -> Result<Vec<BusId>, CaseError> {
    let inner = rest
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| parse_err(lno, "expected `buses: [id, id, ...]` on one line"))?;
    let mut ids = Vec::new();
    for tok in inner.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        let id = tok
            .parse::<BusId>()
            .map_err(|_| parse_err(lno, format!("bus id `{tok}` is not a positive integer")))?;
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(parse_err(lno, "bus list is empty"));
    }
    Ok(ids)
}

/// Splits `{..}, {..}, ..` into the brace-delimited chunks.
fn split_inline_maps(inner: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = None;
    for (pos, ch) in inner.char_indices() {
        match ch {
            '{' => {
                if depth == 0 {
                    start = Some(pos);
                }
                depth += 1;
            }
            '}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    if let Some(s) = start.take() {
                        out.push(&inner[s..=pos]);
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn parse_branch_map(lno: usize, body: &str) -> Result<(BusId, BusId, f64), CaseError> {
    let inner = body
        .strip_prefix('{')
        .and_then(|r| r.strip_suffix('}'))
        .ok_or_else(|| parse_err(lno, "branch entry must look like `{from: i, to: j, x: v}`"))?;
    let mut from = None;
    let mut to = None;
    let mut x = None;
    for field in inner.split(',') {
        let field = field.trim();
        if field.is_empty() {
            continue;
        }
        let (key, value) = field
            .split_once(':')
            .ok_or_else(|| parse_err(lno, format!("branch field `{field}` is missing `:`")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "from" => {
                from = Some(value.parse::<BusId>().map_err(|_| {
                    parse_err(lno, format!("field `from`: `{value}` is not a bus id"))
                })?)
            }
            "to" => {
                to = Some(value.parse::<BusId>().map_err(|_| {
                    parse_err(lno, format!("field `to`: `{value}` is not a bus id"))
                })?)
            }
            "x" => {
                x = Some(value.parse::<f64>().map_err(|_| {
                    parse_err(lno, format!("field `x`: `{value}` is not a number"))
                })?)
            }
            // extra data (resistance, charging, names) is allowed and unused
            _ => {}
        }
    }
    let from = from.ok_or_else(|| parse_err(lno, "branch entry is missing field `from`"))?;
    let to = to.ok_or_else(|| parse_err(lno, "branch entry is missing field `to`"))?;
    let x = x.ok_or_else(|| parse_err(lno, "branch entry is missing field `x`"))?;
    Ok((from, to, x))
}
