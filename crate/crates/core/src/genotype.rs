//! Flat and hierarchical genotypes.
//!
//! A genotype is a stack of motif graphs: at each level `2..=L` every motif
//! is a DAG over `n` nodes whose edge `(j -> i)`, `j < i`, carries an index
//! into the operation pool of the level below (0 = `none`, i.e. no edge).
//! Level 1 is the fixed primitive set. Acyclicity holds by construction:
//! only edges with `j < i` are representable, and node order is the
//! topological order.
//!
//! Genotypes are immutable after construction and cheap to clone; search
//! workers share them freely. The canonical text document produced by
//! [`encode`] is the interchange format used by the CLI, checkpoints, and
//! memory-table persistence.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// Number of level-1 primitives (excluding `none`).
pub const PRIMITIVE_COUNT: usize = 6;

/// The six level-1 operations plus the distinguished `None` ("no edge").
///
/// The integer encoding is fixed and canonical for serialization:
/// `None=0, Identity=1, Conv1x1=2, DepthwiseConv3x3=3, SeparableConv3x3=4,
/// MaxPool3x3=5, AvgPool3x3=6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrimitiveOp {
    None,
    Identity,
    Conv1x1,
    DepthwiseConv3x3,
    SeparableConv3x3,
    MaxPool3x3,
    AvgPool3x3,
}

impl PrimitiveOp {
    /// The canonical integer index of this operation.
    pub fn index(self) -> usize {
        match self {
            PrimitiveOp::None => 0,
            PrimitiveOp::Identity => 1,
            PrimitiveOp::Conv1x1 => 2,
            PrimitiveOp::DepthwiseConv3x3 => 3,
            PrimitiveOp::SeparableConv3x3 => 4,
            PrimitiveOp::MaxPool3x3 => 5,
            PrimitiveOp::AvgPool3x3 => 6,
        }
    }

    /// Inverse of [`PrimitiveOp::index`].
    pub fn from_index(k: usize) -> Option<PrimitiveOp> {
        Some(match k {
            0 => PrimitiveOp::None,
            1 => PrimitiveOp::Identity,
            2 => PrimitiveOp::Conv1x1,
            3 => PrimitiveOp::DepthwiseConv3x3,
            4 => PrimitiveOp::SeparableConv3x3,
            5 => PrimitiveOp::MaxPool3x3,
            6 => PrimitiveOp::AvgPool3x3,
            _ => return None,
        })
    }

    /// Graph label used in DOT exports.
    pub fn dot_label(self) -> &'static str {
        match self {
            PrimitiveOp::None => "none",
            PrimitiveOp::Identity => "identity",
            PrimitiveOp::Conv1x1 => "1 × 1",
            PrimitiveOp::DepthwiseConv3x3 => "3 × 3 depthwise",
            PrimitiveOp::SeparableConv3x3 => "3 × 3 separable",
            PrimitiveOp::MaxPool3x3 => "max-pooling",
            PrimitiveOp::AvgPool3x3 => "avg-pooling",
        }
    }
}

impl fmt::Display for PrimitiveOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PrimitiveOp::None => "none",
            PrimitiveOp::Identity => "identity",
            PrimitiveOp::Conv1x1 => "conv1x1",
            PrimitiveOp::DepthwiseConv3x3 => "depthwise3x3",
            PrimitiveOp::SeparableConv3x3 => "separable3x3",
            PrimitiveOp::MaxPool3x3 => "maxpool3x3",
            PrimitiveOp::AvgPool3x3 => "avgpool3x3",
        };
        f.write_str(name)
    }
}

/// Unique genotype identifier.
///
/// Standalone constructors draw from a process-wide counter; a search run
/// reassigns ids from its own monotone counter in issue order so logs are
/// reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GenotypeId(pub u64);

impl fmt::Display for GenotypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Allocate a fresh id from the process-wide counter.
pub fn fresh_id() -> GenotypeId {
    GenotypeId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
}

/// A motif adjacency structure: edges `(j -> i)` with `1 <= j < i <= n`,
/// each labeled by an operation index `k >= 1` into the pool of the level
/// below. Absent entries mean `none` (`k = 0`); setting an edge to 0
/// removes it, so the two states are one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotifGraph {
    node_count: usize,
    edges: BTreeMap<(usize, usize), usize>, // (successor i, predecessor j) -> k
}

impl MotifGraph {
    /// Empty motif over `node_count` nodes. Node 1 is the source, node
    /// `node_count` the sink.
    pub fn new(node_count: usize) -> Self {
        MotifGraph { node_count, edges: BTreeMap::new() }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Operation index on edge `(j -> i)`; 0 when absent.
    pub fn op(&self, i: usize, j: usize) -> usize {
        self.edges.get(&(i, j)).copied().unwrap_or(0)
    }

    /// Set edge `(j -> i)` to operation `k`; `k = 0` removes the edge.
    ///
    /// Panics if the coordinates are not `1 <= j < i <= node_count`; the
    /// type cannot represent a cycle.
    pub fn set(&mut self, i: usize, j: usize, k: usize) {
        assert!(
            1 <= j && j < i && i <= self.node_count,
            "edge coordinates out of range: ({j} -> {i}) in a {}-node motif",
            self.node_count
        );
        if k == 0 {
            self.edges.remove(&(i, j));
        } else {
            self.edges.insert((i, j), k);
        }
    }

    /// Non-`none` edges as `(i, j, k)` in ascending `(i, j)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.edges.iter().map(|(&(i, j), &k)| (i, j, k))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Shape of a hierarchy: how many levels, how many motifs per level, how
/// many nodes each motif has, and the channel constant `C` used by the
/// convolution primitives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySpec {
    /// Number of levels `L >= 2`; level 1 is the primitive set.
    pub levels: usize,
    /// One entry per level `1..=L`; `motif_counts[0]` must be 6 and the
    /// last entry must be 1 (the cell).
    pub motif_counts: Vec<usize>,
    /// One inner list per level `2..=L`, holding the node count of each
    /// motif at that level.
    pub node_counts: Vec<Vec<usize>>,
    /// Channel constant `C` of the convolution primitives.
    pub channels: usize,
}

impl HierarchySpec {
    /// Two-level spec: a single motif over the primitives (the flat
    /// representation).
    pub fn flat(nodes: usize, channels: usize) -> Self {
        HierarchySpec {
            levels: 2,
            motif_counts: vec![PRIMITIVE_COUNT, 1],
            node_counts: vec![vec![nodes]],
            channels,
        }
    }

    /// Three-level spec with `m2` level-2 motifs of `n2` nodes each and a
    /// single `n3`-node cell.
    pub fn three_level(m2: usize, n2: usize, n3: usize, channels: usize) -> Self {
        HierarchySpec {
            levels: 3,
            motif_counts: vec![PRIMITIVE_COUNT, m2, 1],
            node_counts: vec![vec![n2; m2], vec![n3]],
            channels,
        }
    }

    /// Number of motifs at `level` (1-based).
    pub fn motif_count(&self, level: usize) -> usize {
        self.motif_counts[level - 1]
    }

    /// Node count of motif `m` (1-based) at `level >= 2`.
    pub fn node_count(&self, level: usize, m: usize) -> usize {
        self.node_counts[level - 2][m - 1]
    }

    /// Size of the operation pool available to edges at `level`, including
    /// index 0 (`none`): the motif count of the level below plus one.
    pub fn pool_size(&self, level: usize) -> usize {
        self.motif_count(level - 1) + 1
    }

    /// Internal-consistency violations of the spec itself.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.levels < 2 {
            v.push(Violation::BadSpec(format!("levels must be >= 2, got {}", self.levels)));
            return v;
        }
        if self.motif_counts.len() != self.levels {
            v.push(Violation::BadSpec(format!(
                "motif_counts has {} entries for {} levels",
                self.motif_counts.len(),
                self.levels
            )));
            return v;
        }
        if self.motif_counts[0] != PRIMITIVE_COUNT {
            v.push(Violation::BadSpec(format!(
                "level 1 must hold the {PRIMITIVE_COUNT} primitives, got {}",
                self.motif_counts[0]
            )));
        }
        if self.motif_counts[self.levels - 1] != 1 {
            v.push(Violation::BadSpec(format!(
                "the top level must hold exactly 1 motif, got {}",
                self.motif_counts[self.levels - 1]
            )));
        }
        if self.node_counts.len() != self.levels - 1 {
            v.push(Violation::BadSpec(format!(
                "node_counts has {} entries for levels 2..={}",
                self.node_counts.len(),
                self.levels
            )));
            return v;
        }
        for (li, counts) in self.node_counts.iter().enumerate() {
            let level = li + 2;
            if counts.len() != self.motif_counts[level - 1] {
                v.push(Violation::BadSpec(format!(
                    "level {level} declares {} node counts for {} motifs",
                    counts.len(),
                    self.motif_counts[level - 1]
                )));
                continue;
            }
            for (mi, &n) in counts.iter().enumerate() {
                if n < 2 {
                    v.push(Violation::BadSpec(format!(
                        "motif {} at level {level} has {n} nodes; minimum is 2",
                        mi + 1
                    )));
                }
            }
        }
        if self.channels == 0 {
            v.push(Violation::BadSpec("channels must be >= 1".to_string()));
        }
        v
    }
}

/// A complete architecture encoding: one [`MotifGraph`] per motif at every
/// level `2..=L` of a [`HierarchySpec`].
///
/// Equality is structural (spec and motifs); the id is excluded.
#[derive(Debug, Clone)]
pub struct Genotype {
    spec: HierarchySpec,
    motifs: Vec<Vec<MotifGraph>>, // [level - 2][motif - 1]
    id: GenotypeId,
}

impl PartialEq for Genotype {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.motifs == other.motifs
    }
}

impl Eq for Genotype {}

impl Genotype {
    /// Assemble a genotype from parts, drawing a fresh id.
    pub fn new(spec: HierarchySpec, motifs: Vec<Vec<MotifGraph>>) -> Self {
        Genotype { spec, motifs, id: fresh_id() }
    }

    pub fn id(&self) -> GenotypeId {
        self.id
    }

    /// Same structure under a caller-chosen id.
    pub fn with_id(mut self, id: GenotypeId) -> Self {
        self.id = id;
        self
    }

    pub fn spec(&self) -> &HierarchySpec {
        &self.spec
    }

    /// Motif `m` (1-based) at `level` (`2..=L`).
    pub fn motif(&self, level: usize, m: usize) -> &MotifGraph {
        &self.motifs[level - 2][m - 1]
    }

    pub(crate) fn motif_mut(&mut self, level: usize, m: usize) -> &mut MotifGraph {
        &mut self.motifs[level - 2][m - 1]
    }

    /// Flat genotypes have exactly two levels.
    pub fn is_flat(&self) -> bool {
        self.spec.levels == 2
    }

    /// Check every genotype invariant; violations are data, not failures.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = self.spec.violations();
        if !violations.is_empty() {
            return ValidationReport { violations };
        }
        if self.motifs.len() != self.spec.levels - 1 {
            violations.push(Violation::LevelCountMismatch {
                expected: self.spec.levels - 1,
                actual: self.motifs.len(),
            });
            return ValidationReport { violations };
        }
        for (li, level_motifs) in self.motifs.iter().enumerate() {
            let level = li + 2;
            if level_motifs.len() != self.spec.motif_count(level) {
                violations.push(Violation::MotifCountMismatch {
                    level,
                    expected: self.spec.motif_count(level),
                    actual: level_motifs.len(),
                });
                continue;
            }
            let pool = self.spec.pool_size(level);
            for (mi, graph) in level_motifs.iter().enumerate() {
                let m = mi + 1;
                let expected_nodes = self.spec.node_count(level, m);
                if graph.node_count() != expected_nodes {
                    violations.push(Violation::NodeCountMismatch {
                        level,
                        motif: m,
                        expected: expected_nodes,
                        actual: graph.node_count(),
                    });
                    continue;
                }
                for (i, j, k) in graph.edges() {
                    if k >= pool {
                        violations.push(Violation::OpOutOfRange {
                            level,
                            motif: m,
                            succ: i,
                            pred: j,
                            op: k,
                            pool,
                        });
                    }
                }
            }
        }
        ValidationReport { violations }
    }
}

/// Result of [`Genotype::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// A single invariant violation, with coordinates where applicable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    BadSpec(String),
    LevelCountMismatch { expected: usize, actual: usize },
    MotifCountMismatch { level: usize, expected: usize, actual: usize },
    NodeCountMismatch { level: usize, motif: usize, expected: usize, actual: usize },
    OpOutOfRange { level: usize, motif: usize, succ: usize, pred: usize, op: usize, pool: usize },
    EdgeOutOfRange { level: usize, motif: usize, succ: usize, pred: usize, nodes: usize },
    Acyclicity { level: usize, motif: usize, succ: usize, pred: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadSpec(msg) => write!(f, "bad spec: {msg}"),
            Violation::LevelCountMismatch { expected, actual } => {
                write!(f, "shape mismatch: {actual} motif levels, spec has {expected}")
            }
            Violation::MotifCountMismatch { level, expected, actual } => {
                write!(f, "shape mismatch at level {level}: {actual} motifs, spec has {expected}")
            }
            Violation::NodeCountMismatch { level, motif, expected, actual } => write!(
                f,
                "shape mismatch at level {level} motif {motif}: {actual} nodes, spec has {expected}"
            ),
            Violation::OpOutOfRange { level, motif, succ, pred, op, pool } => write!(
                f,
                "operation index out of range at level {level} motif {motif} edge ({pred} -> {succ}): \
                 k = {op}, pool size {pool}"
            ),
            Violation::EdgeOutOfRange { level, motif, succ, pred, nodes } => write!(
                f,
                "edge endpoint out of range at level {level} motif {motif}: ({pred} -> {succ}) \
                 in a {nodes}-node motif"
            ),
            Violation::Acyclicity { level, motif, succ, pred } => write!(
                f,
                "acyclicity violation at level {level} motif {motif}: edge ({pred} -> {succ}) \
                 requires predecessor < successor"
            ),
        }
    }
}

/// Errors from [`encode`] and [`decode`].
#[derive(Debug, Error)]
pub enum GenotypeError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid genotype: {0}")]
    Invalid(ValidationReport),
}

/// The identity-chain genotype: every motif at every level is a chain
/// `1 -> 2 -> ... -> n` of the identity-like operation of the level below
/// (the `Identity` primitive at level 2, motif index 1 above — which is
/// itself an identity chain by this construction).
pub fn trivial_genotype(spec: &HierarchySpec) -> Genotype {
    let motifs = (2..=spec.levels)
        .map(|level| {
            (1..=spec.motif_count(level))
                .map(|m| {
                    let n = spec.node_count(level, m);
                    let mut g = MotifGraph::new(n);
                    for p in 1..n {
                        g.set(p + 1, p, 1);
                    }
                    g
                })
                .collect()
        })
        .collect();
    Genotype::new(spec.clone(), motifs)
}

/// Uniformly random genotype: every edge cell of every motif draws an
/// operation index from the full pool of its level, including `none`.
/// Mostly useful for tests and brute-force sweeps.
pub fn random_genotype(spec: &HierarchySpec, rng: &mut impl rand::Rng) -> Genotype {
    let motifs = (2..=spec.levels)
        .map(|level| {
            let pool = spec.pool_size(level);
            (1..=spec.motif_count(level))
                .map(|m| {
                    let n = spec.node_count(level, m);
                    let mut g = MotifGraph::new(n);
                    for i in 2..=n {
                        for j in 1..i {
                            g.set(i, j, rng.gen_range(0..pool));
                        }
                    }
                    g
                })
                .collect()
        })
        .collect();
    Genotype::new(spec.clone(), motifs)
}

fn list(values: impl IntoIterator<Item = usize>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn encode_inner(g: &Genotype, with_id: bool) -> Result<String, GenotypeError> {
    let report = g.validate();
    if !report.is_ok() {
        return Err(GenotypeError::Invalid(report));
    }
    let spec = g.spec();
    let mut out = String::new();
    out.push_str("version: 1\n");
    if with_id {
        out.push_str(&format!("id: {}\n", g.id()));
    }
    out.push_str(&format!("levels: {}\n", spec.levels));
    out.push_str(&format!("channels: {}\n", spec.channels));
    out.push_str(&format!("motif_counts: {}\n", list(spec.motif_counts.iter().copied())));
    for level in 2..=spec.levels {
        out.push_str(&format!(
            "node_counts[{level}]: {}\n",
            list(spec.node_counts[level - 2].iter().copied())
        ));
    }
    for level in 2..=spec.levels {
        for m in 1..=spec.motif_count(level) {
            let triples: Vec<String> = g
                .motif(level, m)
                .edges()
                .map(|(i, j, k)| format!("[{i},{j},{k}]"))
                .collect();
            if triples.is_empty() {
                out.push_str(&format!("motif[{level}][{m}]:\n"));
            } else {
                out.push_str(&format!("motif[{level}][{m}]: {}\n", triples.join(" ")));
            }
        }
    }
    Ok(out)
}

/// Canonical text serialization. Injective on valid genotypes: edges are
/// listed in ascending `(level, motif, i, j)` order and `none` edges are
/// omitted. The id is not part of the canonical form.
pub fn encode(g: &Genotype) -> Result<String, GenotypeError> {
    encode_inner(g, false)
}

/// Like [`encode`] but with an `id:` line, for persistence that must keep
/// ids stable (checkpoints, the memory table).
pub fn encode_with_id(g: &Genotype) -> Result<String, GenotypeError> {
    encode_inner(g, true)
}

struct LineReader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        LineReader { lines, pos: 0 }
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.lines.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let l = self.peek();
        if l.is_some() {
            self.pos += 1;
        }
        l
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> GenotypeError {
    GenotypeError::Parse { line, msg: msg.into() }
}

/// Take the line `key: rest`, returning `rest`.
fn expect_field<'a>(r: &mut LineReader<'a>, key: &str) -> Result<(usize, &'a str), GenotypeError> {
    match r.next() {
        Some((n, l)) => match l.strip_prefix(key).and_then(|t| t.strip_prefix(':')) {
            Some(rest) => Ok((n, rest.trim())),
            None => Err(parse_err(n, format!("expected `{key}:`, found `{l}`"))),
        },
        None => Err(parse_err(0, format!("unexpected end of document, expected `{key}:`"))),
    }
}

fn parse_usize(line: usize, tok: &str, what: &str) -> Result<usize, GenotypeError> {
    tok.parse().map_err(|_| parse_err(line, format!("{what}: `{tok}` is not a number")))
}

fn parse_list(line: usize, rest: &str, what: &str) -> Result<Vec<usize>, GenotypeError> {
    rest.split_whitespace().map(|t| parse_usize(line, t, what)).collect()
}

/// Parse the canonical genotype document.
///
/// Inverse of [`encode`] on its image. A fresh id is assigned unless the
/// document carries an `id:` line. Malformed documents give
/// [`GenotypeError::Parse`]; well-formed documents that break a genotype
/// invariant give [`GenotypeError::Invalid`] with coordinates.
pub fn decode(text: &str) -> Result<Genotype, GenotypeError> {
    let mut r = LineReader::new(text);

    let (n, version) = expect_field(&mut r, "version")?;
    if version != "1" {
        return Err(parse_err(n, format!("unsupported version `{version}`")));
    }

    let id = match r.peek() {
        Some((n, l)) if l.starts_with("id:") => {
            r.next();
            let tok = l["id:".len()..].trim();
            Some(GenotypeId(
                tok.parse::<u64>().map_err(|_| parse_err(n, format!("bad id `{tok}`")))?,
            ))
        }
        _ => None,
    };

    let (n, levels_tok) = expect_field(&mut r, "levels")?;
    let levels = parse_usize(n, levels_tok, "levels")?;
    if levels < 2 {
        return Err(parse_err(n, format!("levels must be >= 2, got {levels}")));
    }
    let (n, channels_tok) = expect_field(&mut r, "channels")?;
    let channels = parse_usize(n, channels_tok, "channels")?;
    let (n, rest) = expect_field(&mut r, "motif_counts")?;
    let motif_counts = parse_list(n, rest, "motif_counts")?;
    if motif_counts.len() != levels {
        return Err(parse_err(
            n,
            format!("motif_counts has {} entries for {levels} levels", motif_counts.len()),
        ));
    }

    let mut node_counts = Vec::new();
    for level in 2..=levels {
        let (n, rest) = expect_field(&mut r, &format!("node_counts[{level}]"))?;
        let counts = parse_list(n, rest, "node_counts")?;
        if counts.len() != motif_counts[level - 1] {
            return Err(parse_err(
                n,
                format!(
                    "node_counts[{level}] has {} entries for {} motifs",
                    counts.len(),
                    motif_counts[level - 1]
                ),
            ));
        }
        node_counts.push(counts);
    }

    let spec = HierarchySpec { levels, motif_counts, node_counts, channels };

    // Invariant violations are collected rather than failing fast so the
    // report carries every coordinate, matching `validate`.
    let mut violations = spec.violations();
    let mut motifs: Vec<Vec<MotifGraph>> = Vec::new();
    for level in 2..=levels {
        let mut level_motifs = Vec::new();
        for m in 1..=spec.motif_count(level) {
            let (line, rest) = expect_field(&mut r, &format!("motif[{level}][{m}]"))?;
            let nodes = spec.node_count(level, m);
            let mut graph = MotifGraph::new(nodes);
            let mut seen = BTreeMap::new();
            for tok in rest.split_whitespace() {
                let inner = tok
                    .strip_prefix('[')
                    .and_then(|t| t.strip_suffix(']'))
                    .ok_or_else(|| parse_err(line, format!("bad edge triple `{tok}`")))?;
                let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(parse_err(line, format!("edge triple `{tok}` needs 3 fields")));
                }
                let i = parse_usize(line, parts[0], "edge successor")?;
                let j = parse_usize(line, parts[1], "edge predecessor")?;
                let k = parse_usize(line, parts[2], "edge operation")?;
                if seen.insert((i, j), ()).is_some() {
                    return Err(parse_err(line, format!("duplicate edge ({j} -> {i})")));
                }
                if j >= i {
                    violations.push(Violation::Acyclicity { level, motif: m, succ: i, pred: j });
                    continue;
                }
                if j < 1 || i > nodes {
                    violations.push(Violation::EdgeOutOfRange {
                        level,
                        motif: m,
                        succ: i,
                        pred: j,
                        nodes,
                    });
                    continue;
                }
                graph.set(i, j, k); // k = 0 normalizes to an absent edge
            }
            level_motifs.push(graph);
        }
        motifs.push(level_motifs);
    }

    if let Some((n, l)) = r.next() {
        return Err(parse_err(n, format!("unexpected trailing line `{l}`")));
    }

    let genotype = Genotype { spec, motifs, id: id.unwrap_or_else(fresh_id) };
    violations.extend(genotype.validate().violations);
    violations.dedup();
    if !violations.is_empty() {
        return Err(GenotypeError::Invalid(ValidationReport { violations }));
    }
    Ok(genotype)
}

// Checkpoints embed genotypes as their canonical documents (with id), so
// there is a single on-disk representation everywhere.
impl Serialize for Genotype {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let doc = encode_with_id(self).map_err(serde::ser::Error::custom)?;
        serializer.serialize_str(&doc)
    }
}

impl<'de> Deserialize<'de> for Genotype {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = String::deserialize(deserializer)?;
        decode(&doc).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec_42() -> HierarchySpec {
        HierarchySpec::three_level(6, 4, 5, 16)
    }

    #[test]
    fn trivial_genotype_validates() {
        assert!(trivial_genotype(&HierarchySpec::flat(3, 16)).validate().is_ok());
        assert!(trivial_genotype(&spec_42()).validate().is_ok());
    }

    #[test]
    fn trivial_flat_is_the_identity_chain() {
        let g = trivial_genotype(&HierarchySpec::flat(3, 16));
        let edges: Vec<_> = g.motif(2, 1).edges().collect();
        assert_eq!(edges, vec![(2, 1, 1), (3, 2, 1)]);
    }

    #[test]
    fn trivial_three_level_chains_through_motif_one() {
        let g = trivial_genotype(&spec_42());
        for m in 1..=6 {
            let edges: Vec<_> = g.motif(2, m).edges().collect();
            assert_eq!(edges, vec![(2, 1, 1), (3, 2, 1), (4, 3, 1)]);
        }
        let top: Vec<_> = g.motif(3, 1).edges().collect();
        assert_eq!(top, vec![(2, 1, 1), (3, 2, 1), (4, 3, 1), (5, 4, 1)]);
    }

    #[test]
    fn out_of_range_op_is_reported_with_coordinates() {
        let mut g = trivial_genotype(&HierarchySpec::flat(3, 16));
        g.motif_mut(2, 1).set(3, 1, 9);
        let report = g.validate();
        assert!(!report.is_ok());
        assert!(matches!(
            report.violations[0],
            Violation::OpOutOfRange { level: 2, motif: 1, succ: 3, pred: 1, op: 9, pool: 7 }
        ));
    }

    #[test]
    fn node_count_mismatch_is_a_shape_violation() {
        let spec = spec_42();
        let mut motifs: Vec<Vec<MotifGraph>> = (2..=3)
            .map(|level| {
                (1..=spec.motif_count(level))
                    .map(|m| MotifGraph::new(spec.node_count(level, m)))
                    .collect()
            })
            .collect();
        motifs[1][0] = MotifGraph::new(4); // spec says the cell has 5 nodes
        let g = Genotype::new(spec, motifs);
        let report = g.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NodeCountMismatch { level: 3, motif: 1, .. })));
    }

    #[test]
    fn encode_golden_trivial_flat() {
        let g = trivial_genotype(&HierarchySpec::flat(3, 16));
        let doc = encode(&g).unwrap();
        assert_eq!(
            doc,
            "version: 1\n\
             levels: 2\n\
             channels: 16\n\
             motif_counts: 6 1\n\
             node_counts[2]: 3\n\
             motif[2][1]: [2,1,1] [3,2,1]\n"
        );
    }

    #[test]
    fn decode_round_trips_structurally() {
        let g = trivial_genotype(&spec_42());
        let back = decode(&encode(&g).unwrap()).unwrap();
        assert_eq!(g, back);
        assert_eq!(encode(&back).unwrap(), encode(&g).unwrap());
    }

    #[test]
    fn decode_keeps_document_id() {
        let g = trivial_genotype(&spec_42()).with_id(GenotypeId(77));
        let back = decode(&encode_with_id(&g).unwrap()).unwrap();
        assert_eq!(back.id(), GenotypeId(77));
    }

    #[test]
    fn single_edge_difference_is_a_single_line_difference() {
        let base = trivial_genotype(&spec_42());
        let mut other = base.clone();
        other.motif_mut(2, 3).set(3, 1, 5);
        let a = encode(&base).unwrap();
        let b = encode(&other).unwrap();
        let diffs: Vec<_> =
            a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
        assert_eq!(a.lines().count(), b.lines().count());
        assert_eq!(diffs.len(), 1);
        assert!(diffs[0].0.starts_with("motif[2][3]:"));
    }

    #[test]
    fn duplicate_edge_is_a_parse_error() {
        let doc = "version: 1\nlevels: 2\nchannels: 16\nmotif_counts: 6 1\n\
                   node_counts[2]: 3\nmotif[2][1]: [2,1,1] [2,1,4]\n";
        match decode(doc) {
            Err(GenotypeError::Parse { msg, .. }) => assert!(msg.contains("duplicate edge")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn backward_edge_is_an_acyclicity_violation() {
        let doc = "version: 1\nlevels: 2\nchannels: 16\nmotif_counts: 6 1\n\
                   node_counts[2]: 3\nmotif[2][1]: [1,2,1]\n";
        match decode(doc) {
            Err(GenotypeError::Invalid(report)) => {
                assert!(matches!(report.violations[0], Violation::Acyclicity { .. }))
            }
            other => panic!("expected invalid genotype, got {other:?}"),
        }
    }

    #[test]
    fn explicit_none_edges_normalize_away() {
        let doc = "version: 1\nlevels: 2\nchannels: 16\nmotif_counts: 6 1\n\
                   node_counts[2]: 3\nmotif[2][1]: [2,1,0] [3,2,1]\n";
        let g = decode(doc).unwrap();
        assert_eq!(g.motif(2, 1).op(2, 1), 0);
        assert_eq!(g.motif(2, 1).edge_count(), 1);
    }

    proptest! {
        #[test]
        fn prop_round_trip(seed in any::<u64>(), levels in 2usize..4, nodes in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = if levels == 2 {
                HierarchySpec::flat(nodes, 8)
            } else {
                HierarchySpec::three_level(3, nodes, nodes, 8)
            };
            let g = random_genotype(&spec, &mut rng);
            prop_assert!(g.validate().is_ok());
            let doc = encode(&g).unwrap();
            let back = decode(&doc).unwrap();
            prop_assert_eq!(&g, &back);
            prop_assert_eq!(encode(&back).unwrap(), doc);
        }
    }
}
