//! Recursive expansion of genotypes into flat primitive DAGs.
//!
//! Each edge of a level-`ℓ` motif labeled with motif `k` of the level below
//! is inlined as a fresh copy of that motif's own expansion: the copy's
//! source is the edge's predecessor node and its output feeds the edge's
//! successor. Multi-input nodes merge by depthwise concatenation. After
//! every inlined level-2 motif a trailing 1×1 convolution is appended whose
//! output width equals the channel count at the motif's input node; the
//! top-level motif itself gets no trailing convolution.
//!
//! Nodes that are unreachable from the source or cannot reach the sink are
//! pruned; if no source→sink path survives the genotype is degenerate.
//!
//! Node identity is positional: the top-level cell's nodes are named
//! `"1".."n"`, and inlining the motif on edge `(j -> i)` labeled `k` under
//! context `ctx` names the copy's interior nodes `ctx/j-i mk/p` (written
//! `"{ctx}/{j}-{i}m{k}/{p}"`), with the copy's source aliased to node `j`.
//! These names are recorded as provenance and define the comparison key for
//! independent expansion oracles.

use crate::genotype::{Genotype, PrimitiveOp};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Dense rank-4 shape `(batch, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        TensorShape { batch, channels, height, width }
    }

    /// Total element count.
    pub fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A feature-map node of the flattened graph. `channels` is the node's
/// width under the genotype's nominal configuration (cell input = spec
/// channels); it is both the merge width of the incoming edges and the
/// width seen by outgoing edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatNode {
    pub channels: usize,
    /// Expansion path that produced this node (see module docs).
    pub provenance: String,
}

/// A primitive operation between two nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatEdge {
    pub src: usize,
    pub dst: usize,
    pub op: PrimitiveOp,
    /// For trailing motif-output convolutions: the node whose channel count
    /// this 1×1 convolution reproduces (the inlined motif's input node).
    /// `None` for ordinary pool-primitive edges.
    pub motif_input: Option<usize>,
    pub provenance: String,
}

/// Fully expanded single-source single-sink DAG of primitives.
///
/// Nodes are stored in topological order (`source` is index 0, `sink` the
/// last index) and every edge satisfies `src < dst`. Edges are sorted by
/// `(dst, src)`; the incoming-edge order of a node is its concatenation
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatArchitecture {
    pub nodes: Vec<FlatNode>,
    pub edges: Vec<FlatEdge>,
    pub source: usize,
    pub sink: usize,
}

impl FlatArchitecture {
    /// Incoming edge indices per node, in concatenation order.
    pub fn incoming(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.nodes.len()];
        for (e, edge) in self.edges.iter().enumerate() {
            inc[edge.dst].push(e);
        }
        inc
    }

    /// Length (in edges) of the longest source→sink path.
    pub fn depth(&self) -> usize {
        let mut dist = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            dist[e.dst] = dist[e.dst].max(dist[e.src] + 1);
        }
        dist[self.sink]
    }
}

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("degenerate architecture: no source-to-sink path after pruning")]
    DegenerateArchitecture,
}

struct Builder {
    names: Vec<String>,
    edges: Vec<FlatEdge>,
}

impl Builder {
    fn node(&mut self, name: String) -> usize {
        self.names.push(name);
        self.names.len() - 1
    }

    /// Inline motif `m` of `level` between existing nodes `src` and `dst`.
    fn expand(&mut self, g: &Genotype, level: usize, m: usize, src: usize, dst: usize, ctx: &str) {
        let motif = g.motif(level, m);
        let n = motif.node_count();
        let mut idx = vec![usize::MAX; n + 1];
        idx[1] = src;
        for p in 2..n {
            idx[p] = self.node(format!("{ctx}/{p}"));
        }
        // A level-2 motif gets a fresh sink followed by the trailing 1×1
        // convolution into `dst`; deeper motifs splice their sink onto `dst`.
        idx[n] = if level == 2 { self.node(format!("{ctx}/{n}")) } else { dst };
        for (i, j, k) in motif.edges() {
            if level == 2 {
                self.edges.push(FlatEdge {
                    src: idx[j],
                    dst: idx[i],
                    op: PrimitiveOp::from_index(k).expect("validated op index"),
                    motif_input: None,
                    provenance: format!("{ctx}/{j}-{i}"),
                });
            } else {
                self.expand(g, level - 1, k, idx[j], idx[i], &format!("{ctx}/{j}-{i}m{k}"));
            }
        }
        if level == 2 {
            self.edges.push(FlatEdge {
                src: idx[n],
                dst,
                op: PrimitiveOp::Conv1x1,
                motif_input: Some(src),
                provenance: format!("{ctx}/out"),
            });
        }
    }
}

/// Expand a genotype into its flat primitive graph.
///
/// The genotype must validate; see the module docs for the expansion and
/// pruning rules.
pub fn flatten(g: &Genotype) -> Result<FlatArchitecture, AssemblyError> {
    assert!(g.validate().is_ok(), "flatten requires a valid genotype");
    let spec = g.spec();
    let top_level = spec.levels;
    let cell = g.motif(top_level, 1);
    let n = cell.node_count();

    let mut b = Builder { names: Vec::new(), edges: Vec::new() };
    let top: Vec<usize> = (1..=n).map(|i| b.node(i.to_string())).collect();
    for (i, j, k) in cell.edges() {
        if top_level == 2 {
            b.edges.push(FlatEdge {
                src: top[j - 1],
                dst: top[i - 1],
                op: PrimitiveOp::from_index(k).expect("validated op index"),
                motif_input: None,
                provenance: format!("{j}-{i}"),
            });
        } else {
            b.expand(g, top_level - 1, k, top[j - 1], top[i - 1], &format!("{j}-{i}m{k}"));
        }
    }

    prune_and_order(b.names, b.edges, top[0], top[n - 1], spec.channels)
}

fn prune_and_order(
    names: Vec<String>,
    edges: Vec<FlatEdge>,
    source: usize,
    sink: usize,
    nominal_channels: usize,
) -> Result<FlatArchitecture, AssemblyError> {
    let n = names.len();
    let mut fwd = vec![Vec::new(); n];
    let mut bwd = vec![Vec::new(); n];
    for e in &edges {
        fwd[e.src].push(e.dst);
        bwd[e.dst].push(e.src);
    }

    let reach = |adj: &[Vec<usize>], start: usize| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    };
    let from_source = reach(&fwd, source);
    let to_sink = reach(&bwd, sink);
    let keep: Vec<bool> = (0..n).map(|v| from_source[v] && to_sink[v]).collect();
    if !keep[source] || !keep[sink] || !from_source[sink] {
        return Err(AssemblyError::DegenerateArchitecture);
    }

    // Kahn's algorithm over kept nodes, breaking ties by original index, is
    // the canonical node order.
    let mut indeg = vec![0usize; n];
    for e in &edges {
        if keep[e.src] && keep[e.dst] {
            indeg[e.dst] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&v| keep[v] && indeg[v] == 0).collect();
    let mut order = Vec::new();
    let mut new_index = vec![usize::MAX; n];
    while let Some(&v) = ready.iter().next() {
        ready.remove(&v);
        new_index[v] = order.len();
        order.push(v);
        for &w in &fwd[v] {
            if keep[w] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.insert(w);
                }
            }
        }
    }

    let mut kept_edges: Vec<FlatEdge> = edges
        .into_iter()
        .filter(|e| keep[e.src] && keep[e.dst])
        .map(|e| FlatEdge {
            src: new_index[e.src],
            dst: new_index[e.dst],
            motif_input: e.motif_input.map(|m| new_index[m]),
            ..e
        })
        .collect();
    kept_edges.sort_by_key(|e| (e.dst, e.src));

    let nodes: Vec<FlatNode> = order
        .iter()
        .map(|&v| FlatNode { channels: 0, provenance: names[v].clone() })
        .collect();

    let mut arch = FlatArchitecture {
        nodes,
        edges: kept_edges,
        source: new_index[source],
        sink: new_index[sink],
    };
    debug_assert_eq!(arch.source, 0);
    debug_assert_eq!(arch.sink, arch.nodes.len() - 1);
    debug_assert!(arch.edges.iter().all(|e| e.src < e.dst));

    let plan = channel_plan(&arch, nominal_channels, nominal_channels);
    for (node, ch) in arch.nodes.iter_mut().zip(plan.node_channels) {
        node.channels = ch;
    }
    Ok(arch)
}

/// Channel widths of every node and every edge output for a given cell
/// input width and channel constant `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPlan {
    pub node_channels: Vec<usize>,
    pub edge_channels: Vec<usize>,
}

/// Propagate channels: `Conv1x1` and `SeparableConv3x3` output `c` channels
/// (except trailing motif-output convolutions, which reproduce the motif
/// input's width); everything else preserves its input width; a node's width
/// is the sum of its incoming edge outputs (depthwise concatenation).
pub fn channel_plan(a: &FlatArchitecture, input_channels: usize, c: usize) -> ChannelPlan {
    let mut node_channels = vec![0usize; a.nodes.len()];
    let mut edge_channels = vec![0usize; a.edges.len()];
    node_channels[a.source] = input_channels;
    // Edges are sorted by destination, so walking them in order visits each
    // node's inputs only after every predecessor width is known.
    for (ei, e) in a.edges.iter().enumerate() {
        let out = match e.op {
            PrimitiveOp::Conv1x1 => match e.motif_input {
                Some(m) => node_channels[m],
                None => c,
            },
            PrimitiveOp::SeparableConv3x3 => c,
            _ => node_channels[e.src],
        };
        edge_channels[ei] = out;
        node_channels[e.dst] += out;
    }
    ChannelPlan { node_channels, edge_channels }
}

/// Infer every node's tensor shape. All primitives are stride-1 and padded,
/// so height and width are preserved everywhere; only channels vary.
pub fn infer_shapes(a: &FlatArchitecture, input: TensorShape, c: usize) -> Vec<TensorShape> {
    let plan = channel_plan(a, input.channels, c);
    plan.node_channels
        .into_iter()
        .map(|ch| TensorShape::new(input.batch, ch, input.height, input.width))
        .collect()
}

/// Learnable parameters of a single edge given its input and output widths.
///
/// Convolutions are bias-free; each contributes a per-channel scale and
/// shift (`2·c_out`) for its normalization layer. Pooling and identity have
/// no parameters.
pub fn edge_parameters(op: PrimitiveOp, c_in: usize, c_out: usize) -> u64 {
    let (c_in, c_out) = (c_in as u64, c_out as u64);
    match op {
        PrimitiveOp::Conv1x1 => c_in * c_out + 2 * c_out,
        PrimitiveOp::SeparableConv3x3 => 9 * c_in + c_in * c_out + 2 * c_out,
        PrimitiveOp::DepthwiseConv3x3 => 9 * c_in + 2 * c_in,
        _ => 0,
    }
}

/// Total learnable parameters of the flat graph under the given input width
/// and channel constant.
pub fn count_parameters(a: &FlatArchitecture, input_channels: usize, c: usize) -> u64 {
    let plan = channel_plan(a, input_channels, c);
    a.edges
        .iter()
        .enumerate()
        .map(|(ei, e)| edge_parameters(e.op, plan.node_channels[e.src], plan.edge_channels[ei]))
        .sum()
}

/// One named DOT digraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DotGraph {
    pub name: String,
    pub text: String,
}

fn dot_graph(name: &str, nodes: usize, edges: impl Iterator<Item = (usize, usize, String)>) -> String {
    let mut out = String::new();
    out.push_str(&format!("digraph \"{name}\" {{\n"));
    out.push_str("  rankdir=LR;\n  node [shape=circle];\n");
    for v in 1..=nodes {
        out.push_str(&format!("  {v};\n"));
    }
    for (j, i, label) in edges {
        out.push_str(&format!("  {j} -> {i} [label=\"{label}\"];\n"));
    }
    out.push_str("}\n");
    out
}

/// Render every motif of a genotype as a DOT digraph: one graph per motif at
/// levels `2..L` (named `Motif m`, qualified with the level when the
/// hierarchy has more than one intermediate level) plus one for the
/// top-level cell. Level-2 edges carry the primitive vocabulary
/// (`identity`, `1 × 1`, `3 × 3 depthwise`, `3 × 3 separable`,
/// `max-pooling`, `avg-pooling`); higher-level edges are labeled `Motif k`.
/// Output is deterministic for a given input.
pub fn genotype_dot(g: &Genotype) -> Vec<DotGraph> {
    let spec = g.spec();
    let mut graphs = Vec::new();
    for level in 2..=spec.levels {
        for m in 1..=spec.motif_count(level) {
            let name = if level == spec.levels {
                "Cell".to_string()
            } else if spec.levels == 3 {
                format!("Motif {m}")
            } else {
                format!("Level {level} Motif {m}")
            };
            let motif = g.motif(level, m);
            let edges = motif.edges().map(|(i, j, k)| {
                let label = if level == 2 {
                    PrimitiveOp::from_index(k).expect("validated op index").dot_label().to_string()
                } else {
                    format!("Motif {k}")
                };
                (j, i, label)
            });
            let text = dot_graph(&name, motif.node_count(), edges);
            graphs.push(DotGraph { name, text });
        }
    }
    graphs
}

/// Render a flat architecture as a single DOT digraph, nodes annotated with
/// their nominal channel widths.
pub fn architecture_dot(a: &FlatArchitecture) -> String {
    let mut out = String::new();
    out.push_str("digraph \"Architecture\" {\n  rankdir=LR;\n  node [shape=circle];\n");
    for (v, node) in a.nodes.iter().enumerate() {
        out.push_str(&format!("  {} [label=\"{} ({}ch)\"];\n", v + 1, v + 1, node.channels));
    }
    for e in &a.edges {
        out.push_str(&format!(
            "  {} -> {} [label=\"{}\"];\n",
            e.src + 1,
            e.dst + 1,
            e.op.dot_label()
        ));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genotype::{
        random_genotype, trivial_genotype, HierarchySpec, MotifGraph, Genotype,
    };
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec_42() -> HierarchySpec {
        HierarchySpec::three_level(6, 4, 5, 16)
    }

    #[test]
    fn trivial_flat_expands_to_itself() {
        let a = flatten(&trivial_genotype(&HierarchySpec::flat(3, 16))).unwrap();
        assert_eq!(a.nodes.len(), 3);
        assert_eq!(a.edges.len(), 2);
        assert!(a.edges.iter().all(|e| e.op == PrimitiveOp::Identity));
        assert_eq!(a.depth(), 2);
    }

    #[test]
    fn trivial_three_level_interposes_four_convolutions() {
        let a = flatten(&trivial_genotype(&spec_42())).unwrap();
        let identities = a.edges.iter().filter(|e| e.op == PrimitiveOp::Identity).count();
        let convs = a.edges.iter().filter(|e| e.op == PrimitiveOp::Conv1x1).count();
        assert_eq!(identities, 12);
        assert_eq!(convs, 4);
        assert_eq!(a.edges.len(), 16);
        assert_eq!(a.nodes.len(), 17);
        assert_eq!(a.depth(), 16);
        assert!(a
            .edges
            .iter()
            .all(|e| (e.op == PrimitiveOp::Conv1x1) == e.motif_input.is_some()));
    }

    #[test]
    fn all_none_cell_is_degenerate() {
        let spec = spec_42();
        let mut g = trivial_genotype(&spec);
        for i in 2..=5 {
            for j in 1..i {
                g.motif_mut(3, 1).set(i, j, 0);
            }
        }
        assert!(matches!(flatten(&g), Err(AssemblyError::DegenerateArchitecture)));
    }

    #[test]
    fn dead_branches_are_pruned() {
        // 4-node flat motif: chain 1->2->4 plus an edge into node 3, which
        // has no outgoing edge and must disappear.
        let spec = HierarchySpec::flat(4, 8);
        let mut g = trivial_genotype(&spec);
        let motif = g.motif_mut(2, 1);
        motif.set(2, 1, 2);
        motif.set(3, 2, 0);
        motif.set(4, 3, 0);
        motif.set(4, 2, 1);
        motif.set(3, 1, 5); // feeds a dead end
        let a = flatten(&g).unwrap();
        assert_eq!(a.nodes.len(), 3);
        assert_eq!(a.edges.len(), 2);
    }

    #[test]
    fn identity_preserves_shape_and_concat_sums_channels() {
        let spec = HierarchySpec::flat(3, 16);
        let mut g = trivial_genotype(&spec);
        g.motif_mut(2, 1).set(3, 1, 1); // second identity path into the sink
        let a = flatten(&g).unwrap();
        let shapes = infer_shapes(&a, TensorShape::new(8, 16, 8, 8), 16);
        assert_eq!(shapes[a.source], TensorShape::new(8, 16, 8, 8));
        assert_eq!(shapes[a.sink], TensorShape::new(8, 32, 8, 8)); // 16 + 16
    }

    #[test]
    fn separable_conv_outputs_the_channel_constant() {
        let spec = HierarchySpec::flat(2, 16);
        let mut g = trivial_genotype(&spec);
        g.motif_mut(2, 1).set(2, 1, 4);
        let a = flatten(&g).unwrap();
        let shapes = infer_shapes(&a, TensorShape::new(1, 24, 8, 8), 16);
        assert_eq!(shapes[a.sink].channels, 16);
    }

    #[test]
    fn conv1x1_parameter_formula() {
        let spec = HierarchySpec::flat(2, 16);
        let mut g = trivial_genotype(&spec);
        g.motif_mut(2, 1).set(2, 1, 2);
        let a = flatten(&g).unwrap();
        assert_eq!(count_parameters(&a, 16, 16), 16 * 16 + 32); // 288
    }

    #[test]
    fn separable_parameter_formula() {
        let spec = HierarchySpec::flat(2, 16);
        let mut g = trivial_genotype(&spec);
        g.motif_mut(2, 1).set(2, 1, 4);
        let a = flatten(&g).unwrap();
        assert_eq!(count_parameters(&a, 24, 16), 9 * 24 + 24 * 16 + 32); // 632
    }

    #[test]
    fn identity_chains_have_no_parameters() {
        let a = flatten(&trivial_genotype(&HierarchySpec::flat(8, 16))).unwrap();
        assert_eq!(count_parameters(&a, 16, 16), 0);
    }

    #[test]
    fn flat_expansion_is_idempotent() {
        // Re-encoding a flattened 2-level genotype as a flat genotype and
        // flattening again only repeats the pruning pass.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let g = random_genotype(&HierarchySpec::flat(5, 8), &mut rng);
            let Ok(a) = flatten(&g) else { continue };
            let mut motif = MotifGraph::new(a.nodes.len());
            for e in &a.edges {
                motif.set(e.dst + 1, e.src + 1, e.op.index());
            }
            let g2 = Genotype::new(HierarchySpec::flat(a.nodes.len(), 8), vec![vec![motif]]);
            let a2 = flatten(&g2).unwrap();
            assert_eq!(a.nodes.len(), a2.nodes.len());
            let ops = |x: &FlatArchitecture| {
                x.edges.iter().map(|e| (e.src, e.dst, e.op)).collect::<Vec<_>>()
            };
            assert_eq!(ops(&a), ops(&a2));
        }
    }

    #[test]
    fn dot_export_of_trivial_flat_motif() {
        let g = trivial_genotype(&HierarchySpec::flat(3, 16));
        let graphs = genotype_dot(&g);
        assert_eq!(graphs.len(), 1);
        assert_eq!(graphs[0].name, "Cell");
        assert_eq!(graphs[0].text.matches("label=\"identity\"").count(), 2);
        for v in 1..=3 {
            assert!(graphs[0].text.contains(&format!("  {v};")));
        }
    }

    #[test]
    fn dot_export_emits_seven_graphs_for_the_three_level_spec() {
        let g = trivial_genotype(&spec_42());
        let graphs = genotype_dot(&g);
        assert_eq!(graphs.len(), 7);
        assert_eq!(graphs[6].name, "Cell");
        assert!(graphs[6].text.contains("label=\"Motif 1\""));
    }

    #[test]
    fn dot_export_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_genotype(&spec_42(), &mut rng);
        let a = genotype_dot(&g);
        let b = genotype_dot(&g);
        assert_eq!(a, b);
        if let Ok(arch) = flatten(&g) {
            assert_eq!(architecture_dot(&arch), architecture_dot(&arch));
        }
    }

    proptest! {
        #[test]
        fn prop_spatial_dims_preserved_and_nodes_on_paths(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_genotype(&spec_42(), &mut rng);
            if let Ok(a) = flatten(&g) {
                let input = TensorShape::new(2, 16, 8, 8);
                for s in infer_shapes(&a, input, 16) {
                    prop_assert_eq!(s.height, 8);
                    prop_assert_eq!(s.width, 8);
                    prop_assert!(s.channels >= 1);
                }
                // Every node lies on a source→sink path: reachable both ways.
                let n = a.nodes.len();
                let mut down = vec![false; n];
                down[a.source] = true;
                for e in &a.edges {
                    if down[e.src] { down[e.dst] = true; }
                }
                let mut up = vec![false; n];
                up[a.sink] = true;
                for e in a.edges.iter().rev() {
                    if up[e.dst] { up[e.src] = true; }
                }
                prop_assert!((0..n).all(|v| down[v] && up[v]));
            }
        }
    }
}
