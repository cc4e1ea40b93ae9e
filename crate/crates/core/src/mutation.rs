//! The uniform edit action on genotypes.
//!
//! A single mutation draws, in order: a non-primitive level `ℓ ∈ {2..L}`, a
//! motif `m` in that level, a successor node `i ∈ {2..n}`, a predecessor
//! `j ∈ {1..i−1}`, and a replacement operation `k′` uniform over the full
//! pool of the level below — including `none` and the current operation, so
//! no-op mutations occur. Flat genotypes skip the level draw and fix
//! `ℓ = 2`. The result replaces exactly one adjacency cell.

use crate::genotype::{fresh_id, Genotype};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Record of one mutation: coordinates of the edited cell plus the old and
/// new operation indices. Serialized into the run log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationTrace {
    pub level: usize,
    pub motif: usize,
    pub succ: usize,
    pub pred: usize,
    pub old_op: usize,
    pub new_op: usize,
}

/// What a mutation did to the target edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditClass {
    AddEdge,
    AlterEdge,
    RemoveEdge,
    NoOp,
}

impl fmt::Display for EditClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditClass::AddEdge => "add_edge",
            EditClass::AlterEdge => "alter_edge",
            EditClass::RemoveEdge => "remove_edge",
            EditClass::NoOp => "noop",
        })
    }
}

/// Classify a trace: add if the edge was `none` and is no longer, remove for
/// the reverse, alter when both ends are real but differ, no-op otherwise.
pub fn classify_edit(t: &MutationTrace) -> EditClass {
    match (t.old_op, t.new_op) {
        (old, new) if old == new => EditClass::NoOp,
        (0, _) => EditClass::AddEdge,
        (_, 0) => EditClass::RemoveEdge,
        _ => EditClass::AlterEdge,
    }
}

/// Draw the five mutation steps for `g` without applying them.
pub(crate) fn sample_trace(g: &Genotype, rng: &mut impl Rng) -> MutationTrace {
    let spec = g.spec();
    let level = if g.is_flat() {
        2 // the level draw is omitted for flat genotypes
    } else {
        rng.gen_range(2..=spec.levels)
    };
    let motif = rng.gen_range(1..=spec.motif_count(level));
    let n = spec.node_count(level, motif);
    let succ = rng.gen_range(2..=n);
    let pred = rng.gen_range(1..succ);
    let new_op = rng.gen_range(0..spec.pool_size(level));
    let old_op = g.motif(level, motif).op(succ, pred);
    MutationTrace { level, motif, succ, pred, old_op, new_op }
}

pub(crate) fn apply_trace(g: &mut Genotype, t: &MutationTrace) {
    g.motif_mut(t.level, t.motif).set(t.succ, t.pred, t.new_op);
}

/// Mutate a genotype, returning the edited copy (fresh id) and the trace.
/// The input is untouched.
pub fn mutate(g: &Genotype, rng: &mut impl Rng) -> (Genotype, MutationTrace) {
    let trace = sample_trace(g, rng);
    let mut child = g.clone().with_id(fresh_id());
    apply_trace(&mut child, &trace);
    (child, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genotype::{encode, trivial_genotype, HierarchySpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::{HashSet, VecDeque};

    #[test]
    fn flat_mutations_always_target_level_two() {
        let g = trivial_genotype(&HierarchySpec::flat(4, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (_, t) = mutate(&g, &mut rng);
            assert_eq!(t.level, 2);
        }
    }

    #[test]
    fn same_op_replacement_is_a_structural_noop() {
        let g = trivial_genotype(&HierarchySpec::flat(3, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        loop {
            let (child, t) = mutate(&g, &mut rng);
            if t.new_op == t.old_op {
                assert_eq!(child, g);
                assert_eq!(classify_edit(&t), EditClass::NoOp);
                break;
            }
        }
    }

    #[test]
    fn classification_covers_the_three_paper_cases_and_noop() {
        let t = |old_op, new_op| MutationTrace {
            level: 2,
            motif: 1,
            succ: 2,
            pred: 1,
            old_op,
            new_op,
        };
        assert_eq!(classify_edit(&t(0, 4)), EditClass::AddEdge);
        assert_eq!(classify_edit(&t(5, 0)), EditClass::RemoveEdge);
        assert_eq!(classify_edit(&t(2, 4)), EditClass::AlterEdge);
        assert_eq!(classify_edit(&t(1, 1)), EditClass::NoOp);
        assert_eq!(classify_edit(&t(0, 0)), EditClass::NoOp);
    }

    #[test]
    fn same_seed_reproduces_the_mutation_sequence() {
        let g = trivial_genotype(&HierarchySpec::three_level(3, 3, 4, 8));
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cur = g.clone();
            let mut traces = Vec::new();
            for _ in 0..50 {
                let (next, t) = mutate(&cur, &mut rng);
                traces.push(t);
                cur = next;
            }
            (encode(&cur).unwrap(), traces)
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9).0, run(10).0);
    }

    #[test]
    fn iterated_mutation_reaches_the_whole_tiny_space() {
        // 3-node flat space: 3 edge cells with 7 choices each = 343
        // genotypes, all reachable from the trivial chain by single edits.
        let spec = HierarchySpec::flat(3, 8);
        let start = trivial_genotype(&spec);
        let all_edits: Vec<MutationTrace> = (2..=3usize)
            .flat_map(|i| (1..i).map(move |j| (i, j)))
            .flat_map(|(i, j)| {
                (0..7).map(move |k| MutationTrace {
                    level: 2,
                    motif: 1,
                    succ: i,
                    pred: j,
                    old_op: 0,
                    new_op: k,
                })
            })
            .collect();
        let mut seen = HashSet::new();
        let mut queue = VecDeque::new();
        seen.insert(encode(&start).unwrap());
        queue.push_back(start);
        while let Some(g) = queue.pop_front() {
            for t in &all_edits {
                let mut child = g.clone();
                apply_trace(&mut child, t);
                let key = encode(&child).unwrap();
                if seen.insert(key) {
                    queue.push_back(child);
                }
            }
        }
        assert_eq!(seen.len(), 343);
    }

    proptest! {
        #[test]
        fn prop_mutation_is_closed_and_local(seed in any::<u64>()) {
            let spec = HierarchySpec::three_level(4, 3, 4, 8);
            let g = trivial_genotype(&spec);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (child, t) = mutate(&g, &mut rng);
            prop_assert!(child.validate().is_ok());
            // Exactly the traced cell differs (zero cells for a no-op).
            let mut diffs = 0;
            for level in 2..=spec.levels {
                for m in 1..=spec.motif_count(level) {
                    let n = spec.node_count(level, m);
                    for i in 2..=n {
                        for j in 1..i {
                            if g.motif(level, m).op(i, j) != child.motif(level, m).op(i, j) {
                                diffs += 1;
                                prop_assert_eq!((level, m, i, j), (t.level, t.motif, t.succ, t.pred));
                            }
                        }
                    }
                }
            }
            prop_assert_eq!(diffs, usize::from(t.old_op != t.new_op));
        }
    }
}
