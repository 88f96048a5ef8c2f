//! Metropolis-Hastings tree proposals: GROW, PRUNE, CHANGE and SWAP.

use rand::Rng;

use crate::tree::{nth_rule, CutpointTable, DecisionTree, Region, RowMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Change, MoveKind::Swap];

    pub fn index(self) -> usize {
        match self {
            MoveKind::Grow => 0,
            MoveKind::Prune => 1,
            MoveKind::Change => 2,
            MoveKind::Swap => 3,
        }
    }
}

/// Base move probabilities before renormalizing over the moves a tree supports.
pub const MOVE_WEIGHTS: [f64; 4] = [0.25, 0.25, 0.40, 0.10];

/// Everything about a tree that the proposal probabilities depend on.
#[derive(Debug, Clone)]
pub struct MoveSet {
    regions: Vec<Region>,
    rule_counts: Vec<usize>,
    /// Leaf nodes with at least one available rule.
    growable: Vec<usize>,
    prunable: Vec<usize>,
    internal: Vec<usize>,
    swappable: Vec<(usize, usize)>,
}

impl MoveSet {
    pub fn new(tree: &DecisionTree, cutpoints: &CutpointTable) -> Self {
        let regions = tree.regions(cutpoints.n_vars());
        let rule_counts = tree.rule_counts(cutpoints);
        let growable = tree
            .leaf_node_ids()
            .into_iter()
            .filter(|&i| rule_counts[i] > 0)
            .collect();
        Self {
            regions,
            rule_counts,
            growable,
            prunable: tree.prunable_ids(),
            internal: tree.internal_ids(),
            swappable: tree.swappable_pairs(),
        }
    }

    fn available(&self, kind: MoveKind) -> bool {
        match kind {
            MoveKind::Grow => !self.growable.is_empty(),
            MoveKind::Prune => !self.prunable.is_empty(),
            MoveKind::Change => !self.internal.is_empty(),
            MoveKind::Swap => !self.swappable.is_empty(),
        }
    }

    /// Renormalized move probabilities; all zero when no move is possible.
    pub fn move_probabilities(&self) -> [f64; 4] {
        let mut p = [0.0; 4];
        for k in MoveKind::ALL {
            if self.available(k) {
                p[k.index()] = MOVE_WEIGHTS[k.index()];
            }
        }
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            for v in &mut p {
                *v /= total;
            }
        }
        p
    }

    fn ln_move(&self, kind: MoveKind) -> f64 {
        self.move_probabilities()[kind.index()].ln()
    }
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub tree: DecisionTree,
    pub kind: MoveKind,
    /// `log q(T* -> T) - log q(T -> T*)`; `-inf` means the proposal must be rejected.
    pub log_q_ratio: f64,
    /// Leaf of every training row under `tree`.
    pub assignment: Vec<usize>,
    pub leaf_counts: Vec<usize>,
}

/// Draw a candidate tree from the proposal kernel.
///
/// The move is picked with probabilities 0.25/0.25/0.40/0.10 (GROW/PRUNE/
/// CHANGE/SWAP) renormalized over the moves this tree supports. A candidate
/// that leaves some leaf without training rows is returned as the original
/// tree with `log_q_ratio = -inf`.
pub fn propose<R: Rng + ?Sized>(
    tree: &DecisionTree,
    rows: &RowMatrix,
    cutpoints: &CutpointTable,
    rng: &mut R,
) -> Proposal {
    let here = MoveSet::new(tree, cutpoints);
    let probs = here.move_probabilities();
    let u: f64 = rng.random();
    let reject = |kind| {
        let assignment = tree.assign(rows);
        Proposal {
            tree: tree.clone(),
            kind,
            log_q_ratio: f64::NEG_INFINITY,
            leaf_counts: tree.leaf_counts(&assignment),
            assignment,
        }
    };
    if probs.iter().all(|&p| p == 0.0) {
        return reject(MoveKind::Grow);
    }
    let mut acc = 0.0;
    let mut kind = MoveKind::Swap;
    for k in MoveKind::ALL {
        acc += probs[k.index()];
        if u < acc && probs[k.index()] > 0.0 {
            kind = k;
            break;
        }
    }
    if probs[kind.index()] == 0.0 {
        // u landed on the rounding tail; take the last available move
        kind = *MoveKind::ALL.iter().rev().find(|k| probs[k.index()] > 0.0).unwrap();
    }

    let (candidate, log_q_ratio) = match kind {
        MoveKind::Grow => {
            let node = here.growable[rng.random_range(0..here.growable.len())];
            let n_rules = here.rule_counts[node];
            let rule = nth_rule(&here.regions[node], cutpoints, rng.random_range(0..n_rules));
            let next = tree.grow(node, rule);
            let there = MoveSet::new(&next, cutpoints);
            let fwd = here.ln_move(kind) - (here.growable.len() as f64).ln() - (n_rules as f64).ln();
            let rev = there.ln_move(MoveKind::Prune) - (there.prunable.len() as f64).ln();
            (next, rev - fwd)
        }
        MoveKind::Prune => {
            let node = here.prunable[rng.random_range(0..here.prunable.len())];
            let next = tree.prune(node);
            let there = MoveSet::new(&next, cutpoints);
            let fwd = here.ln_move(kind) - (here.prunable.len() as f64).ln();
            let rev = there.ln_move(MoveKind::Grow)
                - (there.growable.len() as f64).ln()
                - (there.rule_counts[node] as f64).ln();
            (next, rev - fwd)
        }
        MoveKind::Change => {
            let node = here.internal[rng.random_range(0..here.internal.len())];
            let n_rules = here.rule_counts[node];
            let rule = nth_rule(&here.regions[node], cutpoints, rng.random_range(0..n_rules));
            let next = tree.change(node, rule);
            let there = MoveSet::new(&next, cutpoints);
            let fwd = here.ln_move(kind) - (here.internal.len() as f64).ln() - (n_rules as f64).ln();
            let rev = there.ln_move(kind)
                - (there.internal.len() as f64).ln()
                - (there.rule_counts[node] as f64).ln();
            (next, rev - fwd)
        }
        MoveKind::Swap => {
            let (a, b) = here.swappable[rng.random_range(0..here.swappable.len())];
            let next = tree.swap(a, b);
            let there = MoveSet::new(&next, cutpoints);
            let fwd = here.ln_move(kind) - (here.swappable.len() as f64).ln();
            let rev = there.ln_move(kind) - (there.swappable.len() as f64).ln();
            (next, rev - fwd)
        }
    };

    let assignment = candidate.assign(rows);
    let leaf_counts = candidate.leaf_counts(&assignment);
    if leaf_counts.contains(&0) || !log_q_ratio.is_finite() {
        return reject(kind);
    }
    Proposal {
        tree: candidate,
        kind,
        log_q_ratio,
        assignment,
        leaf_counts,
    }
}

/// Exact `log q(from -> to)` for a single move, used to check reversibility.
pub fn log_proposal_prob(
    from: &DecisionTree,
    to: &DecisionTree,
    kind: MoveKind,
    cutpoints: &CutpointTable,
) -> f64 {
    let here = MoveSet::new(from, cutpoints);
    let ln_move = here.ln_move(kind);
    let mut total = 0.0;
    match kind {
        MoveKind::Grow => {
            for &node in &here.growable {
                let n = here.rule_counts[node];
                for k in 0..n {
                    if from.grow(node, nth_rule(&here.regions[node], cutpoints, k)) == *to {
                        total += 1.0 / (here.growable.len() * n) as f64;
                    }
                }
            }
        }
        MoveKind::Prune => {
            for &node in &here.prunable {
                if from.prune(node) == *to {
                    total += 1.0 / here.prunable.len() as f64;
                }
            }
        }
        MoveKind::Change => {
            for &node in &here.internal {
                let n = here.rule_counts[node];
                for k in 0..n {
                    if from.change(node, nth_rule(&here.regions[node], cutpoints, k)) == *to {
                        total += 1.0 / (here.internal.len() * n) as f64;
                    }
                }
            }
        }
        MoveKind::Swap => {
            for &(a, b) in &here.swappable {
                if from.swap(a, b) == *to {
                    total += 1.0 / here.swappable.len() as f64;
                }
            }
        }
    }
    ln_move + total.ln()
}
