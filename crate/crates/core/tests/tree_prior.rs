//! The tree prior over a small enumerable universe: total mass, and the
//! stationary distribution of the Metropolis-Hastings tree chain.

use std::collections::HashMap;

use afbart::basis::BasisSystem;
use afbart::data::GridDomain;
use afbart::sampler::{init_state, ChainData, PriorHyper, Sampler, SweepPlan};
use afbart::tree::{log_tree_prior, nth_rule, CutpointTable, DecisionTree, Region, RowMatrix};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every tree reachable from a leaf with the given region.
fn enumerate(region: &Region, cuts: &CutpointTable) -> Vec<DecisionTree> {
    let mut out = vec![DecisionTree::stump()];
    let mut k = 0;
    loop {
        let n_rules: usize = (0..cuts.n_vars())
            .map(|v| cuts.count_between(v, region[v].0, region[v].1))
            .sum();
        if k >= n_rules {
            break;
        }
        let rule = nth_rule(region, cuts, k);
        let mut left = region.clone();
        left[rule.var].1 = rule.cut;
        let mut right = region.clone();
        right[rule.var].0 = rule.cut;
        for l in enumerate(&left, cuts) {
            for r in enumerate(&right, cuts) {
                out.push(DecisionTree::from_split(rule, l.clone(), r));
            }
        }
        k += 1;
    }
    out
}

fn full_region(n_vars: usize) -> Region {
    vec![(f64::NEG_INFINITY, f64::INFINITY); n_vars]
}

fn key(t: &DecisionTree) -> String {
    serde_json::to_string(t).unwrap()
}

#[test]
fn prior_mass_sums_to_one_on_small_universes() {
    for cuts in [
        CutpointTable::new(vec![vec![0.3, 0.6]]),
        CutpointTable::new(vec![vec![0.2, 0.5, 0.8]]),
        CutpointTable::new(vec![vec![0.5], vec![0.25, 0.75]]),
    ] {
        let trees = enumerate(&full_region(cuts.n_vars()), &cuts);
        for (a, gamma) in [(0.95, 0.5), (0.5, 0.9), (1.0, 0.3)] {
            let total: f64 = trees.iter().map(|t| log_tree_prior(t, a, gamma, &cuts).exp()).sum();
            assert!((total - 1.0).abs() <= 1e-10, "mass {total} for a={a} gamma={gamma}");
        }
    }
    let one_var = enumerate(&full_region(1), &CutpointTable::new(vec![vec![0.3, 0.6]]));
    assert_eq!(one_var.len(), 5);
    assert!(one_var.iter().all(|t| t.max_depth() <= 2));
}

/// With an uninformative likelihood the chain must sample trees from the prior.
#[test]
fn tree_chain_targets_the_prior_without_data() {
    let x = DMatrix::from_row_slice(8, 2, &[
        0.1, 0.1, 0.1, 0.9, 0.4, 0.3, 0.4, 0.6, 0.6, 0.2, 0.6, 0.8, 0.9, 0.4, 0.9, 0.95,
    ]);
    let cuts = CutpointTable::new(vec![vec![0.25, 0.5], vec![0.5]]);
    let trees = enumerate(&full_region(2), &cuts);
    let (a, gamma) = (0.95, 0.5);
    let prior_mass: HashMap<String, f64> =
        trees.iter().map(|t| (key(t), log_tree_prior(t, a, gamma, &cuts).exp())).collect();

    let grid = GridDomain::unit_square(3);
    let basis = BasisSystem::build(&grid, 5).unwrap();
    let z = DMatrix::from_fn(8, 9, |i, m| ((i * 7 + m * 3) % 5) as f64 * 0.1);
    let chain = ChainData::with_cutpoints(&z, RowMatrix::from_dmatrix(&x), cuts, &basis);
    let prior = PriorHyper::new(a, gamma, 3.0, 1.0, DVector::zeros(1), DMatrix::identity(1, 1), 2.0).unwrap();
    let mut psi = DMatrix::zeros(5, 1);
    psi[(0, 0)] = 1.0;
    let mut state = init_state(&prior, psi, 1, 1.0);
    state.sigma2 = 1e14;
    let plan = SweepPlan {
        trees: true,
        leaves: true,
        sigma2: false,
        psi: false,
        lambda: false,
    };
    let mut sampler = Sampler::new(&chain, prior, plan, state, ChaCha8Rng::seed_from_u64(12));
    let iters = 400_000;
    let mut counts: HashMap<String, usize> = HashMap::new();
    for _ in 0..iters {
        sampler.step().unwrap();
        *counts.entry(key(&sampler.state().ensemble.trees[0].tree)).or_default() += 1;
    }
    assert!(counts.keys().all(|k| prior_mass.contains_key(k)));
    for (k, p) in &prior_mass {
        let freq = *counts.get(k).unwrap_or(&0) as f64 / iters as f64;
        // autocorrelated chain: allow a generous multiple of the iid standard error
        let se = (p * (1.0 - p) / iters as f64).sqrt();
        assert!((freq - p).abs() <= 0.01_f64.max(12.0 * se), "tree {k}: freq {freq} vs prior {p}");
    }
}
