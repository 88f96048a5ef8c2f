//! The Gibbs/Metropolis-Hastings chain over trees, leaves, `sigma^2`, `Psi` and `lambda`.
//!
//! The chain never forms grid-space residuals. With `y_i = Psi^T B^T z_i`,
//! `A = Psi^T B^T B Psi` and a partial fit `g`, the projected residual is
//! `F^T r_i = y_i - A g` and `r_i^T r_i = |z_i|^2 - 2 y_i^T g + g^T A g`, so
//! every update works with `n x J` and `K x K` quantities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conditionals::{draw_constrained, draw_lambda, draw_sigma2, LeafPosterior, LeafStats};
use super::prior::PriorHyper;
use super::SamplerError;
use crate::basis::{max_abs_identity_deviation, BasisSystem};
use crate::config::{Mode, ModelConfig};
use crate::proposal::{propose, MoveKind};
use crate::tree::{log_tree_prior, CutpointTable, DecisionTree, Ensemble, NodeParams, RegressionTree, RowMatrix};

/// Data-side quantities the chain needs, computed once.
#[derive(Debug, Clone)]
pub struct ChainData {
    pub rows: RowMatrix,
    pub cutpoints: CutpointTable,
    /// `Z B` (n x K).
    pub zb: DMatrix<f64>,
    /// `|z_i|^2`.
    pub z_sq: Vec<f64>,
    pub btb: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    /// Max absolute row sum of `B`.
    pub b_inf_norm: f64,
}

impl ChainData {
    pub fn new(z: &DMatrix<f64>, x: &DMatrix<f64>, basis: &BasisSystem, n_cutpoints: usize) -> Self {
        let rows = RowMatrix::from_dmatrix(x);
        let cutpoints = CutpointTable::from_data(&rows, n_cutpoints);
        Self::with_cutpoints(z, rows, cutpoints, basis)
    }

    pub fn with_cutpoints(z: &DMatrix<f64>, rows: RowMatrix, cutpoints: CutpointTable, basis: &BasisSystem) -> Self {
        let b = basis.b.clone();
        let b_inf_norm = b
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        Self {
            rows,
            cutpoints,
            zb: z * &b,
            z_sq: z.row_iter().map(|r| r.norm_squared()).collect(),
            btb: b.tr_mul(&b),
            penalty: basis.penalty.clone(),
            b,
            b_inf_norm,
        }
    }

    pub fn n(&self) -> usize {
        self.zb.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    pub fn k(&self) -> usize {
        self.b.ncols()
    }
}

/// The full parameter vector `(Psi, trees, leaf parameters, sigma^2, lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub psi: DMatrix<f64>,
    pub ensemble: Ensemble,
    pub sigma2: f64,
    pub lambda: Vec<f64>,
}

/// Starting point: the given `Psi`, `T` stumps at `mu_mu`, `sigma^2 = 0.1 sigma_hat^2`, `lambda = 1`.
pub fn init_state(prior: &PriorHyper, psi: DMatrix<f64>, n_trees: usize, sigma_hat2: f64) -> SamplerState {
    let j = psi.ncols();
    SamplerState {
        psi,
        ensemble: Ensemble::stumps(n_trees, prior.mu_mu.as_slice()),
        sigma2: 0.1 * sigma_hat2,
        lambda: vec![1.0; j],
    }
}

/// Which blocks of the sweep run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPlan {
    pub trees: bool,
    pub leaves: bool,
    pub sigma2: bool,
    pub psi: bool,
    pub lambda: bool,
}

impl SweepPlan {
    pub fn for_mode(mode: Mode) -> Self {
        let adapt = mode.adapts_basis();
        Self {
            trees: true,
            leaves: true,
            sigma2: true,
            psi: adapt,
            lambda: adapt,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub iterations: usize,
    /// Proposals and acceptances per move (GROW, PRUNE, CHANGE, SWAP).
    pub proposed: [usize; 4],
    pub accepted: [usize; 4],
    /// Largest `max |F^T F - I|` seen after a basis update.
    pub max_orthonormality_error: f64,
    /// Largest change of a fitted value caused by normalizing `psi_j` and rescaling leaves.
    pub max_rescale_drift: f64,
    /// Largest disagreement between the incremental fit and a full recomputation.
    pub max_cache_drift: f64,
    pub constraint_ridges: usize,
}

/// Result of the Metropolis-Hastings decision for one tree.
#[derive(Debug, Clone)]
pub struct MhDecision {
    pub kind: MoveKind,
    pub accepted: bool,
    pub log_alpha: f64,
    pub tree: DecisionTree,
    pub assignment: Vec<usize>,
    pub posteriors: Vec<LeafPosterior>,
}

const DRIFT_CHECK_EVERY: usize = 100;
const CACHE_TOLERANCE: f64 = 1e-8;

pub struct Sampler<'a> {
    data: &'a ChainData,
    prior: PriorHyper,
    plan: SweepPlan,
    state: SamplerState,
    assign: Vec<Vec<usize>>,
    /// `g(x_i)` for every observation, row-major `n x J`.
    g: Vec<f64>,
    /// `Psi^T B^T z_i`, row-major `n x J`.
    y: Vec<f64>,
    a: DMatrix<f64>,
    partial: Vec<f64>,
    proj: Vec<f64>,
    sq: Vec<f64>,
    rng: ChaCha8Rng,
    diagnostics: ChainDiagnostics,
}

impl<'a> Sampler<'a> {
    pub fn new(
        data: &'a ChainData,
        prior: PriorHyper,
        plan: SweepPlan,
        state: SamplerState,
        rng: ChaCha8Rng,
    ) -> Self {
        let n = data.n();
        let j = state.psi.ncols();
        let assign = state
            .ensemble
            .trees
            .iter()
            .map(|t| t.tree.assign(&data.rows))
            .collect();
        let mut s = Self {
            data,
            prior,
            plan,
            state,
            assign,
            g: vec![0.0; n * j],
            y: vec![0.0; n * j],
            a: DMatrix::zeros(j, j),
            partial: vec![0.0; n * j],
            proj: vec![0.0; n * j],
            sq: vec![0.0; n],
            rng,
            diagnostics: ChainDiagnostics::default(),
        };
        s.g = s.full_fit();
        s.refresh_projection();
        s
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn prior(&self) -> &PriorHyper {
        &self.prior
    }

    pub fn diagnostics(&self) -> &ChainDiagnostics {
        &self.diagnostics
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_sigma2(&mut self, sigma2: f64) {
        self.state.sigma2 = sigma2;
    }

    fn j(&self) -> usize {
        self.state.psi.ncols()
    }

    /// Ensemble fit `g(x_i)` in basis coordinates (n x J).
    pub fn fitted_coefficients(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.data.n(), self.j(), &self.g)
    }

    /// Fitted surfaces `B Psi g(x_i)` (n x M).
    pub fn fitted_surfaces(&self) -> DMatrix<f64> {
        let f = &self.data.b * &self.state.psi;
        self.fitted_coefficients() * f.transpose()
    }

    /// `sum_i |z_i - B Psi g_i|^2` from the cached projections.
    pub fn sse(&self) -> f64 {
        let j = self.j();
        let mut total = 0.0;
        for i in 0..self.data.n() {
            let gi = &self.g[i * j..(i + 1) * j];
            total += self.data.z_sq[i] - 2.0 * dot(&self.y[i * j..(i + 1) * j], gi) + quad(&self.a, gi);
        }
        total.max(0.0)
    }

    fn full_fit(&self) -> Vec<f64> {
        let j = self.j();
        let mut g = vec![0.0; self.data.n() * j];
        for (t, tree) in self.state.ensemble.trees.iter().enumerate() {
            for (i, &leaf) in self.assign[t].iter().enumerate() {
                for (gv, mv) in g[i * j..(i + 1) * j].iter_mut().zip(tree.mu.row(leaf)) {
                    *gv += mv;
                }
            }
        }
        g
    }

    fn refresh_projection(&mut self) {
        let psi = &self.state.psi;
        let yb = &self.data.zb * psi;
        let j = psi.ncols();
        for i in 0..self.data.n() {
            for c in 0..j {
                self.y[i * j + c] = yb[(i, c)];
            }
        }
        let mut a = psi.tr_mul(&(&self.data.btb * psi));
        super::symmetrize(&mut a);
        self.a = a;
    }

    /// Fill the partial fit, projected residuals and squared residual norms for tree `t`.
    fn partial_residuals(&mut self, t: usize) {
        let j = self.j();
        let mu = &self.state.ensemble.trees[t].mu;
        for i in 0..self.data.n() {
            let leaf = self.assign[t][i];
            let row = &mut self.partial[i * j..(i + 1) * j];
            for ((p, g), m) in row.iter_mut().zip(&self.g[i * j..(i + 1) * j]).zip(mu.row(leaf)) {
                *p = g - m;
            }
            let yi = &self.y[i * j..(i + 1) * j];
            let mut yg = 0.0;
            let mut gag = 0.0;
            for r in 0..j {
                let ag: f64 = row.iter().enumerate().map(|(c, g)| self.a[(r, c)] * g).sum();
                self.proj[i * j + r] = yi[r] - ag;
                yg += yi[r] * row[r];
                gag += row[r] * ag;
            }
            self.sq[i] = self.data.z_sq[i] - 2.0 * yg + gag;
        }
    }

    fn leaf_stats(&self, assignment: &[usize], n_leaves: usize) -> Vec<LeafStats> {
        let j = self.j();
        let mut stats = vec![LeafStats::empty(j); n_leaves];
        for (i, &leaf) in assignment.iter().enumerate() {
            let s = &mut stats[leaf];
            s.n += 1;
            for c in 0..j {
                s.proj_sum[c] += self.proj[i * j + c];
            }
            s.sq_sum += self.sq[i];
        }
        stats
    }

    fn posteriors(&self, stats: &[LeafStats]) -> Result<(f64, Vec<LeafPosterior>), SamplerError> {
        let m = self.data.m();
        let mut total = 0.0;
        let mut out = Vec::with_capacity(stats.len());
        for s in stats {
            let post = LeafPosterior::new(s, &self.a, self.state.sigma2, &self.prior)?;
            total += post.log_marginal(s, self.state.sigma2, m, &self.prior);
            out.push(post);
        }
        Ok((total, out))
    }

    /// Propose a new structure for tree `t` and decide acceptance.
    ///
    /// Only the RNG advances; the state is left untouched. Exactly one uniform
    /// is drawn for the decision, also when the proposal is auto-rejected.
    pub fn mh_tree_step(&mut self, t: usize) -> Result<MhDecision, SamplerError> {
        self.partial_residuals(t);
        let data = self.data;
        let current = &self.state.ensemble.trees[t].tree;
        let proposal = propose(current, &data.rows, &data.cutpoints, &mut self.rng);
        let u: f64 = self.rng.random();

        let cur_stats = self.leaf_stats(&self.assign[t], current.n_leaves());
        let (cur_ml, cur_post) = self.posteriors(&cur_stats)?;
        let mut log_alpha = f64::NEG_INFINITY;
        let mut accepted = false;
        let mut chosen = None;
        if proposal.log_q_ratio.is_finite() {
            let new_stats = self.leaf_stats(&proposal.assignment, proposal.tree.n_leaves());
            let (new_ml, new_post) = self.posteriors(&new_stats)?;
            let (a, gamma) = (self.prior.a, self.prior.gamma);
            let prior_ratio = log_tree_prior(&proposal.tree, a, gamma, &data.cutpoints)
                - log_tree_prior(current, a, gamma, &data.cutpoints);
            log_alpha = (proposal.log_q_ratio + new_ml - cur_ml + prior_ratio).min(0.0);
            if u.ln() < log_alpha {
                accepted = true;
                chosen = Some(new_post);
            }
        }
        Ok(match chosen {
            Some(posteriors) => MhDecision {
                kind: proposal.kind,
                accepted,
                log_alpha,
                tree: proposal.tree,
                assignment: proposal.assignment,
                posteriors,
            },
            None => MhDecision {
                kind: proposal.kind,
                accepted,
                log_alpha,
                tree: current.clone(),
                assignment: self.assign[t].clone(),
                posteriors: cur_post,
            },
        })
    }

    /// Tree move followed by a draw of every leaf parameter of tree `t`.
    pub fn update_tree(&mut self, t: usize) -> Result<bool, SamplerError> {
        let decision = if self.plan.trees {
            let d = self.mh_tree_step(t)?;
            let k = d.kind.index();
            self.diagnostics.proposed[k] += 1;
            if d.accepted {
                self.diagnostics.accepted[k] += 1;
            }
            d
        } else {
            self.partial_residuals(t);
            let tree = self.state.ensemble.trees[t].tree.clone();
            let stats = self.leaf_stats(&self.assign[t], tree.n_leaves());
            let (_, posteriors) = self.posteriors(&stats)?;
            MhDecision {
                kind: MoveKind::Change,
                accepted: false,
                log_alpha: f64::NEG_INFINITY,
                tree,
                assignment: self.assign[t].clone(),
                posteriors,
            }
        };

        let j = self.j();
        let mu = if self.plan.leaves {
            let rows: Vec<Vec<f64>> = decision
                .posteriors
                .iter()
                .map(|p| p.sample(&mut self.rng).iter().copied().collect())
                .collect();
            NodeParams::from_rows(rows)
        } else if decision.accepted {
            let rows = decision.posteriors.iter().map(|p| p.mean.iter().copied().collect()).collect();
            NodeParams::from_rows(rows)
        } else {
            self.state.ensemble.trees[t].mu.clone()
        };
        for (i, &leaf) in decision.assignment.iter().enumerate() {
            for ((g, p), m) in self.g[i * j..(i + 1) * j]
                .iter_mut()
                .zip(&self.partial[i * j..(i + 1) * j])
                .zip(mu.row(leaf))
            {
                *g = p + m;
            }
        }
        self.state.ensemble.trees[t] = RegressionTree {
            tree: decision.tree,
            mu,
        };
        self.assign[t] = decision.assignment;
        Ok(decision.accepted)
    }

    pub fn update_sigma2(&mut self) {
        let n_obs = self.data.n() * self.data.m();
        let sse = self.sse();
        self.state.sigma2 = draw_sigma2(self.prior.nu, self.prior.lambda_scale, n_obs, sse, &mut self.rng);
    }

    /// Constrained update of every column of `Psi`, each followed by the
    /// normalization `psi_j <- psi_j / |B psi_j|` and the compensating rescale
    /// of component `j` of every leaf parameter.
    pub fn update_psi(&mut self) -> Result<(), SamplerError> {
        let n = self.data.n();
        let j = self.j();
        let k = self.data.k();
        let btb = &self.data.btb;
        let inv_s2 = 1.0 / self.state.sigma2;
        for col in 0..j {
            let mut gtg = vec![0.0; j];
            let mut zbg = DVector::zeros(k);
            for i in 0..n {
                let gi = &self.g[i * j..(i + 1) * j];
                for (c, v) in gtg.iter_mut().enumerate() {
                    *v += gi[col] * gi[c];
                }
                zbg.axpy(gi[col], &self.data.zb.row(i).transpose(), 1.0);
            }
            let mut other = DVector::zeros(k);
            for c in (0..j).filter(|&c| c != col) {
                other.axpy(gtg[c], &self.state.psi.column(c), 1.0);
            }
            let h = (zbg - btb * other) * inv_s2;
            let precision = btb * (gtg[col] * inv_s2) + &self.data.penalty * self.state.lambda[col];
            let mut constraint = DMatrix::zeros(j - 1, k);
            for (r, c) in (0..j).filter(|&c| c != col).enumerate() {
                let row = self.state.psi.column(c).tr_mul(btb);
                constraint.set_row(r, &row);
            }
            let draw = draw_constrained(&precision, &h, &constraint, &mut self.rng)?;
            if draw.ridged {
                self.diagnostics.constraint_ridges += 1;
            }
            let psi = draw.psi;
            let scale = psi.dot(&(btb * &psi)).sqrt();
            let normalized = &psi / scale;

            // drift bound: |B d|_inf <= |B|_inf |d|_inf with d = psi g - (psi/c)(c g)
            let mut worst: f64 = 0.0;
            for i in 0..n {
                let before = self.g[i * j + col];
                let after = before * scale;
                for r in 0..k {
                    worst = worst.max((psi[r] * before - normalized[r] * after).abs());
                }
                self.g[i * j + col] = after;
            }
            let drift = worst * self.data.b_inf_norm;
            self.diagnostics.max_rescale_drift = self.diagnostics.max_rescale_drift.max(drift);
            self.state.psi.set_column(col, &normalized);
            for tree in &mut self.state.ensemble.trees {
                tree.mu.scale_component(col, scale);
            }
        }
        self.refresh_projection();
        let err = max_abs_identity_deviation(&self.a);
        self.diagnostics.max_orthonormality_error = self.diagnostics.max_orthonormality_error.max(err);
        Ok(())
    }

    pub fn update_lambda(&mut self) -> Result<(), SamplerError> {
        let k = self.data.k();
        for col in 0..self.j() {
            let psi = self.state.psi.column(col);
            let q = psi.dot(&(&self.data.penalty * psi));
            self.state.lambda[col] = draw_lambda(k, q, &mut self.rng)?;
        }
        Ok(())
    }

    /// Compare the incremental fit with a full recomputation and resynchronize.
    pub fn check_cache(&mut self) -> Result<f64, SamplerError> {
        let fresh = self.full_fit();
        let drift = fresh
            .iter()
            .zip(&self.g)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.diagnostics.max_cache_drift = self.diagnostics.max_cache_drift.max(drift);
        if drift > CACHE_TOLERANCE {
            return Err(SamplerError::CacheDrift {
                iteration: self.diagnostics.iterations,
                drift,
            });
        }
        self.g = fresh;
        self.refresh_projection();
        Ok(drift)
    }

    /// One full sweep: every tree in order, then `sigma^2`, `Psi` and `lambda`.
    pub fn step(&mut self) -> Result<(), SamplerError> {
        for t in 0..self.state.ensemble.len() {
            self.update_tree(t)?;
        }
        if self.plan.sigma2 {
            self.update_sigma2();
        }
        if self.plan.psi {
            self.update_psi()?;
        }
        if self.plan.lambda {
            self.update_lambda()?;
        }
        self.diagnostics.iterations += 1;
        if self.diagnostics.iterations.is_multiple_of(DRIFT_CHECK_EVERY) {
            self.check_cache()?;
        }
        Ok(())
    }

    /// Run `n_mcmc` sweeps, keeping every `thin`-th state after `burn_in`.
    pub fn run(&mut self, config: &ModelConfig) -> Result<Vec<SamplerState>, SamplerError> {
        let mut kept = Vec::with_capacity(config.retained_draws());
        for it in 1..=config.n_mcmc {
            self.step()?;
            if it > config.burn_in && (it - config.burn_in).is_multiple_of(config.thin) {
                kept.push(self.state.clone());
            }
        }
        Ok(kept)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad(a: &DMatrix<f64>, v: &[f64]) -> f64 {
    let j = v.len();
    let mut total = 0.0;
    for r in 0..j {
        let mut s = 0.0;
        for c in 0..j {
            s += a[(r, c)] * v[c];
        }
        total += v[r] * s;
    }
    total
}
