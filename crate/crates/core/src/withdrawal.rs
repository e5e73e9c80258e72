//! Minimum-withdrawal claim solved by Picard iteration on an exactly
//! enumerated random-walk tree.
//!
//! The discounted account satisfies
//! `Y(t) = E[L ã(T) + ∫_t^T γ sup_{u≤s} Y(u) e^{-∫_u^s r} ds | F_t]`
//! where `ã(T) = e^{-∫_0^T r} a(T)` is the discounted annuity factor.
//! The tree is non-recombining because the supremum depends on the whole
//! prefix, so every node is a distinct Brownian history.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::path_rng;
use crate::market::{AnnuityTable, Measure, ShortRateModel, TimeGrid, DEFAULT_ANNUITY_INTERVALS};
use crate::stats::McEstimate;

/// Largest tree depth accepted by default (131 071 nodes).
pub const DEFAULT_DEPTH_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WithdrawalSpec {
    /// Withdrawal fraction of the running maximum, per year.
    pub gamma: f64,
    /// Guaranteed consumption rate of the terminal annuity.
    pub consumption: f64,
    /// Truncation horizon of the annuity factor.
    pub horizon: f64,
    pub maturity: f64,
}

impl WithdrawalSpec {
    /// `gamma = 0` is admitted as the delay-free limit.
    pub fn new(gamma: f64, consumption: f64, horizon: f64, maturity: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", "must be finite and >= 0"));
        }
        if !(consumption > 0.0 && consumption.is_finite()) {
            return Err(invalid("consumption", "must be > 0"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", "must be > 0"));
        }
        if !(maturity > 0.0 && maturity.is_finite()) {
            return Err(invalid("maturity", "must be > 0"));
        }
        Ok(Self {
            gamma,
            consumption,
            horizon,
            maturity,
        })
    }

    /// `γT`, the smallness parameter governing contraction.
    pub fn gamma_t(&self) -> f64 {
        self.gamma * self.maturity
    }
}

/// Rejects the variant whose terminal value locks the last withdrawal rate
/// into the annuity. Only the zero solution is known for it.
pub fn solve_locked_in(_spec: &WithdrawalSpec) -> Result<PicardSolution> {
    Err(Error::Unsupported(
        "locked-in final withdrawal: the only known solution is X = π = 0 and \
         it is not clear at the moment how one should derive a non-zero solution"
            .into(),
    ))
}

/// Symmetric random walk tree in heap order: node `i` has children
/// `2i + 1` (up) and `2i + 2` (down).
#[derive(Debug, Clone, PartialEq)]
pub struct WalkTree {
    depth: usize,
    grid: TimeGrid,
    pub state: Vec<f64>,
    pub rate: Vec<f64>,
    /// Trapezoid `∫_0^t r` along the node's prefix.
    pub integral: Vec<f64>,
    pub discount: Vec<f64>,
    /// Zero-coupon bond maturing at `T`.
    pub bond: Vec<f64>,
    /// Discounted annuity `ã(T)` per leaf, in leaf order.
    pub leaf_annuity: Vec<f64>,
    /// Largest flat-yield tail estimate over the leaves.
    pub annuity_tail: f64,
}

impl WalkTree {
    pub fn build(model: &ShortRateModel, spec: &WithdrawalSpec, depth: usize) -> Result<Self> {
        Self::build_with_cap(model, spec, depth, DEFAULT_DEPTH_CAP)
    }

    pub fn build_with_cap(
        model: &ShortRateModel,
        spec: &WithdrawalSpec,
        depth: usize,
        cap: usize,
    ) -> Result<Self> {
        if depth == 0 || depth > cap || cap > 40 {
            return Err(Error::TreeDepth { depth, cap });
        }
        let model = model.validated()?;
        let grid = TimeGrid::new(spec.maturity, depth)?;
        let dt = grid.dt();
        let jump = dt.sqrt();
        let size = (1usize << (depth + 1)) - 1;

        let mut state = vec![0.0; size];
        let mut rate = vec![0.0; size];
        let mut integral = vec![0.0; size];
        state[0] = model.r0;
        rate[0] = model.observed_rate(model.r0);
        for i in 0..(size >> 1) {
            for (child, dw) in [(2 * i + 1, jump), (2 * i + 2, -jump)] {
                state[child] = model.step(state[i], dt, dw, Measure::Q);
                rate[child] = model.observed_rate(state[child]);
                integral[child] = integral[i] + 0.5 * (rate[i] + rate[child]) * dt;
            }
        }
        let discount: Vec<f64> = integral.iter().map(|x| (-x).exp()).collect();

        let mut bond = vec![0.0; size];
        for k in 0..=depth {
            let tau = if k == depth {
                0.0
            } else {
                spec.maturity - grid.time(k)
            };
            let (ln_a, b) = model.affine(tau);
            for i in level_range(k) {
                bond[i] = (ln_a - b * rate[i]).exp();
            }
        }

        let table = AnnuityTable::new(&model, spec.horizon, DEFAULT_ANNUITY_INTERVALS)?;
        let mut annuity_tail: f64 = 0.0;
        let leaf_annuity = level_range(depth)
            .map(|i| {
                let a = table.eval(rate[i]);
                annuity_tail = annuity_tail.max(a.tail);
                discount[i] * a.value
            })
            .collect();

        Ok(Self {
            depth,
            grid,
            state,
            rate,
            integral,
            discount,
            bond,
            leaf_annuity,
            annuity_tail,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rate.is_empty()
    }

    /// Tree average of the leaf annuities, i.e. `E[ã(T)]` on the walk.
    pub fn mean_leaf_annuity(&self) -> f64 {
        crate::stats::sum(self.leaf_annuity.iter().copied()) / self.leaf_annuity.len() as f64
    }
}

/// Heap indices of the nodes at level `k`.
pub fn level_range(k: usize) -> Range<usize> {
    ((1usize << k) - 1)..((1usize << (k + 1)) - 1)
}

/// Level of heap index `i`.
pub fn level_of(i: usize) -> usize {
    (usize::BITS - 1 - (i + 1).leading_zeros()) as usize
}

/// One Picard iterate on the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardSolution {
    /// `Y^n` per node.
    pub values: Vec<f64>,
    /// Running supremum `Q^{n-1}` used to produce `values`.
    pub sup: Vec<f64>,
    /// `‖Y^k − Y^{k-1}‖_∞` for `k = 1..=iterations`.
    pub deltas: Vec<f64>,
    pub converged: bool,
}

impl PicardSolution {
    /// The trivial starting iterate `Y^0 ≡ 0`.
    pub fn zero(tree: &WalkTree) -> Self {
        Self {
            values: vec![0.0; tree.len()],
            sup: vec![0.0; tree.len()],
            deltas: Vec::new(),
            converged: false,
        }
    }

    pub fn root(&self) -> f64 {
        self.values[0]
    }

    pub fn iterations(&self) -> usize {
        self.deltas.len()
    }

    /// Ratio of the last two iteration deltas.
    pub fn contraction_ratio(&self) -> Option<f64> {
        match self.deltas.as_slice() {
            [.., a, b] if *a > 0.0 => Some(b / a),
            _ => None,
        }
    }

    /// Per-node rows `[node, level, t, r, discount, Y, Q]`.
    pub fn csv_rows<'a>(&'a self, tree: &'a WalkTree) -> impl Iterator<Item = [f64; 7]> + 'a {
        (0..tree.len()).map(move |i| {
            let k = level_of(i);
            [
                i as f64,
                k as f64,
                tree.grid.time(k),
                tree.rate[i],
                tree.discount[i],
                self.values[i],
                self.sup[i],
            ]
        })
    }
}

/// Running supremum `max_{u ≤ node} Y(u) e^{-∫_u^node r}` along every prefix.
pub fn running_sup(tree: &WalkTree, values: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; tree.len()];
    q[0] = values[0];
    for i in 1..tree.len() {
        let parent = (i - 1) / 2;
        let carried = q[parent] * (tree.integral[parent] - tree.integral[i]).exp();
        q[i] = values[i].max(carried);
    }
    q
}

/// Maps `Y^{n-1}` to `Y^n` by one backward sweep over the tree.
pub fn picard_step(
    tree: &WalkTree,
    prev: &PicardSolution,
    spec: &WithdrawalSpec,
) -> PicardSolution {
    let sup = running_sup(tree, &prev.values);
    let values = conditional_sweep(tree, &sup, spec);
    let delta = values
        .iter()
        .zip(&prev.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut deltas = prev.deltas.clone();
    deltas.push(delta);
    PicardSolution {
        values,
        sup,
        deltas,
        converged: false,
    }
}

/// `E[L ã + Σ_{j ≥ k} γ Q_j Δt | node]` with left-endpoint sums.
fn conditional_sweep(tree: &WalkTree, sup: &[f64], spec: &WithdrawalSpec) -> Vec<f64> {
    let dt = tree.grid.dt();
    let mut values = vec![0.0; tree.len()];
    for (v, a) in values[level_range(tree.depth)]
        .iter_mut()
        .zip(&tree.leaf_annuity)
    {
        *v = spec.consumption * a;
    }
    for k in (0..tree.depth).rev() {
        for i in level_range(k) {
            let mean = 0.5 * (values[2 * i + 1] + values[2 * i + 2]);
            values[i] = spec.gamma * sup[i] * dt + mean;
        }
    }
    values
}

/// Runs a fixed number of Picard steps from `Y^0 ≡ 0`.
pub fn picard_iterate(tree: &WalkTree, spec: &WithdrawalSpec, iterations: usize) -> PicardSolution {
    let mut sol = PicardSolution::zero(tree);
    for _ in 0..iterations {
        sol = picard_step(tree, &sol, spec);
    }
    sol
}

/// Iterates until the sup-norm delta drops below `tol`.
pub fn solve_picard(
    tree: &WalkTree,
    spec: &WithdrawalSpec,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(invalid("tol", "must be > 0"));
    }
    if max_iter == 0 {
        return Err(invalid("max_iter", "must be >= 1"));
    }
    let mut sol = PicardSolution::zero(tree);
    for _ in 0..max_iter {
        sol = picard_step(tree, &sol, spec);
        let last = sol.deltas[sol.deltas.len() - 1];
        if last < tol {
            sol.converged = true;
            return Ok(sol);
        }
        if !last.is_finite() {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: sol.iterations(),
        last_delta: sol.deltas.last().copied().unwrap_or(f64::NAN),
        ratio: sol.contraction_ratio().unwrap_or(f64::NAN),
        deltas: sol.deltas,
    })
}

/// `‖Φ(Y) − Y‖_∞` for the Picard map `Φ`.
pub fn fixed_point_residual(tree: &WalkTree, sol: &PicardSolution, spec: &WithdrawalSpec) -> f64 {
    let next = conditional_sweep(tree, &running_sup(tree, &sol.values), spec);
    next.iter()
        .zip(&sol.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Monte Carlo estimate of the root value after one or two Picard steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub estimate: McEstimate,
    pub iterations: usize,
    pub steps: usize,
}

/// Independent Monte Carlo cross-check of the tree root.
///
/// Outer paths use Gaussian increments on the same time grid as a tree of
/// depth `steps`. For two iterations the previous iterate
/// `Y^1(u) = L e^{-∫_0^u r} ∫_{T-u}^{T-u+H} P(τ; r(u)) dτ` is evaluated from
/// affine bond prices along each path, so no inner simulation is needed.
/// `budget` caps the number of bond-price evaluations.
#[allow(clippy::too_many_arguments)]
pub fn nested_mc_oracle(
    model: &ShortRateModel,
    spec: &WithdrawalSpec,
    steps: usize,
    paths: usize,
    iterations: usize,
    seed: u64,
    budget: u128,
) -> Result<OracleEstimate> {
    if !(1..=2).contains(&iterations) {
        return Err(Error::Unsupported(format!(
            "oracle supports 1 or 2 iterations, got {iterations}"
        )));
    }
    if paths < 2 {
        return Err(invalid("paths", "need at least 2"));
    }
    let model = model.validated()?;
    let grid = TimeGrid::new(spec.maturity, steps)?;
    let m = DEFAULT_ANNUITY_INTERVALS;
    let needed = paths as u128 * (steps as u128 + 1) * (m as u128 + 1);
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let dt = grid.dt();

    // Simpson nodes for the annuity seen from each grid time
    let h = spec.horizon / m as f64;
    let weights: Vec<f64> = (0..=m)
        .map(|k| {
            let w = match k {
                0 => 1.0,
                k if k == m => 1.0,
                k if k % 2 == 1 => 4.0,
                _ => 2.0,
            };
            w * h / 3.0
        })
        .collect();
    let affine: Vec<Vec<(f64, f64)>> = (0..=steps)
        .map(|j| {
            let lead = spec.maturity - grid.time(j);
            (0..=m).map(|k| model.affine(lead + k as f64 * h)).collect()
        })
        .collect();
    let forward_annuity = |j: usize, r: f64| -> f64 {
        affine[j]
            .iter()
            .zip(&weights)
            .map(|((la, b), w)| w * (la - b * r).exp())
            .sum::<f64>()
    };

    let normal = rand_distr::StandardNormal;
    let sd = dt.sqrt();
    let mut samples = Vec::with_capacity(paths);
    let mut y1 = vec![0.0; steps + 1];
    for p in 0..paths {
        let mut rng = path_rng(seed, p as u64);
        let mut state = model.r0;
        let mut r = model.observed_rate(state);
        let mut integral: f64 = 0.0;
        let mut integrals = Vec::with_capacity(steps + 1);
        integrals.push(0.0);
        for (j, y1_j) in y1.iter_mut().enumerate() {
            if iterations == 2 {
                *y1_j = spec.consumption * (-integral).exp() * forward_annuity(j, r);
            }
            if j == steps {
                break;
            }
            let z: f64 = rand::Rng::sample(&mut rng, normal);
            state = model.step(state, dt, sd * z, Measure::Q);
            let next = model.observed_rate(state);
            integral += 0.5 * (r + next) * dt;
            integrals.push(integral);
            r = next;
        }
        let terminal = spec.consumption * (-integral).exp() * forward_annuity(steps, r);
        let mut sample = terminal;
        if iterations == 2 {
            let mut q: f64 = 0.0;
            for j in 0..steps {
                q = if j == 0 {
                    y1[0]
                } else {
                    y1[j].max(q * (integrals[j - 1] - integrals[j]).exp())
                };
                sample += spec.gamma * q * dt;
            }
        }
        samples.push(sample);
    }
    Ok(OracleEstimate {
        estimate: McEstimate::from_samples(&samples),
        iterations,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heap_levels() {
        assert_eq!(level_range(0), 0..1);
        assert_eq!(level_range(3), 7..15);
        for i in 0..63 {
            assert!(level_range(level_of(i)).contains(&i));
        }
    }

    #[test]
    fn depth_guard() {
        let m = ShortRateModel::constant(0.05).unwrap();
        let s = WithdrawalSpec::new(0.05, 1.0, 20.0, 1.0).unwrap();
        assert!(matches!(
            WalkTree::build(&m, &s, 0),
            Err(Error::TreeDepth { .. })
        ));
        assert!(matches!(
            WalkTree::build(&m, &s, 17),
            Err(Error::TreeDepth { .. })
        ));
        assert_eq!(WalkTree::build(&m, &s, 1).unwrap().len(), 3);
    }

    #[test]
    fn zero_gamma_converges_in_one_step() {
        let m = ShortRateModel::cir(0.5, 0.04, 0.1, 0.04).unwrap();
        let s = WithdrawalSpec::new(0.0, 2.0, 20.0, 1.0).unwrap();
        let tree = WalkTree::build(&m, &s, 6).unwrap();
        let sol = solve_picard(&tree, &s, 1e-12, 5).unwrap();
        assert_eq!(sol.iterations(), 2);
        assert_eq!(sol.deltas[1], 0.0);
        assert!((sol.root() - 2.0 * tree.mean_leaf_annuity()).abs() < 1e-12);
    }
}
