//! Average-reward policy iteration and stationary-chain analytics.
//!
//! Policy evaluation solves eta + h(s) = r(s, pi(s)) + sum_s' p(s,s') h(s')
//! with h anchored to zero at a special state that every policy visits,
//! by relative value iteration: the fixed-point sweep is cheap on the
//! sparse shared rows and the successive-difference bound dominates the
//! equation residual, so stopping at 1e-9 guarantees the same residual.
//! Improvement is a per-state argmax with a fixed deterministic
//! tie-breaking order (1P < 0P < TS < SC, then ascending p), which makes
//! runs reproducible bit for bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::TransitionLaw;
use crate::lattice::{Action, ActionSpace, AmiGrid, StateClass, Mode, ModeSet, StateSpace};

/// One sparse transition entry: local successor offset and probability.
/// The global successor index is the row's base offset plus `loc`.
#[derive(Debug, Clone, Copy)]
pub struct RowEntry {
    pub loc: u32,
    pub prob: f64,
}

/// Anything policy iteration can run on: the full-information law and
/// the one-bit observable model both implement this.
pub trait MdpModel: Sync {
    fn num_states(&self) -> usize;
    fn num_actions(&self, s: usize) -> usize;
    fn action(&self, s: usize, a: usize) -> Action;
    fn reward(&self, s: usize, a: usize) -> f64;
    /// Sparse row and the base offset its `loc` fields are relative to.
    fn row(&self, s: usize, a: usize) -> (&[RowEntry], u32);
    /// Anchor state for differential rewards.
    fn special_state(&self) -> usize;
    /// Expected packets abandoned when taking this action.
    fn drop_count(&self, s: usize, a: usize) -> f64;
    /// Expected packets acknowledged at the successor.
    fn deliver_count(&self, s: usize, a: usize) -> f64;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("{what} did not reach residual {tolerance} within {iterations} iterations (residual {residual})")]
    NoConvergence {
        what: &'static str,
        residual: f64,
        tolerance: f64,
        iterations: usize,
    },
    #[error("policy iteration still changing after {0} rounds")]
    PolicyCycling(usize),
    #[error("conditioning event has zero probability mass")]
    UndefinedConditional,
    #[error("no packets flow through the chain")]
    ZeroPacketFlow,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Residual bound for policy evaluation.
    pub eval_tol: f64,
    pub eval_max_iter: usize,
    /// Residual bound for the stationary distribution.
    pub stationary_tol: f64,
    pub stationary_max_iter: usize,
    /// Two actions within this of each other count as tied.
    pub tie_eps: f64,
    pub max_policy_rounds: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eval_tol: 1e-9,
            eval_max_iter: 400_000,
            stationary_tol: 1e-10,
            stationary_max_iter: 400_000,
            // Comfortably above the h noise floor (evaluation residual
            // times the chain's mixing factor), comfortably below the
            // 1e-6 optimality tolerances.
            tie_eps: 2e-7,
            max_policy_rounds: 50,
        }
    }
}

/// Result of solving one average-reward MDP.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    /// Optimal throughput in bits per channel use.
    pub eta: f64,
    /// Differential rewards, zero at the special state.
    pub h: Vec<f64>,
    /// Chosen action per state.
    pub policy: Vec<Action>,
    /// Internal arm index per state.
    pub policy_arms: Vec<u16>,
    /// Stationary distribution of the induced chain.
    pub mu: Vec<f64>,
    /// Improvement rounds that changed the policy; the final confirming
    /// pass is not counted.
    pub iterations: usize,
}

fn sweep<M: MdpModel>(model: &M, policy: &[u16], h: &[f64], v: &mut [f64]) {
    for s in 0..model.num_states() {
        let a = policy[s] as usize;
        let (entries, off) = model.row(s, a);
        let mut acc = model.reward(s, a);
        for e in entries {
            acc += e.prob * h[(off + e.loc) as usize];
        }
        v[s] = acc;
    }
}

/// Models up to this size fall back to a direct dense solve when the
/// fixed-point iteration stalls; above it the memory and cubic cost stop
/// paying off.
const DENSE_EVAL_LIMIT: usize = 2000;

/// Gaussian elimination with partial pivoting; `a` is row-major dim*dim.
fn gaussian_solve(a: &mut [f64], b: &mut [f64], dim: usize) -> Result<(), SolverError> {
    for col in 0..dim {
        let mut pivot = col;
        let mut best = a[col * dim + col].abs();
        for r in col + 1..dim {
            let v = a[r * dim + col].abs();
            if v > best {
                best = v;
                pivot = r;
            }
        }
        if best < 1e-13 {
            return Err(SolverError::NoConvergence {
                what: "direct policy evaluation (singular system)",
                residual: best,
                tolerance: 1e-13,
                iterations: 0,
            });
        }
        if pivot != col {
            for c in col..dim {
                a.swap(col * dim + c, pivot * dim + c);
            }
            b.swap(col, pivot);
        }
        let inv = 1.0 / a[col * dim + col];
        for r in col + 1..dim {
            let factor = a[r * dim + col] * inv;
            if factor == 0.0 {
                continue;
            }
            a[r * dim + col] = 0.0;
            for c in col + 1..dim {
                a[r * dim + c] -= factor * a[col * dim + c];
            }
            b[r] -= factor * b[col];
        }
    }
    for col in (0..dim).rev() {
        let mut acc = b[col];
        for c in col + 1..dim {
            acc -= a[col * dim + c] * b[c];
        }
        b[col] = acc / a[col * dim + col];
    }
    Ok(())
}

/// Solves the evaluation equations directly: unknowns h(s) and eta, one
/// equation per state plus the anchor h(special) = 0. Handles chains
/// whose fixed-point iteration mixes too slowly (escape probabilities
/// near the floating-point floor make them nearly reducible).
fn dense_evaluate<M: MdpModel>(
    model: &M,
    policy: &[u16],
    h: &mut Vec<f64>,
    opts: &SolverOptions,
) -> Result<f64, SolverError> {
    let n = model.num_states();
    let special = model.special_state();
    let dim = n + 1;
    let mut a = vec![0.0f64; dim * dim];
    let mut b = vec![0.0f64; dim];
    for s in 0..n {
        let row = &mut a[s * dim..(s + 1) * dim];
        row[s] += 1.0;
        row[n] = 1.0;
        let (entries, off) = model.row(s, policy[s] as usize);
        for e in entries {
            row[(off + e.loc) as usize] -= e.prob;
        }
        b[s] = model.reward(s, policy[s] as usize);
    }
    a[n * dim + special] = 1.0;
    b[n] = 0.0;
    gaussian_solve(&mut a, &mut b, dim)?;
    let eta = b[n];
    h.clear();
    h.extend_from_slice(&b[..n]);
    let mut v = vec![0.0; n];
    sweep(model, policy, h, &mut v);
    let residual = (0..n)
        .map(|s| (v[s] - eta - h[s]).abs())
        .fold(0.0, f64::max);
    // Nearly reducible chains carry huge differential rewards; the
    // attainable absolute residual scales with them.
    let span = h.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let bound = opts.eval_tol.max(1e-12 * span);
    if residual > bound {
        return Err(SolverError::NoConvergence {
            what: "direct policy evaluation",
            residual,
            tolerance: bound,
            iterations: 1,
        });
    }
    Ok(eta)
}

/// Average and differential rewards of a fixed policy.
///
/// `h` carries the starting guess in and the solution out, so repeated
/// evaluations inside policy iteration warm-start from the previous one.
/// Relative value iteration does the work; small models whose chain
/// mixes too slowly for it fall back to a direct solve.
pub fn evaluate_policy_into<M: MdpModel>(
    model: &M,
    policy: &[u16],
    h: &mut Vec<f64>,
    opts: &SolverOptions,
) -> Result<f64, SolverError> {
    match rvi_evaluate(model, policy, h, opts) {
        Ok(eta) => Ok(eta),
        Err(err) if model.num_states() <= DENSE_EVAL_LIMIT => {
            dense_evaluate(model, policy, h, opts).map_err(|_| err)
        }
        Err(err) => Err(err),
    }
}

fn rvi_evaluate<M: MdpModel>(
    model: &M,
    policy: &[u16],
    h: &mut Vec<f64>,
    opts: &SolverOptions,
) -> Result<f64, SolverError> {
    let n = model.num_states();
    h.resize(n, 0.0);
    let special = model.special_state();
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut checkpoint = f64::INFINITY;
    for it in 0..opts.eval_max_iter {
        sweep(model, policy, h, &mut v);
        let eta = v[special];
        residual = 0.0;
        for s in 0..n {
            let d = (v[s] - eta - h[s]).abs();
            if d > residual {
                residual = d;
            }
        }
        // A full update is one step of relative value iteration; once
        // the step size is inside tolerance, the fixed-point residual of
        // the updated h is no larger.
        if residual <= opts.eval_tol {
            for s in 0..n {
                h[s] = v[s] - eta;
            }
            return Ok(eta);
        }
        // Late-stage damping breaks oscillation on nearly periodic
        // chains without changing the fixed point.
        if it < 20_000 {
            for s in 0..n {
                h[s] = v[s] - eta;
            }
        } else {
            for s in 0..n {
                h[s] = 0.5 * h[s] + 0.5 * (v[s] - eta);
            }
        }
        // A residual that stops shrinking signals a chain whose gain is
        // not constant across states (possible when an escape
        // probability underflows to zero); the equations then have no
        // solution and more sweeps cannot help.
        if it % 5000 == 4999 {
            if residual > 1e3 * opts.eval_tol && residual > 0.999 * checkpoint {
                return Err(SolverError::NoConvergence {
                    what: "policy evaluation (stalled)",
                    residual,
                    tolerance: opts.eval_tol,
                    iterations: it + 1,
                });
            }
            checkpoint = residual;
        }
    }
    Err(SolverError::NoConvergence {
        what: "policy evaluation",
        residual,
        tolerance: opts.eval_tol,
        iterations: opts.eval_max_iter,
    })
}

/// Discounted state values v = r + gamma P v by value iteration, shifted
/// to zero at the special state.
///
/// Unlike the average-reward equations this system is solvable for every
/// policy, including ones whose chain breaks into classes with different
/// gains because some escape probability underflowed to zero. Used only
/// to steer policy improvement past such intermediate policies; final
/// answers always come from the exact average-reward evaluation.
fn discounted_values_into<M: MdpModel>(
    model: &M,
    policy: &[u16],
    h: &mut Vec<f64>,
    gamma: f64,
) {
    let n = model.num_states();
    h.clear();
    h.resize(n, 0.0);
    let mut v = vec![0.0; n];
    for _ in 0..40_000 {
        let mut diff = 0.0f64;
        for s in 0..n {
            let a = policy[s] as usize;
            let (entries, off) = model.row(s, a);
            let mut acc = model.reward(s, a);
            for e in entries {
                acc += gamma * e.prob * h[(off + e.loc) as usize];
            }
            v[s] = acc;
            diff = diff.max((v[s] - h[s]).abs());
        }
        std::mem::swap(h, &mut v);
        if diff <= 1e-10 {
            break;
        }
    }
    let anchor = h[model.special_state()];
    for x in h.iter_mut() {
        *x -= anchor;
    }
}

/// Convenience wrapper starting from h = 0.
pub fn evaluate_policy<M: MdpModel>(
    model: &M,
    policy: &[u16],
    opts: &SolverOptions,
) -> Result<(f64, Vec<f64>), SolverError> {
    let mut h = Vec::new();
    let eta = evaluate_policy_into(model, policy, &mut h, opts)?;
    Ok((eta, h))
}

/// Greedy policy against differential rewards h, deterministic ties.
pub fn improve_policy<M: MdpModel>(model: &M, h: &[f64], opts: &SolverOptions) -> Vec<u16> {
    improve_with_discount(model, h, 1.0, opts)
}

fn improve_with_discount<M: MdpModel>(
    model: &M,
    h: &[f64],
    gamma: f64,
    opts: &SolverOptions,
) -> Vec<u16> {
    (0..model.num_states())
        .into_par_iter()
        .map(|s| {
            let mut best = 0u16;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..model.num_actions(s) {
                let (entries, off) = model.row(s, a);
                let mut q = model.reward(s, a);
                for e in entries {
                    q += gamma * e.prob * h[(off + e.loc) as usize];
                }
                if q > best_q + opts.tie_eps {
                    best = a as u16;
                    best_q = q;
                }
            }
            best
        })
        .collect()
}

/// Two-step policy iteration from an initial policy (all-1P when none is
/// given; arm 0 is 1P in every state by construction).
pub fn policy_iteration<M: MdpModel>(
    model: &M,
    initial: Option<Vec<u16>>,
    opts: &SolverOptions,
) -> Result<SolveOutput, SolverError> {
    let n = model.num_states();
    let mut policy = initial.unwrap_or_else(|| vec![0; n]);
    assert_eq!(policy.len(), n);
    let mut h = Vec::new();
    let mut iterations = 0;
    let eta = loop {
        let evaluated = evaluate_policy_into(model, &policy, &mut h, opts);
        let next = match &evaluated {
            Ok(_) => improve_policy(model, &h, opts),
            // An intermediate policy can wall off part of the state
            // space behind escape probabilities at or below the
            // floating-point floor; its average-reward equations are
            // then unsolvable. Discounted policy iteration, which
            // terminates for any chain structure, routes the walled-off
            // states back toward the better-earning class; the exact
            // evaluation then resumes. Returned solutions always come
            // from an exactly evaluated policy.
            Err(SolverError::NoConvergence { .. }) => {
                let mut steered = policy.clone();
                for _ in 0..opts.max_policy_rounds {
                    discounted_values_into(model, &steered, &mut h, 0.999);
                    let dnext = improve_with_discount(model, &h, 0.999, opts);
                    if dnext == steered {
                        break;
                    }
                    steered = dnext;
                }
                h.clear();
                steered
            }
            Err(e) => return Err(e.clone()),
        };
        if next == policy {
            break evaluated?;
        }
        iterations += 1;
        if iterations >= opts.max_policy_rounds {
            return Err(SolverError::PolicyCycling(iterations));
        }
        policy = next;
    };
    let mu = stationary_distribution(model, &policy, opts)?;
    let actions = (0..n)
        .map(|s| model.action(s, policy[s] as usize))
        .collect();
    Ok(SolveOutput {
        eta,
        h,
        policy: actions,
        policy_arms: policy,
        mu,
        iterations,
    })
}

/// Left fixed point of the induced kernel: power iteration, with a
/// direct solve as the fallback for small slow-mixing chains.
pub fn stationary_distribution<M: MdpModel>(
    model: &M,
    policy: &[u16],
    opts: &SolverOptions,
) -> Result<Vec<f64>, SolverError> {
    match power_iteration(model, policy, opts) {
        Ok(mu) => Ok(mu),
        Err(err) if model.num_states() <= DENSE_EVAL_LIMIT => {
            dense_stationary(model, policy, opts).map_err(|_| err)
        }
        Err(err) => Err(err),
    }
}

fn power_iteration<M: MdpModel>(
    model: &M,
    policy: &[u16],
    opts: &SolverOptions,
) -> Result<Vec<f64>, SolverError> {
    let n = model.num_states();
    let mut mu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut checkpoint = f64::INFINITY;
    for it in 0..opts.stationary_max_iter {
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..n {
            let m = mu[s];
            if m == 0.0 {
                continue;
            }
            let (entries, off) = model.row(s, policy[s] as usize);
            for e in entries {
                next[(off + e.loc) as usize] += m * e.prob;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = mu
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if it >= 20_000 {
            // Damped update for nearly periodic chains.
            for s in 0..n {
                next[s] = 0.5 * next[s] + 0.5 * mu[s];
            }
        }
        std::mem::swap(&mut mu, &mut next);
        if residual <= opts.stationary_tol {
            return Ok(mu);
        }
        if it % 5000 == 4999 {
            if residual > 1e3 * opts.stationary_tol && residual > 0.999 * checkpoint {
                break;
            }
            checkpoint = residual;
        }
    }
    Err(SolverError::NoConvergence {
        what: "stationary distribution",
        residual,
        tolerance: opts.stationary_tol,
        iterations: opts.stationary_max_iter,
    })
}

fn dense_stationary<M: MdpModel>(
    model: &M,
    policy: &[u16],
    opts: &SolverOptions,
) -> Result<Vec<f64>, SolverError> {
    let n = model.num_states();
    let mut a = vec![0.0f64; n * n];
    let mut b = vec![0.0f64; n];
    // Columns of the kernel transposed, minus the identity; the last
    // equation is replaced by the normalization.
    for s in 0..n {
        let (entries, off) = model.row(s, policy[s] as usize);
        for e in entries {
            let t = (off + e.loc) as usize;
            if t < n - 1 {
                a[t * n + s] += e.prob;
            }
        }
        if s < n - 1 {
            a[s * n + s] -= 1.0;
        }
        a[(n - 1) * n + s] = 1.0;
    }
    b[n - 1] = 1.0;
    gaussian_solve(&mut a, &mut b, n)?;
    for x in b.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let total: f64 = b.iter().sum();
    for x in b.iter_mut() {
        *x /= total;
    }
    // Verify the fixed point.
    let mut pushed = vec![0.0; n];
    for s in 0..n {
        let (entries, off) = model.row(s, policy[s] as usize);
        for e in entries {
            pushed[(off + e.loc) as usize] += b[s] * e.prob;
        }
    }
    let residual = pushed
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if residual > opts.stationary_tol.max(1e-12) {
        return Err(SolverError::NoConvergence {
            what: "direct stationary solve",
            residual,
            tolerance: opts.stationary_tol,
            iterations: 1,
        });
    }
    Ok(b)
}

/// Largest violation of the optimality equations at (eta, h).
pub fn bellman_residual<M: MdpModel>(model: &M, eta: f64, h: &[f64]) -> f64 {
    (0..model.num_states())
        .into_par_iter()
        .map(|s| {
            let mut best = f64::NEG_INFINITY;
            for a in 0..model.num_actions(s) {
                let (entries, off) = model.row(s, a);
                let mut q = model.reward(s, a);
                for e in entries {
                    q += e.prob * h[(off + e.loc) as usize];
                }
                best = best.max(q);
            }
            (best - eta - h[s]).abs()
        })
        .reduce(|| 0.0, f64::max)
}

/// Mode-choice frequencies conditioned on a joint round having decoded
/// exactly one packet, plus the unconditional chance of seeing a packet
/// acknowledged in its first transmission round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionStats {
    pub p_1p2: f64,
    pub p_sc: f64,
    pub p_ts: f64,
    pub p_drop: f64,
    pub p_ack1: f64,
    /// Mass of the conditioning event.
    pub mass: f64,
}

/// Stationary probability that the current state records a packet
/// acknowledged on its first transmission round. Tends to one as the
/// average SNR grows; the conditional statistics do not need it to be
/// defined, so it is computable even when no joint state is reachable.
pub fn first_round_ack_mass(law: &TransitionLaw, mu: &[f64]) -> f64 {
    let space = law.space();
    let grid = space.grid();
    let mut p_ack1 = 0.0;
    for (i, state) in space.iter() {
        if (state.k_hol == 1 && grid.is_success(state.c_hol as usize))
            || (state.k_next == 1 && grid.is_success(state.c_next as usize))
        {
            p_ack1 += mu[i];
        }
    }
    p_ack1
}

/// Post-processes a stationary distribution into action statistics.
pub fn action_statistics(
    law: &TransitionLaw,
    mu: &[f64],
    policy: &[Action],
) -> Result<ActionStats, SolverError> {
    let space = law.space();
    let mut mass = 0.0;
    let mut by_mode = [0.0f64; 4];
    for (i, state) in space.iter() {
        if space.classify(&state) == StateClass::AckNack {
            mass += mu[i];
            let slot = match policy[i].mode {
                Mode::OneP => 0,
                Mode::ZeroP => 1,
                Mode::Ts => 2,
                Mode::Sc => 3,
            };
            by_mode[slot] += mu[i];
        }
    }
    if mass <= 0.0 {
        return Err(SolverError::UndefinedConditional);
    }
    Ok(ActionStats {
        p_1p2: by_mode[0] / mass,
        p_drop: by_mode[1] / mass,
        p_ts: by_mode[2] / mass,
        p_sc: by_mode[3] / mass,
        p_ack1: first_round_ack_mass(law, mu),
        mass,
    })
}

/// Long-run fraction of admitted packets that are never delivered.
pub fn outage<M: MdpModel>(model: &M, mu: &[f64], policy: &[u16]) -> Result<f64, SolverError> {
    let mut drops = 0.0;
    let mut delivers = 0.0;
    for s in 0..model.num_states() {
        let a = policy[s] as usize;
        drops += mu[s] * model.drop_count(s, a);
        delivers += mu[s] * model.deliver_count(s, a);
    }
    let flow = drops + delivers;
    if flow <= 1e-12 {
        return Err(SolverError::ZeroPacketFlow);
    }
    Ok(drops / flow)
}

/// Throughput of conventional HARQ: the all-1P policy evaluated exactly.
pub fn conventional_throughput(
    rate: f64,
    k_max: usize,
    channel: &crate::channel::ChannelModel,
    t_i: usize,
    opts: &SolverOptions,
) -> Result<f64, SolverError> {
    let grid = AmiGrid::new(rate, t_i).expect("validated configuration");
    let space = StateSpace::new(k_max, grid).expect("validated configuration");
    let actions = ActionSpace::new(ModeSet::OnePOnly, 3).expect("t_p floor");
    let law = TransitionLaw::build(space, actions, channel.clone());
    let policy = vec![0u16; law.num_states()];
    let (eta, _) = evaluate_policy(&law, &policy, opts)?;
    Ok(eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::lattice::{ActionSpace, AmiGrid, ModeSet, StateSpace};

    /// A two-state chain with fixed rewards, for solver plumbing tests.
    struct Toy {
        rows: Vec<Vec<(Vec<RowEntry>, f64)>>,
    }

    impl MdpModel for Toy {
        fn num_states(&self) -> usize {
            self.rows.len()
        }
        fn num_actions(&self, s: usize) -> usize {
            self.rows[s].len()
        }
        fn action(&self, _: usize, a: usize) -> Action {
            if a == 0 {
                Action::ONE_P
            } else {
                Action::ZERO_P
            }
        }
        fn reward(&self, s: usize, a: usize) -> f64 {
            self.rows[s][a].1
        }
        fn row(&self, s: usize, a: usize) -> (&[RowEntry], u32) {
            (&self.rows[s][a].0, 0)
        }
        fn special_state(&self) -> usize {
            0
        }
        fn drop_count(&self, _: usize, _: usize) -> f64 {
            0.0
        }
        fn deliver_count(&self, s: usize, a: usize) -> f64 {
            self.rows[s][a].1
        }
    }

    fn entry(loc: u32, prob: f64) -> RowEntry {
        RowEntry { loc, prob }
    }

    #[test]
    fn degenerate_single_state_chain() {
        let toy = Toy {
            rows: vec![vec![(vec![entry(0, 1.0)], 2.5)]],
        };
        let opts = SolverOptions::default();
        let (eta, h) = evaluate_policy(&toy, &[0], &opts).unwrap();
        assert!((eta - 2.5).abs() < 1e-9);
        assert!(h[0].abs() < 1e-9);
    }

    #[test]
    fn two_state_symmetric_chain_stationary() {
        let toy = Toy {
            rows: vec![
                vec![(vec![entry(0, 0.5), entry(1, 0.5)], 1.0)],
                vec![(vec![entry(0, 0.5), entry(1, 0.5)], 0.0)],
            ],
        };
        let opts = SolverOptions::default();
        let mu = stationary_distribution(&toy, &[0, 0], &opts).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-9 && (mu[1] - 0.5).abs() < 1e-9);
        let (eta, _) = evaluate_policy(&toy, &[0, 0], &opts).unwrap();
        assert!((eta - 0.5).abs() < 1e-8);
    }

    #[test]
    fn improvement_is_myopic_under_zero_h() {
        // State 0: action 0 pays 1, action 1 pays 2. Zero h means pure
        // one-step reward comparison.
        let toy = Toy {
            rows: vec![vec![
                (vec![entry(0, 1.0)], 1.0),
                (vec![entry(0, 1.0)], 2.0),
            ]],
        };
        let opts = SolverOptions::default();
        let pol = improve_policy(&toy, &[0.0], &opts);
        assert_eq!(pol, vec![1]);
        // Shifting h by a constant changes nothing.
        let pol2 = improve_policy(&toy, &[123.456], &opts);
        assert_eq!(pol2, pol);
    }

    fn law(k: usize, t_i: usize, t_p: usize, mode_set: ModeSet, g: f64, r: f64) -> TransitionLaw {
        let grid = AmiGrid::new(r, t_i).unwrap();
        let space = StateSpace::new(k, grid).unwrap();
        let actions = ActionSpace::new(mode_set, t_p).unwrap();
        TransitionLaw::build(space, actions, ChannelModel::new(g).unwrap())
    }

    #[test]
    fn conventional_k1_matches_closed_form() {
        // eta = R * exp(-(2^R - 1)/g); R = 1, g = 1.
        let opts = SolverOptions::default();
        let ch = ChannelModel::new(1.0).unwrap();
        let eta = conventional_throughput(1.0, 1, &ch, 512, &opts).unwrap();
        let exact = (-1.0f64).exp();
        assert!((eta - exact).abs() < 5e-3, "eta={eta} exact={exact}");
    }

    #[test]
    fn conventional_multi_round_matches_renewal_reward() {
        // Independent oracle: distribution of the accumulated capacity
        // by grid convolution, then renewal-reward.
        let rate = 2.0;
        let g = 3.0;
        let k = 3;
        let ch = ChannelModel::new(g).unwrap();
        let n = 6000;
        let dx = rate / n as f64;
        // cdf_j[i] = Pr{sum of j capacities <= i*dx), on [0, rate].
        let cap_cdf = |x: f64| ch.cdf_raw(x.exp2() - 1.0);
        let mut cdf: Vec<f64> = (0..=n).map(|i| cap_cdf(i as f64 * dx)).collect();
        let mut below = vec![cdf[n]];
        for _ in 1..k {
            // P{S_{j+1} <= x} = int_0^x P{S_j <= x-t} f_C(t) dt via
            // Stieltjes sum against the capacity distribution.
            let next: Vec<f64> = (0..=n)
                .map(|i| {
                    let mut acc = 0.0;
                    for t in 0..i {
                        let w = cap_cdf((t + 1) as f64 * dx) - cap_cdf(t as f64 * dx);
                        acc += w * cdf[i - t - 1];
                    }
                    acc
                })
                .collect();
            cdf = next;
            below.push(cdf[n]);
        }
        let succ = 1.0 - below[k - 1];
        let expected_rounds = 1.0 + below[..k - 1].iter().sum::<f64>();
        let oracle = rate * succ / expected_rounds;

        let opts = SolverOptions::default();
        let eta = conventional_throughput(rate, k, &ch, 64, &opts).unwrap();
        assert!(
            (eta - oracle).abs() < 0.01,
            "mdp eta {eta} vs renewal oracle {oracle}"
        );
    }

    #[test]
    fn policy_iteration_improves_and_satisfies_bellman() {
        let law = law(2, 16, 8, ModeSet::ScSet, 40.0, 4.0);
        let opts = SolverOptions::default();
        let out = policy_iteration(&law, None, &opts).unwrap();
        let conv = {
            let policy = vec![0u16; law.num_states()];
            evaluate_policy(&law, &policy, &opts).unwrap().0
        };
        assert!(out.eta >= conv - 1e-9, "optimal {} conventional {conv}", out.eta);
        assert!(bellman_residual(&law, out.eta, &out.h) <= 1e-6);
        assert!(out.iterations <= 6, "iterations {}", out.iterations);

        // Ergodic identity: eta equals the mu-weighted one-step reward.
        let mut mixed = 0.0;
        for s in 0..law.num_states() {
            mixed += out.mu[s] * law.reward(s, out.policy_arms[s] as usize);
        }
        assert!((mixed - out.eta).abs() < 1e-6);

        // mu is a distribution and a fixed point.
        let total: f64 = out.mu.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let mut pushed = vec![0.0; law.num_states()];
        for s in 0..law.num_states() {
            let (entries, off) = law.row(s, out.policy_arms[s] as usize);
            for e in entries {
                pushed[(off + e.loc) as usize] += out.mu[s] * e.prob;
            }
        }
        for s in 0..law.num_states() {
            assert!((pushed[s] - out.mu[s]).abs() < 1e-9);
        }
    }

    #[test]
    fn one_p_mode_set_needs_no_improvement() {
        let law = law(2, 16, 3, ModeSet::OnePOnly, 10.0, 4.0);
        let opts = SolverOptions::default();
        let out = policy_iteration(&law, None, &opts).unwrap();
        assert_eq!(out.iterations, 0);
        let (eta, _) = evaluate_policy(&law, &vec![0u16; law.num_states()], &opts).unwrap();
        assert!((out.eta - eta).abs() < 1e-12);
    }

    #[test]
    fn outage_of_conventional_k1_is_closed_form() {
        let law = law(1, 32, 3, ModeSet::OnePOnly, 1.0, 1.0);
        let opts = SolverOptions::default();
        let out = policy_iteration(&law, None, &opts).unwrap();
        let p_out = outage(&law, &out.mu, &out.policy_arms).unwrap();
        // P_out = F(2^R - 1) = 1 - e^{-1}.
        let exact = 1.0 - (-1.0f64).exp();
        assert!((p_out - exact).abs() < 1e-6, "p_out {p_out} exact {exact}");
        // Accounting identity: deliveries per block times R equal eta.
        let mut delivers = 0.0;
        for s in 0..law.num_states() {
            delivers += out.mu[s] * law.deliver_count(s, out.policy_arms[s] as usize);
        }
        assert!((delivers * 1.0 - out.eta).abs() < 1e-6);
    }

    #[test]
    fn action_statistics_partition_and_errors() {
        let opts = SolverOptions::default();
        let all = law(2, 12, 6, ModeSet::All, 30.0, 4.0);
        let out = policy_iteration(&all, None, &opts).unwrap();
        let stats = action_statistics(&all, &out.mu, &out.policy).unwrap();
        let total = stats.p_1p2 + stats.p_sc + stats.p_ts + stats.p_drop;
        assert!((total - 1.0).abs() < 1e-9);
        assert!(stats.p_ack1 > 0.0 && stats.p_ack1 < 1.0);

        // Conventional chains never visit joint states: conditioning is
        // undefined.
        let conv = law(2, 12, 3, ModeSet::OnePOnly, 30.0, 4.0);
        let out = policy_iteration(&conv, None, &opts).unwrap();
        assert!(matches!(
            action_statistics(&conv, &out.mu, &out.policy),
            Err(SolverError::UndefinedConditional)
        ));
    }

    #[test]
    fn mode_set_monotonicity() {
        let opts = SolverOptions::default();
        for g in [6.0, 25.0, 80.0] {
            let one = policy_iteration(&law(2, 12, 6, ModeSet::OnePOnly, g, 4.0), None, &opts)
                .unwrap()
                .eta;
            let ts = policy_iteration(&law(2, 12, 6, ModeSet::TsSet, g, 4.0), None, &opts)
                .unwrap()
                .eta;
            let sc = policy_iteration(&law(2, 12, 6, ModeSet::ScSet, g, 4.0), None, &opts)
                .unwrap()
                .eta;
            assert!(ts >= one - 1e-9 && sc >= one - 1e-9);
        }
    }
}
