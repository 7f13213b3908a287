//! SNR sweeps: solve one configuration across a list of average-SNR
//! points and collect the per-point analytics used by the CLI tables
//! and the validation suite.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelModel;
use crate::dynamics::TransitionLaw;
use crate::lattice::{ActionSpace, AmiGrid, ConfigError, ModeSet, StateSpace};
use crate::onebit::{solve_onebit_k2, unique_action_search, OneBitError};
use crate::solver::{
    self, action_statistics, outage, policy_iteration, ActionStats, SolverError, SolverOptions,
};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    OneBit(#[from] OneBitError),
    #[error("one-bit belief feedback needs k_max = 2, got {0}")]
    BeliefNeedsKTwo(usize),
}

/// How much the transmitter learns from feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackModel {
    /// AMI reported alongside ACK/NACK: the full-information MDP.
    MultiBit,
    /// ACK/NACK only, belief MDP (k_max = 2).
    OneBitFull,
    /// ACK/NACK only, one fixed retransmission action.
    OneBitUnique,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub rate: f64,
    pub k_max: usize,
    pub t_i: usize,
    pub t_p: usize,
    pub mode_set: ModeSet,
    pub feedback: FeedbackModel,
    pub snr_db: Vec<f64>,
}

/// One solved sweep point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub eta: f64,
    pub p_out: f64,
    /// Conditional mode statistics; absent when the chain never visits a
    /// one-of-two-decoded state (the conditioning event has no mass).
    pub stats: Option<ActionStats>,
    /// Stationary mass of states recording a first-round acknowledgement.
    pub p_ack1: f64,
    pub iterations: usize,
    pub eta_conventional: f64,
    pub ergodic_capacity: f64,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Solves one sweep point.
pub fn solve_point(cfg: &SweepConfig, snr_db: f64, opts: &SolverOptions) -> Result<SweepPoint, SweepError> {
    let channel = ChannelModel::new(db_to_linear(snr_db))?;
    let grid = AmiGrid::new(cfg.rate, cfg.t_i)?;
    let space = StateSpace::new(cfg.k_max, grid)?;
    let actions = ActionSpace::new(cfg.mode_set, cfg.t_p)?;
    let law = TransitionLaw::build(space, actions, channel.clone());
    let ergodic = channel.ergodic_capacity();
    let conventional =
        solver::conventional_throughput(cfg.rate, cfg.k_max, &channel, cfg.t_i, opts)?;

    let (eta, p_out, stats, p_ack1, iterations) = match cfg.feedback {
        FeedbackModel::MultiBit => {
            let out = policy_iteration(&law, None, opts)?;
            let p_out = outage(&law, &out.mu, &out.policy_arms)?;
            let stats = action_statistics(&law, &out.mu, &out.policy).ok();
            let p_ack1 = solver::first_round_ack_mass(&law, &out.mu);
            (out.eta, p_out, stats, p_ack1, out.iterations)
        }
        FeedbackModel::OneBitFull => {
            if cfg.k_max != 2 {
                return Err(SweepError::BeliefNeedsKTwo(cfg.k_max));
            }
            let solved = solve_onebit_k2(&law, opts)?;
            let p_out = outage(&solved.model, &solved.output.mu, &solved.output.policy_arms)?;
            let p_ack1 = solved
                .model
                .states()
                .iter()
                .zip(solved.output.mu.iter())
                .filter(|(z, _)| {
                    use crate::onebit::{MsgPair, ObsState};
                    matches!(
                        z,
                        ObsState::FirstAck
                            | ObsState::Joint {
                                msg: MsgPair::AckAck | MsgPair::NackAck,
                                ..
                            }
                    )
                })
                .map(|(_, m)| m)
                .sum();
            (solved.eta, p_out, None, p_ack1, solved.output.iterations)
        }
        FeedbackModel::OneBitUnique => {
            let (eta, action) = unique_action_search(&law, opts)?;
            let policy = crate::onebit::unique_action_policy(&law, &action)
                .expect("search returns an admissible action");
            let mu = solver::stationary_distribution(&law, &policy, opts)?;
            let p_out = outage(&law, &mu, &policy)?;
            let actions_vec: Vec<_> = (0..policy.len())
                .map(|s| crate::solver::MdpModel::action(&law, s, policy[s] as usize))
                .collect();
            let stats = action_statistics(&law, &mu, &actions_vec).ok();
            let p_ack1 = solver::first_round_ack_mass(&law, &mu);
            (eta, p_out, stats, p_ack1, 0)
        }
    };
    Ok(SweepPoint {
        snr_db,
        eta,
        p_out,
        stats,
        p_ack1,
        iterations,
        eta_conventional: conventional,
        ergodic_capacity: ergodic,
    })
}

/// Runs every sweep point, in parallel, ordered by SNR in the output.
pub fn run_sweep(cfg: &SweepConfig, opts: &SolverOptions) -> Result<Vec<SweepPoint>, SweepError> {
    let mut dbs = cfg.snr_db.clone();
    dbs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dbs.par_iter()
        .map(|&db| solve_point(cfg, db, opts))
        .collect()
}

/// Average SNR (dB) at which a throughput curve first reaches `target`,
/// by linear interpolation between bracketing sweep points.
pub fn crossing_db(points: &[(f64, f64)], target: f64) -> Option<f64> {
    for w in points.windows(2) {
        let (d0, e0) = w[0];
        let (d1, e1) = w[1];
        if e0 < target && e1 >= target {
            return Some(d0 + (target - e0) * (d1 - d0) / (e1 - e0));
        }
    }
    points
        .first()
        .filter(|(_, e)| *e >= target)
        .map(|(d, _)| *d)
}

/// Uniform dB grid, inclusive of both ends.
pub fn db_range(from: f64, to: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut v = from;
    let n = ((to - from) / step).round() as usize;
    for i in 0..=n {
        v = from + i as f64 * step;
        out.push(v);
    }
    let _ = v;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_interpolates_linearly() {
        let pts = vec![(0.0, 1.0), (1.0, 2.0), (2.0, 4.0)];
        assert_eq!(crossing_db(&pts, 3.0), Some(1.5));
        assert_eq!(crossing_db(&pts, 0.5), Some(0.0));
        assert_eq!(crossing_db(&pts, 5.0), None);
    }

    #[test]
    fn db_range_includes_endpoints() {
        let g = db_range(0.0, 35.0, 0.5);
        assert_eq!(g.len(), 71);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 35.0);
    }

    #[test]
    fn sweep_point_solves_and_orders() {
        let cfg = SweepConfig {
            rate: 4.0,
            k_max: 2,
            t_i: 12,
            t_p: 5,
            mode_set: ModeSet::ScSet,
            feedback: FeedbackModel::MultiBit,
            snr_db: vec![20.0, 10.0],
        };
        let opts = SolverOptions::default();
        let pts = run_sweep(&cfg, &opts).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts[0].snr_db < pts[1].snr_db);
        for p in &pts {
            assert!(p.eta <= p.ergodic_capacity);
            assert!(p.eta >= p.eta_conventional - 1e-9);
            assert!((0.0..=1.0).contains(&p.p_out));
        }
    }
}
