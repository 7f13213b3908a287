//! Multi-packet HARQ throughput optimization over Rayleigh block fading.
//!
//! A transmitter may let two packets share one channel block, either by
//! time sharing (TS) or superposition coding (SC), instead of always
//! dedicating the block to the head-of-line packet (1P) or abandoning it
//! (0P). With accumulated-mutual-information feedback the control problem
//! is a finite average-reward Markov decision process; with plain
//! ACK/NACK feedback it becomes a partially observed problem handled
//! through closed-form belief densities (truncation depth 2) or a
//! unique-action exhaustive search (any depth).
//!
//! Module map:
//! - [`channel`]: Rayleigh SNR law, Gaussian-input capacity, ergodic capacity
//! - [`lattice`]: AMI and encoding-parameter grids, state/action enumeration
//! - [`dynamics`]: normalization, AMI update kernels, exact transition rows
//! - [`solver`]: average-reward policy iteration and chain analytics
//! - [`onebit`]: ACK/NACK-only optimization (belief MDP and unique action)
//! - [`montecarlo`]: link-level simulation with continuous AMI
//! - [`sweep`]: SNR sweeps shared by the CLI and the validation suite

pub mod channel;
pub mod dynamics;
pub mod lattice;
pub mod montecarlo;
pub mod onebit;
mod quad;
pub mod solver;
pub mod sweep;

pub use channel::ChannelModel;
pub use dynamics::{PendingConfig, TransitionLaw, TransitionRow};
pub use lattice::{Action, ActionSpace, AmiGrid, Mode, ModeSet, State, StateSpace};
pub use montecarlo::{PolicySource, SimConfig, SimReport};
pub use onebit::{Belief, BeliefCase, ObservablePolicy};
pub use solver::{MdpModel, SolveOutput, SolverOptions};
