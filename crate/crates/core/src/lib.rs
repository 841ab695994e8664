//! Learned step-size control for natural policy gradient ascent.
//!
//! A family of tasks (a contextual MDP) is sampled, Gaussian linear policies
//! are trained on each task with normalized natural gradient ascent, and the
//! step size of every update is treated as the action of a higher-level
//! decision process. That process is solved offline with fitted Q-iteration
//! over a pair of extremely randomized tree ensembles.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is a pure
//! function of its inputs and an explicit [`RngStream`]; IO, configuration,
//! parallel scheduling and the command line live in the `metastep` crate.
//!
//! Module map:
//! - [`policy`], [`mdp`]: Gaussian linear policies, rollouts, return estimates.
//! - [`env`]: Navigation2D, Minigolf, CartPole and CartPole swing-up families.
//! - [`gradient`]: GPOMDP gradients, Fisher-vector products, conjugate
//!   gradient, natural gradient and the normalized update.
//! - [`meta`]: meta-states, meta rewards and dataset generation.
//! - [`trees`]: extremely randomized regression trees.
//! - [`fqi`]: fitted Q-iteration with the clipped double-Q target.
//! - [`optim`]: fixed/decaying schedules, Adam, RMSprop and metagrad.
//! - [`eval`]: the shared learning loop used to compare step-size controllers.
//! - [`lipschitz`]: Lipschitz constants and an empirical return-bound check.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod env;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fqi;
pub mod gradient;
pub mod lipschitz;
pub mod math;
pub mod mdp;
pub mod meta;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod trees;

pub use error::{Error, Result};
pub use policy::PolicyParams;
pub use rng::RngStream;
