//! Training of per-view nonlinear maps and linear operators that agree on a
//! whitened, zero-mean shared latent matrix.
//!
//! The objective couples, for every view `q` and sample `l`, a matching term
//! `||u_l - B_q f_q(y_l)||^2` with a reconstruction penalty
//! `lambda * ||y_l - g_q(f_q(y_l))||^2`, under `(1/N) U U^T = I` and
//! `U 1 = 0`. Training alternates stochastic Adam steps on the network and
//! linear parameters with a closed-form Procrustes update of `U`.

mod config;
mod model;
mod objective;
mod procrustes;
mod train;

pub use config::{MapKind, TrainConfig};
pub use model::{model_init, ChannelScaler, NmcaModel};
pub use objective::{loss_and_grads, Gradients, LossBreakdown, Workspace};
pub use procrustes::{procrustes_update, whitened_update, ConstraintReport};
pub use train::{embed, reconstruct, run_nmca, theta_epoch, EpochRecord, ThetaOptimizer, TrainTrace};
