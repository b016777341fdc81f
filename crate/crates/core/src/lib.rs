//! Molecular-dynamics laboratory for measuring how long neural-network force fields stay
//! stable, and whether sharpness-aware training lengthens that time.
//!
//! * [`simcore`]: periodic system, neighbor lists, NVE and Nosé-Hoover integration
//! * [`oracle`]: Lennard-Jones ground truth and dataset generation
//! * [`nnff`]: descriptor + MLP force field with exact force-matching gradients
//! * [`train`]: Adam, sharpness-aware Adam, plateau scheduler, training loop
//! * [`probes`]: sharpness estimation and loss-surface scans
//! * [`fidelity`]: time-to-failure runs, outlier monitoring and power-law fits
//! * [`pardomain`]: spatial domain decomposition with ghost exchange

pub mod error;
pub mod fidelity;
pub mod nnff;
pub mod oracle;
pub mod pardomain;
pub mod probes;
pub mod seeds;
pub mod simcore;
pub mod train;

pub use error::{Error, Result};
