//! Data-driven synchronization of continuous-time linear multiagent systems.
//!
//! Agents are identified only through recorded trajectories. Row-data
//! matrices built from piecewise constant persistently exciting experiments
//! replace the plant model in the synchronization-error dynamics, in the
//! gain synthesis programs and in the regulator equations of heterogeneous
//! networks.

pub mod certificate;
pub mod closedloop;
pub mod datarep;
pub mod error;
pub mod hetero;
pub mod linalg;
pub mod lmi;
pub mod lti;
pub mod oracle;
pub mod scenario;
pub mod topology;

pub use error::{Error, Result};
