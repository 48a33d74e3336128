//! Ready-made models: the toy systems used as oracles, the chemostat
//! predator-prey reduction and the epidemic model on its center manifold.

pub mod chemostat;
pub mod epidemic;
pub mod toy;
