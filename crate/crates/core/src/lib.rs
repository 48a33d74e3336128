//! Relaxation oscillations of planar slow-fast systems
//! `a' = eps f + b h`, `b' = b g`: heteroclinic families of the limiting
//! system, the characteristic functions chi and lambda, candidate cycles and
//! their verification on the eps > 0 flow.

pub mod analysis;
pub mod characteristics;
pub mod error;
pub mod heteroclinic;
pub mod integrator;
pub mod model;
pub mod models;
pub mod orbit;
pub mod quadrature;
pub mod roots;
pub mod verification;

pub use analysis::{
    find_candidates, scan_chi, Analyzer, CandidateOptions, CandidateReport, CandidateSummary, CycleCandidate, Scan,
    ScanPoint, SingularCycle, Stability,
};
pub use characteristics::{CharacteristicValues, EndpointData, LambdaForm};
pub use error::{Error, Result};
pub use heteroclinic::{HeteroclinicOrbit, HeteroclinicSettings, Parameterization};
pub use integrator::Tolerance;
pub use model::{Bound, Domain, FnModel, SlowFastModel, StructureFlags};
pub use models::chemostat::{ChemostatModel, ChemostatParams, Response};
pub use models::epidemic::{CenterManifoldTable, CmOptions, EpidemicParams, EpidemicReduced, NodeFlag, Profile};
pub use orbit::OrbitPath;
pub use verification::{EntryExit, EpidemicRun, VerificationReport, VerifySettings};
