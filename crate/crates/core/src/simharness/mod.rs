//! Replicate trial simulation and operating characteristics.

mod oc;
mod scenario;
mod trial;

pub use oc::{aggregate, run_oc, run_prepared, run_replicates, sweep, McStandardErrors, OperatingCharacteristics};
pub use scenario::{ScenarioConfig, SummarySource};
pub use trial::{run_trial, run_trial_detailed, LookFit, PreparedScenario};

#[cfg(test)]
mod tests;
