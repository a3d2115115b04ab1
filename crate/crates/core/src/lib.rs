//! Voltage regulation toolkit for radial distribution feeders.

pub mod dataset;
pub mod deq;
pub mod feeder;
pub mod linear;
pub mod lp;
pub mod neural;
pub mod report;
pub mod vvc;
pub mod vvo;
pub mod textio;

use feeder::VoltageProfile;

/// Anything that maps consumption-positive net loads to bus voltages.
pub trait VoltagePredictor {
    fn predict(&self, net_p: &[f64], net_q: &[f64]) -> VoltageProfile;
}
