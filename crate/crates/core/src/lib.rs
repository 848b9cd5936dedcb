// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aero;
pub mod control;
pub mod docking;
pub mod dynamics;
pub mod endurance;
pub mod mission;
pub mod powertrain;
pub mod scenario;
pub mod sim;
pub mod telemetry;
