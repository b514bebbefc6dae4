//! Deterministic simulation core for a bilateral master/slave disassembly
//! workcell: arm dynamics, impedance control, mask perception, planning,
//! the supervisory state machine, the binary link and session metrics.
#![no_std]

extern crate alloc;

pub mod autonomy;
pub mod control;
pub mod dynamics;
mod dvec_serde;
pub mod link;
pub mod metrics;
pub mod perception;
pub mod pilot;
pub mod planning;
pub mod workcell;
