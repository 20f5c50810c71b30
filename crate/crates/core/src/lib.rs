//! Simulation of a distributed pneumatic pressure-control system.
//!
//! * [`wire_protocol`]: the five-word packet format and its framing.
//! * [`bus_sim`]: discrete-event model of the half-duplex RS-485 bus.
//! * [`dynamics`]: linear, nonlinear and parametric chamber pressure models.
//! * [`controller`]: proportional pressure control and the emulated device.
//! * [`sysid`]: datasets, multi-start fitting and model comparison.

pub mod bus_sim;
pub mod controller;
pub mod dynamics;
pub mod sysid;
pub mod wire_protocol;
