//! Truss sizing with QAOA-driven multiplicative area updates.

pub mod bits;
pub mod design;
pub mod encoding;
pub mod fem;
pub mod harness;
pub mod qaoa;

/// Largest register the simulator and the exhaustive solver will touch.
pub const MAX_QUBITS: usize = 26;
