//! Shared fixtures for the criterion benches.

use voltune_core::codec::{PmbusCommand, Primitive, Transaction};
use voltune_core::harness::CaseStudySweep;
use voltune_core::link::{LinkSpeed, SweepMode};

/// Every supported (primitive, command) pair on the three profile devices.
pub fn transaction_table() -> Vec<Transaction> {
    let mut out = Vec::new();
    for addr in [52, 53, 54] {
        for cmd in PmbusCommand::ALL {
            for prim in cmd.primitives() {
                let data = match prim {
                    Primitive::WriteByte => Some(0x01),
                    Primitive::WriteWord => Some(0x0E66),
                    _ => None,
                };
                out.push(Transaction::new(*prim, addr, *cmd, data).expect("supported pair"));
            }
        }
    }
    out
}

/// Voltages spread over the rail range, for codec throughput.
pub fn voltage_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.4 + 0.7 * i as f64 / n as f64).collect()
}

/// The 10 Gbps both-swept case study at a coarser step, for quick iterations.
pub fn coarse_sweep(step_v: f64) -> CaseStudySweep {
    CaseStudySweep {
        step_v,
        ..CaseStudySweep::new(LinkSpeed::G10, SweepMode::Both, 0)
    }
}
