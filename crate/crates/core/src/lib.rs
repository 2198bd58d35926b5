//! Simulator of a batteryless IoT node that powers itself from a solar panel
//! and receives on-off keyed visible-light frames through the same panel.
//!
//! Modules follow the signal and energy paths:
//!
//! - [`channel`]: panel terminal voltage and harvestable power
//! - [`afe`]: DC-blocking high-pass filter and digitizer
//! - [`codec`]: 32-bit frame format, preamble search, bit sampling
//! - [`harvester`]: capacitor store, output thresholds, open-circuit windows
//! - [`node`]: OFF/INIT/SLEEP/BLE/VLC+BLE state machine and wake-up decision
//! - [`sim`]: fixed-step engine, traces, metrics, sweeps
//! - [`config`], [`report`]: JSON configuration and the per-state table

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod afe;
pub mod channel;
pub mod codec;
pub mod config;
pub mod harvester;
pub mod node;
pub mod report;
pub mod sim;

pub use afe::{AfeConfig, Digitizer, FrontEnd, HighPassState};
pub use channel::{ChannelConfig, SignalTrace, Transmission, TxAlignment};
pub use codec::{Bitstream, CodecError, Payload, VlcFrame, PREAMBLE};
pub use config::{ConfigError, SimConfig, TxEntry, TxStart, Violation};
pub use harvester::{HarvesterConfig, HarvesterEvent, HarvesterEventKind, HarvesterState};
pub use node::{
    BlePacket, Decision, DecisionConfig, Mode, NodeState, Profiles, StateEnergyProfile,
};
pub use report::{render_report, report_rows, ReportRow};
pub use sim::{run_simulation, run_simulation_with, sweep, SimError, SimOutput, SummaryMetrics};
