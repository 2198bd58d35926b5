//! Behavioral model of the node.
//!
//! Lifecycle: `Off` until the harvester output comes up, `Init` while the MCU
//! boots, then `Sleep`. On each open-circuit indicator the coprocessor reads
//! the capacitor voltage through a divider and, if it is above the overcharge
//! threshold, counts edges on the front-end output to choose between a plain
//! BLE broadcast and a VLC receive followed by a BLE echo.
//!
//! Every state draws its profile power for its profile duration.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::channel::SignalTrace;
use crate::codec::{receive_frame, CodecError, VlcFrame};
use crate::harvester::{HarvesterEvent, HarvesterEventKind};

/// Payload of the periodic broadcast packet ("BLE" in ASCII).
pub const BROADCAST_PAYLOAD: u32 = 0x42_4C_45;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NodeError {
    #[error("missing energy profile for {0}")]
    MissingProfile(Mode),
    #[error("invalid profile for {mode}: {reason}")]
    InvalidProfile { mode: Mode, reason: String },
    #[error("invalid decision config: {0}")]
    InvalidDecision(String),
    #[error("run_application needs RunBle or RunVlc, got {0:?}")]
    NotAnApplication(Decision),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Off,
    Init,
    Sleep,
    Ble,
    VlcBle,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Off, Mode::Init, Mode::Sleep, Mode::Ble, Mode::VlcBle];

    pub fn label(self) -> &'static str {
        match self {
            Mode::Off => "OFF",
            Mode::Init => "INIT",
            Mode::Sleep => "SLEEP",
            Mode::Ble => "BLE",
            Mode::VlcBle => "VLC+BLE",
        }
    }

    /// States that run for a fixed time and then fall back to `Sleep`.
    pub fn is_timed(self) -> bool {
        matches!(self, Mode::Init | Mode::Ble | Mode::VlcBle)
    }

    pub fn is_application(self) -> bool {
        matches!(self, Mode::Ble | Mode::VlcBle)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Average energy, power and duration of one state, in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateEnergyProfile {
    pub state: Mode,
    /// J
    pub e_avg: f64,
    /// W
    pub p_avg: f64,
    /// s
    pub t_avg: f64,
}

impl StateEnergyProfile {
    pub fn new(state: Mode, e_avg_mj: f64, p_avg_mw: f64, t_avg: f64) -> Self {
        Self {
            state,
            e_avg: e_avg_mj * 1e-3,
            p_avg: p_avg_mw * 1e-3,
            t_avg,
        }
    }

    /// Energy of one episode under the constant-power model.
    pub fn episode_energy(&self) -> f64 {
        self.p_avg * self.t_avg
    }

    /// Relative mismatch between the stated energy and `p_avg * t_avg`.
    pub fn consistency_error(&self) -> f64 {
        (self.e_avg - self.episode_energy()).abs() / self.e_avg
    }
}

/// Per-state measurements of the reference hardware, in SI units.
pub fn default_profiles() -> Vec<StateEnergyProfile> {
    let p = |state, e_avg, p_avg, t_avg| StateEnergyProfile {
        state,
        e_avg,
        p_avg,
        t_avg,
    };
    vec![
        p(Mode::Init, 345e-6, 3.756e-3, 0.091),
        p(Mode::Sleep, 151e-6, 30e-6, 5.017),
        p(Mode::Ble, 314e-6, 2.986e-3, 0.105),
        p(Mode::VlcBle, 345e-6, 2.925e-3, 0.118),
    ]
}

/// Profiles indexed by mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profiles {
    pub init: StateEnergyProfile,
    pub sleep: StateEnergyProfile,
    pub ble: StateEnergyProfile,
    pub vlc_ble: StateEnergyProfile,
}

impl Profiles {
    pub fn from_list(list: &[StateEnergyProfile]) -> Result<Self, NodeError> {
        let find = |m: Mode| {
            list.iter()
                .rev()
                .find(|p| p.state == m)
                .copied()
                .ok_or(NodeError::MissingProfile(m))
        };
        let p = Self {
            init: find(Mode::Init)?,
            sleep: find(Mode::Sleep)?,
            ble: find(Mode::Ble)?,
            vlc_ble: find(Mode::VlcBle)?,
        };
        for prof in [p.init, p.sleep, p.ble, p.vlc_ble] {
            if !(prof.p_avg >= 0.0 && prof.e_avg >= 0.0 && prof.t_avg > 0.0) {
                return Err(NodeError::InvalidProfile {
                    mode: prof.state,
                    reason: "p_avg and e_avg must be >= 0 and t_avg > 0".into(),
                });
            }
        }
        Ok(p)
    }

    pub fn get(&self, m: Mode) -> Option<&StateEnergyProfile> {
        match m {
            Mode::Off => None,
            Mode::Init => Some(&self.init),
            Mode::Sleep => Some(&self.sleep),
            Mode::Ble => Some(&self.ble),
            Mode::VlcBle => Some(&self.vlc_ble),
        }
    }

    /// Load the node presents in mode `m`, W.
    pub fn power(&self, m: Mode) -> f64 {
        self.get(m).map_or(0.0, |p| p.p_avg)
    }
}

impl Default for Profiles {
    fn default() -> Self {
        Self::from_list(&default_profiles()).expect("defaults are complete")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    pub adc_divider_ratio: f64,
    /// Capacitor-domain voltage required before any application runs, V.
    pub v_overcharge_adc: f64,
    pub sense_sample_hz: f64,
    pub sense_window: f64,
    /// Minimum edge count that marks an active VLC transmitter.
    pub edge_threshold: u32,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            adc_divider_ratio: 0.5,
            v_overcharge_adc: 4.3,
            sense_sample_hz: 8000.0,
            sense_window: 0.010,
            edge_threshold: 6,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self, oc_duration: f64) -> Result<(), NodeError> {
        let bad = |m: String| Err(NodeError::InvalidDecision(m));
        if !(self.adc_divider_ratio > 0.0 && self.adc_divider_ratio <= 1.0) {
            return bad(format!(
                "adc_divider_ratio must be in (0, 1], got {}",
                self.adc_divider_ratio
            ));
        }
        if !(self.sense_sample_hz > 0.0) {
            return bad(format!(
                "sense_sample_hz must be positive, got {}",
                self.sense_sample_hz
            ));
        }
        if !(self.sense_window > 0.0 && self.sense_window <= oc_duration) {
            return bad(format!(
                "sense_window must be in (0, oc_duration = {oc_duration}], got {}",
                self.sense_window
            ));
        }
        Ok(())
    }

    /// Divided capacitor voltage clears the divided threshold.
    pub fn energy_gate_open(&self, v_cap: f64) -> bool {
        v_cap * self.adc_divider_ratio >= self.v_overcharge_adc * self.adc_divider_ratio
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    RunBle,
    RunVlc,
    StaySleep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Broadcast,
    Echo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlePacket {
    pub kind: PacketKind,
    pub payload: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub mode: Mode,
    pub mode_elapsed: f64,
}

impl Default for NodeState {
    fn default() -> Self {
        Self {
            mode: Mode::Off,
            mode_elapsed: 0.0,
        }
    }
}

impl NodeState {
    fn enter(&mut self, mode: Mode) {
        self.mode = mode;
        self.mode_elapsed = 0.0;
    }

    /// React to harvester events. Output loss wins over everything else.
    pub fn apply_events(&mut self, events: &[HarvesterEvent]) {
        for e in events {
            match e.kind {
                HarvesterEventKind::OutputDisabled => self.enter(Mode::Off),
                HarvesterEventKind::OutputEnabled if self.mode == Mode::Off => {
                    self.enter(Mode::Init)
                }
                _ => {}
            }
        }
    }

    /// Start the application chosen by the coprocessor. Only valid from `Sleep`.
    pub fn begin(&mut self, decision: Decision) -> bool {
        if self.mode != Mode::Sleep {
            return false;
        }
        match decision {
            Decision::RunBle => self.enter(Mode::Ble),
            Decision::RunVlc => self.enter(Mode::VlcBle),
            Decision::StaySleep => return false,
        }
        true
    }

    /// Advance by `dt`. Returns the load for this step and the timed state
    /// that completed at its start, if any.
    pub fn advance(&mut self, profiles: &Profiles, dt: f64) -> (f64, Option<Mode>) {
        let mut completed = None;
        if let Some(p) = profiles.get(self.mode) {
            if self.mode.is_timed() && self.mode_elapsed >= p.t_avg - dt * 1e-6 {
                completed = Some(self.mode);
                self.enter(Mode::Sleep);
            }
        }
        let load = profiles.power(self.mode);
        self.mode_elapsed += dt;
        (load, completed)
    }
}

pub fn node_tick(
    node: NodeState,
    harvester_events: &[HarvesterEvent],
    profiles: &Profiles,
    dt: f64,
) -> (NodeState, f64) {
    let mut n = node;
    n.apply_events(harvester_events);
    let (p_load, _) = n.advance(profiles, dt);
    (n, p_load)
}

/// Level transitions seen when `trace` is sampled at `sample_hz` for `window` s
/// from its start.
pub fn count_transitions(trace: &SignalTrace, sample_hz: f64, window: f64) -> u32 {
    let n = (window * sample_hz + 1e-9).floor() as usize;
    let mut prev: Option<bool> = None;
    let mut count = 0;
    for j in 0..n {
        let Some(v) = trace.value_at(trace.t0 + j as f64 / sample_hz) else {
            break;
        };
        let level = v > 0.5;
        if prev.is_some_and(|p| p != level) {
            count += 1;
        }
        prev = Some(level);
    }
    count
}

/// Coprocessor decision on an open-circuit indicator. `afe_logic` starts at
/// the indicator and covers at least the sense window. Outside `Sleep` the node
/// is busy and the indicator is ignored.
pub fn on_open_circuit_indicator(
    node: &NodeState,
    dec: &DecisionConfig,
    v_cap: f64,
    afe_logic: &SignalTrace,
) -> Decision {
    if node.mode != Mode::Sleep || !dec.energy_gate_open(v_cap) {
        return Decision::StaySleep;
    }
    if count_transitions(afe_logic, dec.sense_sample_hz, dec.sense_window) >= dec.edge_threshold {
        Decision::RunVlc
    } else {
        Decision::RunBle
    }
}

/// Result of running one application to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplicationRun {
    pub node: NodeState,
    /// J
    pub energy_drawn: f64,
    pub packet: Option<BlePacket>,
    pub decode_error: Option<CodecError>,
}

/// What the main processor emits once an application finishes.
pub fn application_output(
    decision: Decision,
    trace: &SignalTrace,
    clock_hz: f64,
) -> Result<(Option<BlePacket>, Option<CodecError>), NodeError> {
    match decision {
        Decision::RunBle => Ok((
            Some(BlePacket {
                kind: PacketKind::Broadcast,
                payload: BROADCAST_PAYLOAD,
            }),
            None,
        )),
        Decision::RunVlc => Ok(match receive_frame(trace, clock_hz) {
            Ok(VlcFrame { payload }) => (
                Some(BlePacket {
                    kind: PacketKind::Echo,
                    payload: payload.value(),
                }),
                None,
            ),
            Err(e) => (None, Some(e)),
        }),
        Decision::StaySleep => Err(NodeError::NotAnApplication(decision)),
    }
}

/// Run an application start to finish: pay its profile energy, decode if it is
/// a VLC receive, and return to `Sleep`. Decode failures still pay in full.
pub fn run_application(
    node: &NodeState,
    decision: Decision,
    profiles: &Profiles,
    trace: &SignalTrace,
    clock_hz: f64,
) -> Result<ApplicationRun, NodeError> {
    let mode = match decision {
        Decision::RunBle => Mode::Ble,
        Decision::RunVlc => Mode::VlcBle,
        Decision::StaySleep => return Err(NodeError::NotAnApplication(decision)),
    };
    let (packet, decode_error) = application_output(decision, trace, clock_hz)?;
    let _ = node;
    Ok(ApplicationRun {
        node: NodeState {
            mode: Mode::Sleep,
            mode_elapsed: 0.0,
        },
        energy_drawn: profiles.get(mode).map_or(0.0, |p| p.episode_energy()),
        packet,
        decode_error,
    })
}
