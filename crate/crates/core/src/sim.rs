//! Fixed-timestep simulation of the whole node.
//!
//! Each step, in order: the channel produces a panel sample, the front-end
//! digitizes it, the node reacts to the harvester events of the previous step
//! (lifecycle, open-circuit indicator, coprocessor decision), the node's load
//! is fixed for the step, and the harvester integrates energy over the step.
//! All models see the same clock `t = n * dt`.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use std::collections::VecDeque;
use std::io::Write;
use thiserror::Error;

use crate::afe::{AfeError, FrontEnd};
use crate::channel::{PanelSignal, SignalTrace, Transmission};
use crate::codec::CodecError;
use crate::config::{ConfigError, ScheduledFrame, SimConfig, Violation};
use crate::harvester::{
    step_into, HarvesterError, HarvesterEvent, HarvesterEventKind, HarvesterState,
};
use crate::node::{
    application_output, on_open_circuit_indicator, BlePacket, Decision, Mode, NodeState, PacketKind,
};

/// Header of the exported trace CSV.
pub const TRACE_HEADER: [&str; 7] = [
    "t_s",
    "v_cap_V",
    "v_panel_V",
    "afe_logic",
    "mode",
    "p_load_W",
    "event",
];

/// Full-rate records are kept this long on either side of an event.
const EVENT_WINDOW_S: f64 = 0.1;
/// Decimation stride away from events.
const DECIMATION: usize = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    ConfigInvalid(Vec<Violation>),
    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("harvester: {0}")]
    Harvester(#[from] HarvesterError),
    #[error("front-end: {0}")]
    Afe(#[from] AfeError),
    #[error("trace export: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub v_cap: f64,
    pub v_panel: f64,
    pub afe_logic: bool,
    pub mode: Mode,
    pub p_load: f64,
    pub event: Option<String>,
}

/// Aggregate over the complete episodes of one mode. Energies in mJ, powers
/// in mW, durations in s.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateStats {
    pub mode: Mode,
    pub total_energy: f64,
    pub mean_power: f64,
    pub mean_duration: f64,
    pub occurrences: usize,
}

impl StateStats {
    /// Mean energy per episode, mJ.
    pub fn mean_energy(&self) -> f64 {
        if self.occurrences == 0 {
            0.0
        } else {
            self.total_energy / self.occurrences as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryMetrics {
    pub frames_sent: usize,
    /// Frames whose echoed payload matched the transmitted payload.
    pub frames_decoded: usize,
    pub frame_success_rate: Option<f64>,
    pub per_state: Vec<StateStats>,
    /// Mean spacing between application starts, s.
    pub cycle_period_mean: Option<f64>,
    /// Output-disabled events.
    pub brownouts: usize,
}

impl SummaryMetrics {
    pub fn state(&self, mode: Mode) -> &StateStats {
        self.per_state
            .iter()
            .find(|s| s.mode == mode)
            .expect("every mode is reported")
    }
}

/// One contiguous stay in a mode. `complete` episodes were both entered and
/// left by a transition inside the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub mode: Mode,
    pub start: f64,
    pub end: f64,
    /// J
    pub energy: f64,
    pub complete: bool,
    /// Capacitor voltage when the episode began.
    pub v_cap_start: f64,
}

impl Episode {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub payload: u32,
    pub tx_start: f64,
    pub tx_end: f64,
    pub oc_index: Option<usize>,
    pub decision: Option<Decision>,
    pub received: Option<u32>,
    pub decode_error: Option<CodecError>,
}

impl FrameOutcome {
    pub fn decoded(&self) -> bool {
        self.received == Some(self.payload)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    /// When the open-circuit indicator fired.
    pub indicator_time: f64,
    pub oc_index: usize,
    pub decision_time: f64,
    pub v_cap: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyLedger {
    pub initial: f64,
    pub harvested: f64,
    pub consumed: f64,
    pub discarded: f64,
    pub deficit: f64,
    pub final_energy: f64,
}

impl EnergyLedger {
    /// Net flow minus the change in stored energy; zero when the books balance.
    pub fn imbalance(&self) -> f64 {
        (self.harvested - self.consumed - self.discarded + self.deficit)
            - (self.final_energy - self.initial)
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: Vec<TraceRecord>,
    pub metrics: SummaryMetrics,
    pub episodes: Vec<Episode>,
    pub frames: Vec<FrameOutcome>,
    pub packets: Vec<(f64, BlePacket)>,
    pub decisions: Vec<DecisionRecord>,
    pub ledger: EnergyLedger,
}

/// Everything observable about one step, handed to the observer.
#[derive(Debug)]
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    /// Harvester state at the start of the step.
    pub harvester: &'a HarvesterState,
    pub mode: Mode,
    pub p_load: f64,
    pub v_panel: f64,
    pub afe_logic: bool,
    /// Index into the resolved schedule of the frame on air, if any.
    pub tx_frame: Option<usize>,
    /// Harvester events emitted at the end of this step.
    pub events: &'a [HarvesterEvent],
}

struct Capture {
    oc_index: usize,
    t0: f64,
    indicator_time: f64,
    samples: Vec<f64>,
    open: bool,
    sensing: bool,
}

impl Capture {
    fn trace(&self, dt: f64) -> SignalTrace {
        SignalTrace {
            samples: self.samples.clone(),
            dt,
            t0: self.t0,
        }
    }
}

struct RunningApp {
    decision: Decision,
    oc_index: usize,
}

struct Recorder {
    full: bool,
    window: usize,
    pending: VecDeque<(usize, TraceRecord, bool)>,
    keep_until: Option<usize>,
    out: Vec<TraceRecord>,
}

impl Recorder {
    fn new(full: bool, dt: f64) -> Self {
        Self {
            full,
            window: ((EVENT_WINDOW_S / dt).round() as usize).max(1),
            pending: VecDeque::new(),
            keep_until: None,
            out: Vec::new(),
        }
    }

    fn push(&mut self, step: usize, rec: TraceRecord) {
        if self.full {
            self.out.push(rec);
            return;
        }
        let has_event = rec.event.is_some();
        if has_event {
            for p in self.pending.iter_mut() {
                p.2 = true;
            }
            self.keep_until = Some(step + self.window);
        }
        let keep = has_event
            || step.is_multiple_of(DECIMATION)
            || self.keep_until.is_some_and(|k| step <= k);
        self.pending.push_back((step, rec, keep));
        while self
            .pending
            .front()
            .is_some_and(|(s, _, _)| s + self.window < step)
        {
            let (_, r, k) = self.pending.pop_front().expect("front exists");
            if k {
                self.out.push(r);
            }
        }
    }

    fn finish(mut self) -> Vec<TraceRecord> {
        for (_, r, k) in self.pending.drain(..) {
            if k {
                self.out.push(r);
            }
        }
        self.out
    }
}

fn event_name(kind: HarvesterEventKind) -> &'static str {
    match kind {
        HarvesterEventKind::OutputEnabled => "output_enabled",
        HarvesterEventKind::OutputDisabled => "output_disabled",
        HarvesterEventKind::OpenCircuitStart => "open_circuit_start",
        HarvesterEventKind::OpenCircuitEnd => "open_circuit_end",
        HarvesterEventKind::Overcharged => "overcharged",
    }
}

fn decision_name(d: Decision) -> &'static str {
    match d {
        Decision::RunBle => "run_ble",
        Decision::RunVlc => "run_vlc",
        Decision::StaySleep => "stay_sleep",
    }
}

fn codec_error_name(e: &CodecError) -> &'static str {
    match e {
        CodecError::NoPreamble => "no_preamble",
        CodecError::Truncated { .. } => "truncated",
        CodecError::OutOfWindow { .. } => "out_of_window",
        CodecError::InsufficientResolution { .. } => "insufficient_resolution",
        CodecError::PayloadOutOfRange(_) => "payload_out_of_range",
        CodecError::InvalidClock(_) => "invalid_clock",
    }
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    run_simulation_with(cfg, |_| {})
}

/// Run the simulation, calling `observe` once per step.
pub fn run_simulation_with<F>(cfg: &SimConfig, mut observe: F) -> Result<SimOutput, SimError>
where
    F: FnMut(&StepView<'_>),
{
    let violations = cfg.validate();
    if !violations.is_empty() {
        return Err(SimError::ConfigInvalid(violations));
    }
    let profiles = cfg.profiles().expect("validated");
    let hcfg = &cfg.harvester;
    let dt = cfg.dt;
    let n_steps = cfg.steps();
    let sense_steps = ((cfg.decision.sense_window / dt).round() as usize).max(1);

    let schedule: Vec<ScheduledFrame> = cfg.resolve_schedule();
    let mut frames: Vec<FrameOutcome> = schedule
        .iter()
        .map(|f| FrameOutcome {
            payload: f.payload,
            tx_start: f.start,
            tx_end: f.end(),
            oc_index: f.oc_index,
            decision: None,
            received: None,
            decode_error: None,
        })
        .collect();
    let on_air_list: Vec<Transmission> = schedule
        .iter()
        .map(|f| Transmission::new(f.bits.clone(), f.start))
        .collect();

    let mut panel = PanelSignal::new(&cfg.channel);
    let mut fe = FrontEnd::new(&cfg.afe, dt)?;
    let mut harv = HarvesterState::initial(hcfg);
    let mut node = NodeState::default();

    let mut ledger = EnergyLedger {
        initial: harv.energy(hcfg),
        ..Default::default()
    };
    let mut prev_events: Vec<HarvesterEvent> = Vec::new();
    let mut events: Vec<HarvesterEvent> = Vec::new();
    let mut capture: Option<Capture> = None;
    let mut app: Option<RunningApp> = None;
    let mut oc_seen = 0usize;
    let mut tx_cursor = 0usize;
    let mut brownouts = 0usize;

    let mut recorder = Recorder::new(cfg.full_trace, dt);
    let mut episodes: Vec<Episode> = Vec::new();
    let mut cur_episode = Episode {
        mode: node.mode,
        start: 0.0,
        end: 0.0,
        energy: 0.0,
        complete: false,
        v_cap_start: harv.v_cap,
    };
    let mut cur_entered_by_transition = false;
    let mut packets = Vec::new();
    let mut decisions = Vec::new();
    let mut notes: Vec<String> = Vec::new();

    for n in 0..n_steps {
        let t = n as f64 * dt;
        let v_cap = harv.v_cap;
        let in_oc = harv.in_open_circuit;
        notes.clear();

        // transmitter
        while tx_cursor < on_air_list.len()
            && !on_air_list[tx_cursor].is_active(t)
            && on_air_list[tx_cursor].start <= t
        {
            tx_cursor += 1;
        }
        let on_air = on_air_list
            .get(tx_cursor)
            .filter(|f| f.is_active(t))
            .map(|_| tx_cursor);
        let light = on_air
            .and_then(|i| on_air_list[i].level_at(t))
            .unwrap_or(false);
        if let Some(i) = on_air {
            if n == 0 || !on_air_list[i].is_active((n as f64 - 1.0) * dt) {
                notes.push(format!("tx_start:{:#08x}", schedule[i].payload));
            }
        }

        let v_panel = panel.sample(t, in_oc, light);
        let (_, logic) = fe.process(v_panel);

        // harvester events from the previous step
        node.apply_events(&prev_events);
        for e in &prev_events {
            notes.push(event_name(e.kind).to_string());
            match e.kind {
                HarvesterEventKind::OpenCircuitStart => {
                    let idx = oc_seen;
                    oc_seen += 1;
                    capture = None;
                    if node.mode == Mode::Sleep && cfg.decision.energy_gate_open(v_cap) {
                        capture = Some(Capture {
                            oc_index: idx,
                            t0: t,
                            indicator_time: e.time,
                            samples: Vec::with_capacity(
                                (hcfg.oc_duration / dt).ceil() as usize + 1,
                            ),
                            open: true,
                            sensing: true,
                        });
                    } else if node.mode == Mode::Sleep {
                        decisions.push(DecisionRecord {
                            indicator_time: e.time,
                            oc_index: idx,
                            decision_time: t,
                            v_cap,
                            decision: Decision::StaySleep,
                        });
                        notes.push("decision:stay_sleep".into());
                    }
                }
                HarvesterEventKind::OpenCircuitEnd => {
                    if let Some(c) = capture.as_mut() {
                        c.open = false;
                    }
                }
                HarvesterEventKind::OutputDisabled => {
                    brownouts += 1;
                    capture = None;
                    app = None;
                }
                _ => {}
            }
        }

        // coprocessor
        if let Some(c) = capture.as_mut() {
            if c.open {
                c.samples.push(if logic { 1.0 } else { 0.0 });
            }
        }
        let sensed = capture
            .as_ref()
            .is_some_and(|c| c.sensing && (c.samples.len() >= sense_steps || !c.open));
        if sensed {
            let c = capture.as_mut().expect("checked");
            c.sensing = false;
            let decision = on_open_circuit_indicator(&node, &cfg.decision, v_cap, &c.trace(dt));
            decisions.push(DecisionRecord {
                indicator_time: c.indicator_time,
                oc_index: c.oc_index,
                decision_time: t,
                v_cap,
                decision,
            });
            notes.push(format!("decision:{}", decision_name(decision)));
            for f in frames.iter_mut().filter(|f| f.oc_index == Some(c.oc_index)) {
                f.decision = Some(decision);
            }
            let oc_index = c.oc_index;
            if node.begin(decision) {
                app = Some(RunningApp { decision, oc_index });
            }
            if decision != Decision::RunVlc {
                capture = None;
            }
        }

        let (p_load, completed) = node.advance(&profiles, dt);
        if completed.is_some_and(Mode::is_application) {
            if let Some(a) = app.take() {
                let trace = capture
                    .take()
                    .filter(|c| c.oc_index == a.oc_index)
                    .map(|c| c.trace(dt))
                    .unwrap_or_else(|| SignalTrace {
                        samples: Vec::new(),
                        dt,
                        t0: t,
                    });
                let (packet, err) = application_output(a.decision, &trace, cfg.clock_hz)
                    .expect("decision is an application");
                if let Some(p) = packet {
                    packets.push((t, p));
                    notes.push(match p.kind {
                        PacketKind::Broadcast => format!("ble_broadcast:{:#08x}", p.payload),
                        PacketKind::Echo => format!("ble_echo:{:#08x}", p.payload),
                    });
                }
                if let Some(e) = &err {
                    notes.push(format!("decode_error:{}", codec_error_name(e)));
                }
                if a.decision == Decision::RunVlc {
                    for f in frames.iter_mut().filter(|f| f.oc_index == Some(a.oc_index)) {
                        f.received = packet.map(|p| p.payload);
                        f.decode_error = err.clone();
                    }
                }
            }
        }

        // episode accounting
        if node.mode != cur_episode.mode {
            cur_episode.end = t;
            cur_episode.complete = cur_entered_by_transition;
            episodes.push(cur_episode.clone());
            cur_episode = Episode {
                mode: node.mode,
                start: t,
                end: t,
                energy: 0.0,
                complete: false,
                v_cap_start: v_cap,
            };
            cur_entered_by_transition = true;
        }
        cur_episode.energy += p_load * dt;

        // harvester
        let harv_before = harv;
        let p_harvest = if in_oc { 0.0 } else { cfg.channel.p_harvest };
        events.clear();
        let flows = step_into(&mut harv, hcfg, p_harvest, p_load, dt, &mut events)?;
        ledger.harvested += flows.harvested;
        ledger.consumed += flows.consumed;
        ledger.discarded += flows.discarded;
        ledger.deficit += flows.deficit;

        observe(&StepView {
            step: n,
            t,
            harvester: &harv_before,
            mode: node.mode,
            p_load,
            v_panel,
            afe_logic: logic,
            tx_frame: on_air,
            events: &events,
        });

        recorder.push(
            n,
            TraceRecord {
                t,
                v_cap,
                v_panel,
                afe_logic: logic,
                mode: node.mode,
                p_load,
                event: (!notes.is_empty()).then(|| notes.join(";")),
            },
        );
        std::mem::swap(&mut prev_events, &mut events);
    }

    cur_episode.end = n_steps as f64 * dt;
    episodes.push(cur_episode);
    ledger.final_energy = harv.energy(hcfg);

    let frames_sent: Vec<&FrameOutcome> = frames
        .iter()
        .filter(|f| f.tx_start < cfg.duration)
        .collect();
    let frames_decoded = frames_sent.iter().filter(|f| f.decoded()).count();
    let metrics = SummaryMetrics {
        frames_sent: frames_sent.len(),
        frames_decoded,
        frame_success_rate: (!frames_sent.is_empty())
            .then(|| frames_decoded as f64 / frames_sent.len() as f64),
        per_state: aggregate_states(&episodes),
        cycle_period_mean: cycle_period(&episodes),
        brownouts,
    };

    Ok(SimOutput {
        trace: recorder.finish(),
        metrics,
        episodes,
        frames,
        packets,
        decisions,
        ledger,
    })
}

fn aggregate_states(episodes: &[Episode]) -> Vec<StateStats> {
    Mode::ALL
        .iter()
        .map(|&mode| {
            let (mut e, mut t, mut n) = (0.0, 0.0, 0usize);
            for ep in episodes.iter().filter(|x| x.mode == mode && x.complete) {
                e += ep.energy;
                t += ep.duration();
                n += 1;
            }
            StateStats {
                mode,
                total_energy: e * 1e3,
                mean_power: if t > 0.0 { e / t * 1e3 } else { 0.0 },
                mean_duration: if n > 0 { t / n as f64 } else { 0.0 },
                occurrences: n,
            }
        })
        .collect()
}

fn cycle_period(episodes: &[Episode]) -> Option<f64> {
    let starts: Vec<f64> = episodes
        .iter()
        .filter(|e| e.mode.is_application())
        .map(|e| e.start)
        .collect();
    (starts.len() >= 2).then(|| (starts[starts.len() - 1] - starts[0]) / (starts.len() - 1) as f64)
}

/// Run one simulation per value of `parameter`, otherwise identical.
/// Results come back in the order of `values`.
pub fn sweep(
    cfg: &SimConfig,
    parameter: &str,
    values: &[Value],
) -> Result<Vec<(Value, SummaryMetrics)>, SimError> {
    let configs = values
        .iter()
        .map(|v| {
            cfg.with_override(parameter, v.clone())
                .map_err(|e| match e {
                    ConfigError::UnknownKey(k) => SimError::UnknownParameter(k),
                    other => SimError::Config(other),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let results = configs
        .par_iter()
        .map(|c| run_simulation(c).map(|o| o.metrics))
        .collect::<Vec<_>>();
    values
        .iter()
        .cloned()
        .zip(results)
        .map(|(v, r)| r.map(|m| (v, m)))
        .collect()
}

pub fn write_trace_csv<W: Write>(records: &[TraceRecord], w: W) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER)?;
    for r in records {
        out.write_record([
            format!("{:.6}", r.t),
            format!("{:.6}", r.v_cap),
            format!("{:.6}", r.v_panel),
            (r.afe_logic as u8).to_string(),
            r.mode.label().to_string(),
            format!("{:.6e}", r.p_load),
            r.event.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn summary_json(metrics: &SummaryMetrics) -> String {
    serde_json::to_string_pretty(metrics).expect("metrics serialize")
}
