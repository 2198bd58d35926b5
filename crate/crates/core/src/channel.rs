//! Solar panel terminal voltage and harvestable power.
//!
//! The panel voltage is the ambient DC operating point plus the OOK light
//! modulation, harvester switching interference and Gaussian noise. The
//! harvester stops switching while the panel is open-circuited, so the
//! interference term is zero inside every open-circuit interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Bitstream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("trace timestep must be positive and finite, got {0}")]
    NonPositiveTimestep(f64),
}

/// Uniformly sampled waveform: sample `i` is taken at `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub t0: f64,
}

impl SignalTrace {
    pub fn new(samples: Vec<f64>, dt: f64, t0: f64) -> Result<Self, TraceError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TraceError::NonPositiveTimestep(dt));
        }
        Ok(Self { samples, dt, t0 })
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// End of the interval covered by the samples (each sample holds for `dt`).
    pub fn end(&self) -> f64 {
        self.t0 + self.samples.len() as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample holding at time `t` (zero-order hold), if `t` is covered.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        if t < self.t0 {
            return None;
        }
        let i = ((t - self.t0) / self.dt + 1e-9).floor() as usize;
        self.samples.get(i).copied()
    }
}

/// How scheduled frames are placed inside their open-circuit window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxAlignment {
    /// Frame starts `tx_guard` after the window opens.
    Aligned,
    /// Frame starts at a uniformly random point that still fits the window.
    RandomOffset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Panel operating voltage under ambient light, V.
    pub v_dc: f64,
    /// Extra panel voltage while the LED is on, V.
    pub mod_depth: f64,
    /// Per-sample Gaussian noise, V.
    pub noise_sigma: f64,
    /// Peak of the +/- square-wave switching interference, V.
    pub interference_amp: f64,
    pub interference_hz: f64,
    /// When false, interference also runs inside open-circuit windows.
    /// Exists to show what the open-circuit gating buys.
    pub interference_gating: bool,
    /// Harvestable power outside open-circuit windows, W.
    pub p_harvest: f64,
    pub seed: u64,
    pub tx_alignment: TxAlignment,
    /// Delay between the window opening and the first frame bit, s.
    pub tx_guard: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            v_dc: 3.0,
            mod_depth: 0.2,
            noise_sigma: 0.002,
            interference_amp: 0.1,
            interference_hz: 1000.0,
            interference_gating: true,
            p_harvest: 200e-6,
            seed: 1,
            tx_alignment: TxAlignment::Aligned,
            tx_guard: 1.25e-3,
        }
    }
}

/// A frame on air from `start` onwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub bits: Bitstream,
    pub start: f64,
}

/// Slack for comparing sample times against bit boundaries, s.
const TIME_EPS: f64 = 1e-9;

impl Transmission {
    pub fn new(bits: Bitstream, start: f64) -> Self {
        Self { bits, start }
    }

    pub fn end(&self) -> f64 {
        self.start + self.bits.airtime()
    }

    pub fn is_active(&self, t: f64) -> bool {
        let t = t + TIME_EPS;
        t >= self.start && t < self.end()
    }

    /// NRZ level at `t`, `None` outside the frame.
    pub fn level_at(&self, t: f64) -> Option<bool> {
        if !self.is_active(t) {
            return None;
        }
        let idx = ((t + TIME_EPS - self.start) * self.bits.clock_hz).floor() as usize;
        self.bits.bits.get(idx.min(self.bits.len() - 1)).copied()
    }
}

/// Stateful sample-by-sample generator of the panel voltage.
#[derive(Debug, Clone)]
pub struct PanelSignal {
    cfg: ChannelConfig,
    rng: ChaCha8Rng,
}

impl PanelSignal {
    pub fn new(cfg: &ChannelConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }

    pub fn interference(&self, t: f64, in_open_circuit: bool) -> f64 {
        if self.cfg.interference_amp == 0.0 || (in_open_circuit && self.cfg.interference_gating) {
            return 0.0;
        }
        if (t * self.cfg.interference_hz).rem_euclid(1.0) < 0.5 {
            self.cfg.interference_amp
        } else {
            -self.cfg.interference_amp
        }
    }

    /// Panel voltage at `t`. Draws exactly one normal deviate per call so the
    /// noise sequence does not depend on `noise_sigma`.
    pub fn sample(&mut self, t: f64, in_open_circuit: bool, light_on: bool) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        let s = if light_on { self.cfg.mod_depth } else { 0.0 };
        self.cfg.v_dc + s + self.interference(t, in_open_circuit) + self.cfg.noise_sigma * z
    }
}

pub fn in_intervals(t: f64, intervals: &[(f64, f64)]) -> bool {
    intervals.iter().any(|&(a, b)| t >= a && t < b)
}

pub fn render_panel_voltage(
    cfg: &ChannelConfig,
    tx: Option<&Transmission>,
    oc_intervals: &[(f64, f64)],
    t0: f64,
    duration: f64,
    dt: f64,
) -> Result<SignalTrace, TraceError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(TraceError::NonPositiveTimestep(dt));
    }
    let n = ((duration / dt).round() as usize).max(1);
    let mut panel = PanelSignal::new(cfg);
    let samples = (0..n)
        .map(|i| {
            let t = t0 + i as f64 * dt;
            let light = tx.and_then(|x| x.level_at(t)).unwrap_or(false);
            panel.sample(t, in_intervals(t, oc_intervals), light)
        })
        .collect();
    SignalTrace::new(samples, dt, t0)
}

/// Power the panel delivers to the harvester at `t`: nothing while open-circuited.
pub fn harvest_power_at(cfg: &ChannelConfig, t: f64, oc_intervals: &[(f64, f64)]) -> f64 {
    if in_intervals(t, oc_intervals) {
        0.0
    } else {
        cfg.p_harvest
    }
}
