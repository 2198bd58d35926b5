//! Simulation configuration: one JSON document, SI units throughout.
//!
//! Every section rejects unknown keys. Missing keys take their defaults, so a
//! config file only needs the values it changes. Overrides address keys by
//! dotted path (`channel.noise_sigma`, `tx_schedule.0.payload`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;
use std::path::Path;
use thiserror::Error;

use crate::afe::AfeConfig;
use crate::channel::{ChannelConfig, TxAlignment};
use crate::codec::{encode_frame_at, Bitstream, Payload, VlcFrame, FRAME_BITS};
use crate::harvester::HarvesterConfig;
use crate::node::{default_profiles, DecisionConfig, Profiles, StateEnergyProfile};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {source}")]
    BadValue {
        key: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed override `{0}`, expected KEY=VALUE")]
    MalformedOverride(String),
}

/// A single failed config invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKeyword {
    /// The open-circuit window after the previous entry's window.
    Aligned,
}

/// When a scheduled frame goes on air.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum TxStart {
    /// Absolute start time, s.
    At(f64),
    /// The `cycle`-th open-circuit window (0-based).
    Cycle {
        cycle: usize,
    },
    Keyword(TxKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxEntry {
    pub start: TxStart,
    pub payload: Payload,
}

impl TxEntry {
    pub fn aligned(payload: u32) -> Self {
        Self {
            start: TxStart::Keyword(TxKeyword::Aligned),
            payload: Payload::new(payload).expect("24-bit payload"),
        }
    }

    pub fn in_cycle(cycle: usize, payload: u32) -> Self {
        Self {
            start: TxStart::Cycle { cycle },
            payload: Payload::new(payload).expect("24-bit payload"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Simulation timestep, s.
    pub dt: f64,
    /// Simulated time, s.
    pub duration: f64,
    /// Optical bit clock shared by transmitter and receiver, Hz.
    pub clock_hz: f64,
    /// Keep every step in the trace instead of decimating away from events.
    pub full_trace: bool,
    pub channel: ChannelConfig,
    pub harvester: HarvesterConfig,
    pub afe: AfeConfig,
    pub decision: DecisionConfig,
    pub profiles: Vec<StateEnergyProfile>,
    pub tx_schedule: Vec<TxEntry>,
}

impl Default for SimConfig {
    fn default() -> Self {
        // The node cold-starts from an empty capacitor and first clears the
        // overcharge threshold before window 5; frames go out on alternate
        // windows from there so both application types appear.
        Self {
            dt: 50e-6,
            duration: 60.0,
            clock_hz: 800.0,
            full_trace: false,
            channel: ChannelConfig::default(),
            harvester: HarvesterConfig::default(),
            afe: AfeConfig::default(),
            decision: DecisionConfig::default(),
            profiles: default_profiles(),
            tx_schedule: vec![
                TxEntry::in_cycle(5, 0x12_34_56),
                TxEntry::in_cycle(7, 0xAB_CD_EF),
                TxEntry::in_cycle(9, 0x0F_F0_5A),
            ],
        }
    }
}

/// A schedule entry resolved to a concrete time and bit pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledFrame {
    pub payload: u32,
    pub bits: Bitstream,
    pub start: f64,
    /// Open-circuit window the frame was aimed at, if any.
    pub oc_index: Option<usize>,
}

impl ScheduledFrame {
    pub fn end(&self) -> f64 {
        self.start + self.bits.airtime()
    }
}

impl SimConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn profiles(&self) -> Result<Profiles, crate::node::NodeError> {
        Profiles::from_list(&self.profiles)
    }

    pub fn steps(&self) -> usize {
        ((self.duration / self.dt).round() as usize).max(1)
    }

    /// Set the value at a dotted key path. The key must already exist.
    pub fn with_override(&self, key: &str, value: Value) -> Result<Self, ConfigError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) => map.get_mut(part),
                Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        }
        *slot = value;
        serde_json::from_value(doc).map_err(|source| ConfigError::BadValue {
            key: key.to_string(),
            source,
        })
    }

    /// Apply a `KEY=VALUE` override; VALUE is JSON if it parses, else a string.
    pub fn with_override_str(&self, assignment: &str) -> Result<Self, ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::MalformedOverride(assignment.to_string()))?;
        self.with_override(key.trim(), parse_value(raw.trim()))
    }

    /// Place every scheduled frame in time, sorted by start.
    pub fn resolve_schedule(&self) -> Vec<ScheduledFrame> {
        let h = &self.harvester;
        let mut rng = ChaCha8Rng::seed_from_u64(self.channel.seed);
        rng.set_stream(1);
        let airtime = FRAME_BITS as f64 / self.clock_hz;
        let mut last_cycle: Option<usize> = None;
        let mut frames = Vec::with_capacity(self.tx_schedule.len());

        for entry in &self.tx_schedule {
            let bits = encode_frame_at(&VlcFrame::new(entry.payload), self.clock_hz)
                .unwrap_or_else(|_| Bitstream {
                    bits: Vec::new(),
                    clock_hz: 1.0,
                });
            let (start, oc_index) = match entry.start {
                TxStart::At(t) => {
                    let k = ((t - h.oc_start(0)) / h.oc_period).floor();
                    let idx = (k >= 0.0 && t < h.oc_start(k as usize) + h.oc_duration)
                        .then_some(k as usize);
                    (t, idx)
                }
                TxStart::Cycle { cycle } => {
                    (self.aligned_start(cycle, airtime, &mut rng), Some(cycle))
                }
                TxStart::Keyword(TxKeyword::Aligned) => {
                    let k = last_cycle.map_or(0, |c| c + 1);
                    (self.aligned_start(k, airtime, &mut rng), Some(k))
                }
            };
            if oc_index.is_some() {
                last_cycle = oc_index;
            }
            frames.push(ScheduledFrame {
                payload: entry.payload.value(),
                bits,
                start,
                oc_index,
            });
        }
        frames.sort_by(|a, b| a.start.total_cmp(&b.start));
        frames
    }

    fn aligned_start(&self, cycle: usize, airtime: f64, rng: &mut ChaCha8Rng) -> f64 {
        let h = &self.harvester;
        let base = h.oc_start(cycle) + self.channel.tx_guard;
        match self.channel.tx_alignment {
            TxAlignment::Aligned => base,
            TxAlignment::RandomOffset => {
                let slack = (h.oc_duration - self.channel.tx_guard - airtime).max(0.0);
                base + rng.random::<f64>() * slack
            }
        }
    }

    /// Check every config invariant; an empty list means the config is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut check = |ok: bool, field: &str, message: String| {
            if !ok {
                v.push(Violation {
                    field: field.to_string(),
                    message,
                });
            }
        };

        check(
            self.clock_hz > 0.0 && self.clock_hz.is_finite(),
            "clock_hz",
            format!("must be positive, got {}", self.clock_hz),
        );
        check(
            self.dt > 0.0 && self.dt.is_finite(),
            "dt",
            format!("must be positive, got {}", self.dt),
        );
        if self.clock_hz > 0.0 {
            let max_dt = 1.0 / (4.0 * self.clock_hz);
            check(
                self.dt <= max_dt * (1.0 + 1e-9),
                "dt",
                format!(
                    "must be <= {max_dt} s for 4 samples per bit, got {}",
                    self.dt
                ),
            );
        }
        check(
            self.duration > 0.0 && self.duration.is_finite(),
            "duration",
            format!("must be positive, got {}", self.duration),
        );

        let c = &self.channel;
        check(
            c.v_dc.is_finite(),
            "channel.v_dc",
            format!("must be finite, got {}", c.v_dc),
        );
        check(
            c.mod_depth >= 0.0,
            "channel.mod_depth",
            format!("must be >= 0, got {}", c.mod_depth),
        );
        check(
            c.noise_sigma >= 0.0,
            "channel.noise_sigma",
            format!("must be >= 0, got {}", c.noise_sigma),
        );
        check(
            c.interference_amp >= 0.0,
            "channel.interference_amp",
            format!("must be >= 0, got {}", c.interference_amp),
        );
        check(
            c.interference_hz > 0.0,
            "channel.interference_hz",
            format!("must be positive, got {}", c.interference_hz),
        );
        check(
            c.p_harvest >= 0.0,
            "channel.p_harvest",
            format!("must be >= 0, got {}", c.p_harvest),
        );
        check(
            c.tx_guard >= 0.0,
            "channel.tx_guard",
            format!("must be >= 0, got {}", c.tx_guard),
        );

        if let Err(e) = self.harvester.validate() {
            check(false, "harvester", e.to_string());
        }
        if let Err(e) = self.afe.validate() {
            check(false, "afe", e.to_string());
        }
        if let Err(e) = self.decision.validate(self.harvester.oc_duration) {
            check(false, "decision", e.to_string());
        }
        if let Err(e) = self.profiles() {
            check(false, "profiles", e.to_string());
        }
        for (i, e) in self.tx_schedule.iter().enumerate() {
            if let TxStart::At(t) = e.start {
                check(
                    t >= 0.0 && t.is_finite(),
                    &format!("tx_schedule.{i}.start"),
                    format!("must be >= 0, got {t}"),
                );
            }
        }
        if v.is_empty() {
            let frames = self.resolve_schedule();
            for w in frames.windows(2) {
                if w[1].start < w[0].end() {
                    v.push(Violation {
                        field: "tx_schedule".into(),
                        message: format!(
                            "frames starting at {} s and {} s overlap",
                            w[0].start, w[1].start
                        ),
                    });
                }
            }
        }
        v
    }
}

pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}
