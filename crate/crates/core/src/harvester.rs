//! Energy harvester with a capacitor store.
//!
//! The store is tracked as capacitor voltage; each step converts to energy
//! `E = C v^2 / 2`, applies the net power for `dt`, and converts back. The
//! regulated output is switched on above `v_enable` and off below `v_disable`.
//! Every `oc_period` the harvester disconnects the panel for `oc_duration` to
//! sample its open-circuit voltage; nothing is harvested during that window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarvesterError {
    #[error("load of {0} W drawn while the output is disabled")]
    LoadWhileDisabled(f64),
    #[error("timestep must be positive and finite, got {0}")]
    NonPositiveTimestep(f64),
    #[error("power must be non-negative, got {0}")]
    NegativePower(f64),
    #[error("voltage range inverted: from {from} V to {to} V")]
    InvertedRange { from: f64, to: f64 },
    #[error("invalid harvester config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvesterConfig {
    pub c_storage: f64,
    pub v_enable: f64,
    pub v_disable: f64,
    pub v_max: f64,
    pub v_out: f64,
    pub oc_period: f64,
    pub oc_duration: f64,
    pub harvest_efficiency: f64,
    /// Capacitor voltage at t = 0.
    pub v_initial: f64,
}

impl Default for HarvesterConfig {
    fn default() -> Self {
        Self {
            c_storage: 470e-6,
            v_enable: 3.67,
            v_disable: 2.8,
            v_max: 4.5,
            v_out: 2.5,
            oc_period: 5.0,
            oc_duration: 0.082,
            harvest_efficiency: 1.0,
            v_initial: 0.0,
        }
    }
}

impl HarvesterConfig {
    pub fn validate(&self) -> Result<(), HarvesterError> {
        let bad = |m: String| Err(HarvesterError::InvalidConfig(m));
        if !(self.c_storage > 0.0) {
            return bad(format!(
                "c_storage must be positive, got {}",
                self.c_storage
            ));
        }
        if !(self.v_disable < self.v_enable && self.v_enable < self.v_max) {
            return bad(format!(
                "need v_disable < v_enable < v_max, got {} / {} / {}",
                self.v_disable, self.v_enable, self.v_max
            ));
        }
        if !(self.oc_duration > 0.0 && self.oc_duration < self.oc_period) {
            return bad(format!(
                "need 0 < oc_duration < oc_period, got {} / {}",
                self.oc_duration, self.oc_period
            ));
        }
        if !(self.harvest_efficiency > 0.0 && self.harvest_efficiency <= 1.0) {
            return bad(format!(
                "harvest_efficiency must be in (0, 1], got {}",
                self.harvest_efficiency
            ));
        }
        if !(self.v_initial >= 0.0 && self.v_initial <= self.v_max) {
            return bad(format!(
                "v_initial must be in [0, v_max], got {}",
                self.v_initial
            ));
        }
        if !(self.v_out > 0.0) {
            return bad(format!("v_out must be positive, got {}", self.v_out));
        }
        Ok(())
    }

    pub fn energy_at(&self, v: f64) -> f64 {
        0.5 * self.c_storage * v * v
    }

    pub fn voltage_for(&self, energy: f64) -> f64 {
        (2.0 * energy.max(0.0) / self.c_storage).sqrt()
    }

    /// Start of the `k`-th open-circuit window (0-based).
    pub fn oc_start(&self, k: usize) -> f64 {
        (self.oc_period - self.oc_duration) + k as f64 * self.oc_period
    }

    /// Open-circuit windows that begin before `horizon`.
    pub fn oc_intervals(&self, horizon: f64) -> Vec<(f64, f64)> {
        (0..)
            .map(|k| self.oc_start(k))
            .take_while(|&s| s < horizon)
            .map(|s| (s, s + self.oc_duration))
            .collect()
    }
}

/// Energy between two capacitor voltages, J.
pub fn usable_energy(cfg: &HarvesterConfig, v_from: f64, v_to: f64) -> Result<f64, HarvesterError> {
    if v_to > v_from {
        return Err(HarvesterError::InvertedRange {
            from: v_from,
            to: v_to,
        });
    }
    Ok(0.5 * cfg.c_storage * (v_from * v_from - v_to * v_to))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarvesterEventKind {
    OutputEnabled,
    OutputDisabled,
    OpenCircuitStart,
    OpenCircuitEnd,
    Overcharged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarvesterEvent {
    pub kind: HarvesterEventKind,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarvesterState {
    pub v_cap: f64,
    pub output_enabled: bool,
    pub in_open_circuit: bool,
    /// Time spent in the current (open-circuit or connected) phase.
    pub time_in_phase: f64,
    /// Harvester clock.
    pub time: f64,
    /// Compensation term of the clock's running sum.
    pub clock_carry: f64,
    /// Open-circuit windows entered so far.
    pub oc_count: usize,
    /// Inside a continuous run of steps clamped at `v_max`.
    pub saturated: bool,
}

impl HarvesterState {
    pub fn initial(cfg: &HarvesterConfig) -> Self {
        Self {
            v_cap: cfg.v_initial,
            output_enabled: false,
            in_open_circuit: false,
            time_in_phase: 0.0,
            time: 0.0,
            clock_carry: 0.0,
            oc_count: 0,
            saturated: false,
        }
    }

    /// Clock time of the next phase change.
    pub fn next_phase_change(&self, cfg: &HarvesterConfig) -> f64 {
        if self.in_open_circuit {
            cfg.oc_start(self.oc_count.saturating_sub(1)) + cfg.oc_duration
        } else {
            cfg.oc_start(self.oc_count)
        }
    }

    pub fn energy(&self, cfg: &HarvesterConfig) -> f64 {
        cfg.energy_at(self.v_cap)
    }
}

/// Energy moved during one step, J.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepFlows {
    pub harvested: f64,
    pub consumed: f64,
    /// Surplus thrown away at the `v_max` clamp.
    pub discarded: f64,
    /// Load energy that the store could not supply.
    pub deficit: f64,
}

/// Advance the harvester by `dt`, appending any events to `events`.
pub fn step_into(
    state: &mut HarvesterState,
    cfg: &HarvesterConfig,
    p_harvest: f64,
    p_load: f64,
    dt: f64,
    events: &mut Vec<HarvesterEvent>,
) -> Result<StepFlows, HarvesterError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(HarvesterError::NonPositiveTimestep(dt));
    }
    if p_harvest < 0.0 {
        return Err(HarvesterError::NegativePower(p_harvest));
    }
    if p_load < 0.0 {
        return Err(HarvesterError::NegativePower(p_load));
    }
    if p_load > 0.0 && !state.output_enabled {
        return Err(HarvesterError::LoadWhileDisabled(p_load));
    }

    let p_in = if state.in_open_circuit {
        0.0
    } else {
        cfg.harvest_efficiency * p_harvest
    };
    let mut flows = StepFlows {
        harvested: p_in * dt,
        consumed: p_load * dt,
        ..Default::default()
    };
    let e0 = state.energy(cfg);
    let mut e1 = e0 + flows.harvested - flows.consumed;
    if e1 < 0.0 {
        flows.deficit = -e1;
        e1 = 0.0;
    }
    let e_max = cfg.energy_at(cfg.v_max);
    // Kahan sum keeps the clock on the open-circuit schedule over long runs.
    let y = dt - state.clock_carry;
    let t_end = state.time + y;
    let carry = (t_end - state.time) - y;
    if e1 > e_max {
        flows.discarded = e1 - e_max;
        state.v_cap = cfg.v_max;
        if !state.saturated {
            events.push(HarvesterEvent {
                kind: HarvesterEventKind::Overcharged,
                time: t_end,
            });
        }
        state.saturated = true;
    } else {
        state.v_cap = cfg.voltage_for(e1);
        state.saturated = false;
    }

    if !state.output_enabled && state.v_cap >= cfg.v_enable {
        state.output_enabled = true;
        events.push(HarvesterEvent {
            kind: HarvesterEventKind::OutputEnabled,
            time: t_end,
        });
    } else if state.output_enabled && state.v_cap < cfg.v_disable {
        state.output_enabled = false;
        events.push(HarvesterEvent {
            kind: HarvesterEventKind::OutputDisabled,
            time: t_end,
        });
    }

    let boundary = state.next_phase_change(cfg);
    state.time = t_end;
    state.clock_carry = carry;
    state.time_in_phase += dt;
    if t_end >= boundary - dt * 1e-6 {
        state.time_in_phase = t_end - boundary;
        state.in_open_circuit = !state.in_open_circuit;
        if state.in_open_circuit {
            state.oc_count += 1;
        }
        events.push(HarvesterEvent {
            kind: if state.in_open_circuit {
                HarvesterEventKind::OpenCircuitStart
            } else {
                HarvesterEventKind::OpenCircuitEnd
            },
            time: t_end,
        });
    }
    Ok(flows)
}

pub fn harvester_step(
    state: HarvesterState,
    cfg: &HarvesterConfig,
    p_harvest: f64,
    p_load: f64,
    dt: f64,
) -> Result<(HarvesterState, Vec<HarvesterEvent>), HarvesterError> {
    let mut s = state;
    let mut events = Vec::new();
    step_into(&mut s, cfg, p_harvest, p_load, dt, &mut events)?;
    Ok((s, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> HarvesterConfig {
        HarvesterConfig::default()
    }

    fn at(v: f64, enabled: bool) -> HarvesterState {
        HarvesterState {
            v_cap: v,
            output_enabled: enabled,
            ..HarvesterState::initial(&cfg())
        }
    }

    #[test]
    fn idle_step_only_moves_clock() {
        let s = at(3.9, true);
        let (n, ev) = harvester_step(s, &cfg(), 0.0, 0.0, 1e-3).unwrap();
        assert_eq!(n.v_cap, 3.9);
        assert!(ev.is_empty());
        assert_eq!(n.time_in_phase, 1e-3);
    }

    #[test]
    fn drain_init_energy_from_full() {
        // Oracle: sqrt(4.5^2 - 2 * 0.345e-3 / 470e-6)
        let expected = (4.5f64 * 4.5 - 2.0 * 0.345e-3 / 470e-6).sqrt();
        assert!((expected - 4.333_811).abs() < 1e-6);
        let s = at(4.5, true);
        let (n, _) = harvester_step(s, &cfg(), 0.0, 0.345e-3, 1.0).unwrap();
        assert!((n.v_cap - expected).abs() < 1e-12);
    }

    #[test]
    fn enable_fires_once_when_rising() {
        let c = cfg();
        let mut s = at(3.6, false);
        let mut events = Vec::new();
        for _ in 0..20_000 {
            step_into(&mut s, &c, 2e-3, 0.0, 50e-6, &mut events).unwrap();
        }
        assert!(s.v_cap > 3.67);
        let n = events
            .iter()
            .filter(|e| e.kind == HarvesterEventKind::OutputEnabled)
            .count();
        assert_eq!(n, 1);
    }

    #[test]
    fn load_while_disabled_is_fatal() {
        assert_eq!(
            harvester_step(at(2.0, false), &cfg(), 0.0, 1e-3, 1e-3),
            Err(HarvesterError::LoadWhileDisabled(1e-3))
        );
    }

    #[test]
    fn disable_below_threshold() {
        let (n, ev) = harvester_step(at(2.81, true), &cfg(), 0.0, 1e-3, 0.05).unwrap();
        assert!(!n.output_enabled);
        assert_eq!(ev[0].kind, HarvesterEventKind::OutputDisabled);
    }

    #[test]
    fn clamp_emits_one_overcharge_per_saturation() {
        let c = cfg();
        let mut s = at(4.49, true);
        let mut events = Vec::new();
        let mut discarded = 0.0;
        for _ in 0..1000 {
            discarded += step_into(&mut s, &c, 10e-3, 0.0, 1e-3, &mut events)
                .unwrap()
                .discarded;
        }
        assert_eq!(s.v_cap, 4.5);
        assert!(discarded > 0.0);
        assert_eq!(
            events
                .iter()
                .filter(|e| e.kind == HarvesterEventKind::Overcharged)
                .count(),
            1
        );
    }

    #[test]
    fn usable_energy_values() {
        let c = cfg();
        assert_eq!(usable_energy(&c, 3.0, 3.0).unwrap(), 0.0);
        // 0.5 * 470e-6 * (20.25 - 7.84)
        let full = usable_energy(&c, 4.5, 2.8).unwrap();
        assert!((full - 2.916_35e-3).abs() < 1e-8, "{full}");
        let hyst = usable_energy(&c, 3.67, 2.8).unwrap();
        assert!((hyst - 1.322_791_5e-3).abs() < 1e-10, "{hyst}");
        assert!(matches!(
            usable_energy(&c, 2.8, 4.5),
            Err(HarvesterError::InvertedRange { .. })
        ));
    }

    #[test]
    fn open_circuit_schedule() {
        let c = cfg();
        let dt = 50e-6;
        let mut s = at(4.0, true);
        let mut events = Vec::new();
        let steps = (31.0 / dt) as usize;
        for _ in 0..steps {
            step_into(&mut s, &c, 1e-4, 0.0, dt, &mut events).unwrap();
        }
        let starts: Vec<f64> = events
            .iter()
            .filter(|e| e.kind == HarvesterEventKind::OpenCircuitStart)
            .map(|e| e.time)
            .collect();
        let ends: Vec<f64> = events
            .iter()
            .filter(|e| e.kind == HarvesterEventKind::OpenCircuitEnd)
            .map(|e| e.time)
            .collect();
        assert!((starts.len() as i64 - (31.0f64 / 5.0).floor() as i64).abs() <= 1);
        for (k, (a, b)) in starts.iter().zip(&ends).enumerate() {
            assert!((a - c.oc_start(k)).abs() < 1e-6);
            assert!((b - a - 0.082).abs() < dt / 2.0);
        }
        assert_eq!(c.oc_intervals(31.0).len(), starts.len());
    }

    #[test]
    fn schedule_holds_over_many_cycles() {
        let c = cfg();
        let dt = 50e-6;
        let mut s = HarvesterState::initial(&c);
        let mut ev = Vec::new();
        let mut starts = Vec::new();
        let n = (505.0 / dt) as usize;
        for i in 0..n {
            ev.clear();
            step_into(&mut s, &c, 0.0, 0.0, dt, &mut ev).unwrap();
            if ev
                .iter()
                .any(|e| e.kind == HarvesterEventKind::OpenCircuitStart)
            {
                starts.push(i + 1);
            }
        }
        assert_eq!(starts.len(), 101);
        for (k, &i) in starts.iter().enumerate() {
            assert_eq!(i, (c.oc_start(k) / dt).round() as usize, "window {k}");
        }
    }

    #[test]
    fn no_harvest_inside_open_circuit() {
        let c = cfg();
        let mut s = at(4.0, true);
        s.in_open_circuit = true;
        let (n, _) = harvester_step(s, &c, 1.0, 0.0, 1e-3).unwrap();
        assert_eq!(n.v_cap, 4.0);
        let (n2, _) = harvester_step(s, &c, 1.0, 1e-3, 1e-3).unwrap();
        assert!(n2.v_cap < 4.0);
    }

    proptest! {
        #[test]
        fn energy_conserved_without_clamp(
            v in 2.9f64..4.3,
            p_in in 0.0f64..1e-3,
            p_out in 0.0f64..5e-3,
            dt in 1e-6f64..1e-2,
        ) {
            let c = cfg();
            let s = at(v, true);
            let (n, _) = harvester_step(s, &c, p_in, p_out, dt).unwrap();
            prop_assume!(n.v_cap < c.v_max);
            let de = c.energy_at(n.v_cap) - c.energy_at(v);
            prop_assert!((de - (p_in - p_out) * dt).abs() < 1e-12);
        }

        #[test]
        fn hysteresis_band_is_quiet(
            start in 2.85f64..3.6,
            swings in proptest::collection::vec((0.0f64..2e-3, 0.0f64..2e-3), 1..200),
        ) {
            let c = cfg();
            for enabled in [false, true] {
                let mut s = at(start, enabled);
                let mut events = Vec::new();
                for &(p_in, p_out) in &swings {
                    let mut trial = s;
                    let mut scratch = Vec::new();
                    step_into(&mut trial, &c, p_in, if enabled { p_out } else { 0.0 }, 1e-3, &mut scratch).unwrap();
                    if trial.v_cap <= 2.8 || trial.v_cap >= 3.67 {
                        break;
                    }
                    s = trial;
                    events.extend(scratch.into_iter().filter(|e| matches!(
                        e.kind,
                        HarvesterEventKind::OutputEnabled | HarvesterEventKind::OutputDisabled
                    )));
                }
                prop_assert!(events.is_empty());
            }
        }

        #[test]
        fn voltage_stays_in_bounds(
            v in 0.0f64..4.5,
            steps in proptest::collection::vec((0.0f64..0.1, 0.0f64..0.1), 1..100),
        ) {
            let c = cfg();
            let mut s = at(v, v >= c.v_enable);
            let mut events = Vec::new();
            for (p_in, p_out) in steps {
                let load = if s.output_enabled { p_out } else { 0.0 };
                step_into(&mut s, &c, p_in, load, 1e-3, &mut events).unwrap();
                prop_assert!(s.v_cap >= 0.0 && s.v_cap <= c.v_max);
            }
            for w in events.windows(2) {
                prop_assert!(w[0].time <= w[1].time);
            }
        }
    }
}
