//! Analog front-end: DC-blocking high-pass filter followed by a Schmitt-trigger
//! digitizer.
//!
//! The high-pass output of an NRZ signal is a train of decaying spikes at the
//! bit edges. With thresholds symmetric around zero the digitizer latches on
//! each spike, so its output reproduces the transmitted levels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AfeError {
    #[error("timestep must be positive and finite, got {0}")]
    NonPositiveTimestep(f64),
    #[error("cutoff frequency must be positive, got {0}")]
    NonPositiveCutoff(f64),
    #[error("digitizer threshold_low {low} exceeds threshold_high {high}")]
    InvertedThresholds { low: f64, high: f64 },
    #[error("slew rate must be positive, got {0}")]
    NonPositiveSlewRate(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AfeConfig {
    pub cutoff_hz: f64,
    pub threshold_high: f64,
    pub threshold_low: f64,
    /// Optional op-amp output slew limit, V/s. `None` disables it.
    pub slew_rate: Option<f64>,
}

impl Default for AfeConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 215.0,
            threshold_high: 0.02,
            threshold_low: -0.02,
            slew_rate: None,
        }
    }
}

impl AfeConfig {
    pub fn validate(&self) -> Result<(), AfeError> {
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz.is_finite()) {
            return Err(AfeError::NonPositiveCutoff(self.cutoff_hz));
        }
        if self.threshold_low > self.threshold_high {
            return Err(AfeError::InvertedThresholds {
                low: self.threshold_low,
                high: self.threshold_high,
            });
        }
        if let Some(s) = self.slew_rate {
            if !(s > 0.0) {
                return Err(AfeError::NonPositiveSlewRate(s));
            }
        }
        Ok(())
    }
}

/// First-order RC high-pass filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighPassState {
    pub cutoff_hz: f64,
    pub prev_input: f64,
    pub prev_output: f64,
}

impl HighPassState {
    pub fn new(cutoff_hz: f64) -> Result<Self, AfeError> {
        if !(cutoff_hz > 0.0 && cutoff_hz.is_finite()) {
            return Err(AfeError::NonPositiveCutoff(cutoff_hz));
        }
        Ok(Self {
            cutoff_hz,
            prev_input: 0.0,
            prev_output: 0.0,
        })
    }

    pub fn time_constant(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.cutoff_hz)
    }

    /// Recurrence coefficient `RC / (RC + dt)`.
    pub fn coefficient(&self, dt: f64) -> f64 {
        let rc = self.time_constant();
        rc / (rc + dt)
    }
}

/// `y[n] = a * (y[n-1] + x[n] - x[n-1])`, `a = RC / (RC + dt)`.
pub fn hp_filter_step(
    state: HighPassState,
    x: f64,
    dt: f64,
) -> Result<(HighPassState, f64), AfeError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(AfeError::NonPositiveTimestep(dt));
    }
    let a = state.coefficient(dt);
    let y = a * (state.prev_output + x - state.prev_input);
    Ok((
        HighPassState {
            prev_input: x,
            prev_output: y,
            ..state
        },
        y,
    ))
}

/// Comparator with hysteresis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Digitizer {
    pub threshold_high: f64,
    pub threshold_low: f64,
    pub last_level: bool,
}

impl Digitizer {
    pub fn new(threshold_low: f64, threshold_high: f64) -> Result<Self, AfeError> {
        if threshold_low > threshold_high {
            return Err(AfeError::InvertedThresholds {
                low: threshold_low,
                high: threshold_high,
            });
        }
        Ok(Self {
            threshold_high,
            threshold_low,
            last_level: false,
        })
    }
}

pub fn digitize_step(d: Digitizer, y: f64) -> (Digitizer, bool) {
    let level = if y > d.threshold_high {
        true
    } else if y < d.threshold_low {
        false
    } else {
        d.last_level
    };
    (
        Digitizer {
            last_level: level,
            ..d
        },
        level,
    )
}

/// Filter, optional slew limit and digitizer chained at a fixed timestep.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    filter: HighPassState,
    digitizer: Digitizer,
    slew_rate: Option<f64>,
    dt: f64,
    out: f64,
}

impl FrontEnd {
    pub fn new(cfg: &AfeConfig, dt: f64) -> Result<Self, AfeError> {
        cfg.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(AfeError::NonPositiveTimestep(dt));
        }
        if dt > 1.0 / (10.0 * cfg.cutoff_hz) {
            log::warn!(
                "timestep {dt} s is coarse for a {} Hz high-pass; response will be distorted",
                cfg.cutoff_hz
            );
        }
        Ok(Self {
            filter: HighPassState::new(cfg.cutoff_hz)?,
            digitizer: Digitizer::new(cfg.threshold_low, cfg.threshold_high)?,
            slew_rate: cfg.slew_rate,
            dt,
            out: 0.0,
        })
    }

    /// Returns the analog output and the logic level for one input sample.
    pub fn process(&mut self, x: f64) -> (f64, bool) {
        let (filter, y) = hp_filter_step(self.filter, x, self.dt).expect("dt checked in new");
        self.filter = filter;
        let y = match self.slew_rate {
            Some(rate) => {
                let max_step = rate * self.dt;
                self.out + (y - self.out).clamp(-max_step, max_step)
            }
            None => y,
        };
        self.out = y;
        let (d, level) = digitize_step(self.digitizer, y);
        self.digitizer = d;
        (y, level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn run_filter(cutoff: f64, dt: f64, xs: impl IntoIterator<Item = f64>) -> Vec<f64> {
        let mut s = HighPassState::new(cutoff).unwrap();
        xs.into_iter()
            .map(|x| {
                let (n, y) = hp_filter_step(s, x, dt).unwrap();
                s = n;
                y
            })
            .collect()
    }

    /// Peak |y| over the last whole periods of a sine response.
    fn steady_gain(freq: f64, cutoff: f64, dt: f64) -> f64 {
        let n_settle = (0.1 / dt) as usize;
        let n_meas = ((20.0 / freq) / dt) as usize;
        let ys = run_filter(
            cutoff,
            dt,
            (0..n_settle + n_meas).map(|i| (2.0 * PI * freq * i as f64 * dt).sin()),
        );
        ys[n_settle..].iter().fold(0.0f64, |m, y| m.max(y.abs()))
    }

    /// Closed-form magnitude of the discrete recurrence at `freq`.
    fn discrete_gain(freq: f64, cutoff: f64, dt: f64) -> f64 {
        let rc = 1.0 / (2.0 * PI * cutoff);
        let a = rc / (rc + dt);
        let w = 2.0 * PI * freq * dt;
        let num = 2.0 * (w / 2.0).sin();
        let den = ((1.0 - a * w.cos()).powi(2) + (a * w.sin()).powi(2)).sqrt();
        a * num / den
    }

    #[test]
    fn coefficient_matches_closed_form() {
        let s = HighPassState::new(215.0).unwrap();
        // RC = 1 / (2 pi 215) = 740.2555 us, a = RC / (RC + 50 us)
        assert!((s.time_constant() - 740.2555e-6).abs() < 1e-10);
        assert!((s.coefficient(50e-6) - 0.936_729_33).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_timestep() {
        let s = HighPassState::new(215.0).unwrap();
        assert_eq!(
            hp_filter_step(s, 1.0, 0.0),
            Err(AfeError::NonPositiveTimestep(0.0))
        );
    }

    #[test]
    fn zero_history_zero_output() {
        let ys = run_filter(215.0, 50e-6, [0.0; 10]);
        assert!(ys.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn rejects_dc() {
        let ys = run_filter(215.0, 50e-6, std::iter::repeat_n(3.3, 2000));
        assert!(ys.last().unwrap().abs() < 1e-3);
    }

    #[test]
    fn gain_at_cutoff_and_decade() {
        let at_cutoff = steady_gain(215.0, 215.0, 10e-6);
        let at_decade = steady_gain(2150.0, 215.0, 10e-6);
        assert!(
            (at_cutoff / std::f64::consts::FRAC_1_SQRT_2 - 1.0).abs() < 0.01,
            "{at_cutoff}"
        );
        assert!(
            (at_decade / (10.0 / 101f64.sqrt()) - 1.0).abs() < 0.01,
            "{at_decade}"
        );
    }

    #[test]
    fn measured_gain_matches_discrete_transfer_function() {
        // Holds at any timestep, including the coarse 50 us simulator step.
        for dt in [10e-6, 25e-6, 50e-6] {
            for f in [100.0, 215.0, 800.0, 2150.0] {
                let g = steady_gain(f, 215.0, dt);
                let h = discrete_gain(f, 215.0, dt);
                assert!((g / h - 1.0).abs() < 2e-3, "dt={dt} f={f} g={g} h={h}");
            }
        }
    }

    #[test]
    fn filter_is_linear() {
        let x1: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 * 0.01).collect();
        let x2: Vec<f64> = (0..500).map(|i| ((i * 53) % 89) as f64 * -0.02).collect();
        let (al, be) = (1.7, -0.4);
        let y1 = run_filter(215.0, 50e-6, x1.iter().copied());
        let y2 = run_filter(215.0, 50e-6, x2.iter().copied());
        let y = run_filter(
            215.0,
            50e-6,
            x1.iter().zip(&x2).map(|(a, b)| al * a + be * b),
        );
        for i in 0..500 {
            let expect = al * y1[i] + be * y2[i];
            assert!((y[i] - expect).abs() <= 1e-9 * expect.abs().max(1e-9));
        }
    }

    #[test]
    fn hysteresis_holds_level() {
        let d = Digitizer::new(-0.02, 0.02).unwrap();
        let (d, l) = digitize_step(d, 1.0);
        assert!(l);
        let (d, l) = digitize_step(d, 0.0);
        assert!(l);
        let (d, l) = digitize_step(d, -0.019);
        assert!(l);
        let (_, l) = digitize_step(d, -0.5);
        assert!(!l);
    }

    #[test]
    fn square_wave_recovered_through_front_end() {
        use crate::codec::{encode_frame, VlcFrame};
        // 800 bit/s, 200 mV swing on a 3 V operating point.
        let f = VlcFrame::from_u32(0xC3A50F).unwrap();
        let bits = encode_frame(&f).bits;
        let dt = 50e-6;
        let spb = 25;
        let mut fe = FrontEnd::new(&AfeConfig::default(), dt).unwrap();
        // settle the operating point first
        for _ in 0..4000 {
            fe.process(3.0);
        }
        let mut levels = Vec::new();
        for &b in &bits {
            for _ in 0..spb {
                levels.push(fe.process(if b { 3.2 } else { 3.0 }).1);
            }
        }
        let rx: Vec<bool> = (0..bits.len()).map(|k| levels[k * spb + spb / 2]).collect();
        assert_eq!(rx, bits);
    }

    #[test]
    fn slew_limit_bounds_output_rate() {
        let cfg = AfeConfig {
            slew_rate: Some(100.0),
            ..Default::default()
        };
        let mut fe = FrontEnd::new(&cfg, 50e-6).unwrap();
        let mut prev = 0.0;
        for i in 0..200 {
            let (y, _) = fe.process(if i % 40 < 20 { 0.0 } else { 1.0 });
            assert!((y - prev).abs() <= 100.0 * 50e-6 + 1e-12);
            prev = y;
        }
    }

    #[test]
    fn replay_is_identical() {
        let xs: Vec<f64> = (0..3000).map(|i| ((i as f64) * 0.37).sin() * 0.1).collect();
        let run = || {
            let mut fe = FrontEnd::new(&AfeConfig::default(), 50e-6).unwrap();
            xs.iter().map(|&x| fe.process(x).1).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
