#![allow(clippy::field_reassign_with_default)]

use solarvlc::harvester::HarvesterEventKind;
use solarvlc::node::PacketKind;
use solarvlc::sim::FrameOutcome;
use solarvlc::*;

/// One aligned frame per window from `from`, skipping windows whose
/// VLC+BLE episode would not finish before the run ends.
fn every_cycle(cfg: &mut SimConfig, from: usize) {
    let h = &cfg.harvester;
    let tail = cfg.decision.sense_window + 0.118;
    cfg.tx_schedule = (from..)
        .take_while(|&k| h.oc_start(k) + tail < cfg.duration)
        .map(|k| TxEntry::in_cycle(k, (0x13579B + 0x0F0F01 * k as u32) & 0xFF_FFFF))
        .collect();
}

#[test]
fn energy_ledger_balances() {
    for v0 in [0.0, 3.0, 4.5] {
        let mut cfg = SimConfig::default();
        cfg.harvester.v_initial = v0;
        let out = run_simulation(&cfg).unwrap();
        let l = &out.ledger;
        let scale = l.harvested.max(l.consumed).max(l.initial).max(1e-12);
        assert!(
            l.imbalance().abs() <= 1e-9 * scale,
            "v0 {v0}: imbalance {} of {scale}",
            l.imbalance()
        );
        assert!(l.discarded > 0.0 || v0 < 4.5);
        assert_eq!(l.deficit, 0.0);
    }
}

#[test]
fn no_application_below_overcharge() {
    let mut cfg = SimConfig::default();
    cfg.duration = 120.0;
    cfg.channel.p_harvest = 90e-6;
    every_cycle(&mut cfg, 0);
    let out = run_simulation(&cfg).unwrap();
    let v_gate = cfg.decision.v_overcharge_adc;
    let apps: Vec<_> = out
        .episodes
        .iter()
        .filter(|e| e.mode.is_application())
        .collect();
    assert!(!apps.is_empty());
    for e in &apps {
        assert!(
            e.v_cap_start >= v_gate,
            "{:?} started at {} V",
            e.mode,
            e.v_cap_start
        );
    }
    for d in &out.decisions {
        if d.decision != Decision::StaySleep {
            assert!(d.v_cap >= v_gate);
        }
    }
    // Weak light leaves some cycles below the gate.
    assert!(out
        .decisions
        .iter()
        .any(|d| d.decision == Decision::StaySleep && d.v_cap >= 3.67));
}

#[test]
fn off_tracks_output_enable() {
    let mut cfg = SimConfig::default();
    cfg.duration = 150.0;
    cfg.channel.p_harvest = 60e-6;
    cfg.profiles = solarvlc::node::default_profiles()
        .into_iter()
        .map(|mut p| {
            if p.state == Mode::Sleep {
                // Sleep draw above the harvest forces repeated brownouts.
                p.p_avg = 150e-6;
                p.e_avg = p.p_avg * p.t_avg;
            }
            p
        })
        .collect();
    let mut mismatches = 0;
    let mut disables = 0;
    let out = run_simulation_with(&cfg, |v| {
        if (v.mode == Mode::Off) == v.harvester.output_enabled {
            mismatches += 1;
        }
        if v.mode == Mode::Off {
            assert_eq!(v.p_load, 0.0);
        }
        disables += v
            .events
            .iter()
            .filter(|e| e.kind == HarvesterEventKind::OutputDisabled)
            .count();
    })
    .unwrap();
    assert_eq!(mismatches, 0);
    assert!(disables >= 2, "scenario should brown out, got {disables}");
    assert_eq!(out.metrics.brownouts, disables);
}

#[test]
fn liveness_under_sufficient_light() {
    let mut cfg = SimConfig::default();
    cfg.duration = 120.0;
    cfg.channel.p_harvest = 200e-6;
    every_cycle(&mut cfg, 0);
    let out = run_simulation(&cfg).unwrap();
    let h = &cfg.harvester;
    let enabled_at = out
        .episodes
        .iter()
        .find(|e| e.mode == Mode::Init)
        .map(|e| e.start)
        .expect("charges up");
    let first_app = out
        .episodes
        .iter()
        .find(|e| e.mode.is_application())
        .expect("runs an application")
        .start;
    assert!(first_app > enabled_at);

    let mut k = 0;
    while h.oc_start(k) < first_app - h.oc_duration {
        k += 1;
    }
    let mut cycles = 0;
    while h.oc_start(k) + h.oc_duration <= cfg.duration {
        let (a, b) = (h.oc_start(k), h.oc_start(k) + h.oc_duration);
        assert!(
            out.episodes
                .iter()
                .any(|e| e.mode.is_application() && e.start >= a && e.start <= b),
            "no application in window {k}"
        );
        cycles += 1;
        k += 1;
    }
    assert!(cycles >= 15);
    assert_eq!(out.metrics.brownouts, 0);
    let v_min = out
        .trace
        .iter()
        .filter(|r| r.t > enabled_at)
        .map(|r| r.v_cap)
        .fold(f64::INFINITY, f64::min);
    assert!(v_min > h.v_disable, "v_cap fell to {v_min}");
}

#[test]
fn decisions_follow_their_window() {
    let mut cfg = SimConfig::default();
    cfg.duration = 80.0;
    every_cycle(&mut cfg, 4);
    let h = cfg.harvester.clone();
    let mut oc_starts = Vec::new();
    let out = run_simulation_with(&cfg, |v| {
        for e in v.events {
            if e.kind == HarvesterEventKind::OpenCircuitStart {
                oc_starts.push(e.time);
            }
        }
    })
    .unwrap();
    assert!(!out.decisions.is_empty());
    for d in &out.decisions {
        let start = oc_starts[d.oc_index];
        assert!(start <= d.indicator_time + 1e-9);
        assert!(d.indicator_time <= d.decision_time);
        assert!(d.decision_time <= start + h.oc_duration);
    }
    for e in out.episodes.iter().filter(|e| e.mode.is_application()) {
        assert!(
            oc_starts
                .iter()
                .any(|&s| e.start >= s && e.start <= s + h.oc_duration),
            "{:?} at {} outside every window",
            e.mode,
            e.start
        );
    }
    // Trace events appear in time order.
    let mut last = f64::NEG_INFINITY;
    for r in out.trace.iter().filter(|r| r.event.is_some()) {
        assert!(r.t >= last);
        last = r.t;
    }
}

#[test]
fn aligned_frames_each_cycle_all_decode() {
    let mut cfg = SimConfig::default();
    cfg.channel.noise_sigma = 0.0;
    // The first window the node can answer is the one after charge-up.
    every_cycle(&mut cfg, 5);
    let out = run_simulation(&cfg).unwrap();
    assert_eq!(out.metrics.frames_sent, cfg.tx_schedule.len());
    assert_eq!(out.metrics.frame_success_rate, Some(1.0));
    let sleep = out.metrics.state(Mode::Sleep);
    assert!((sleep.mean_power - 0.030).abs() <= 0.05 * 0.030);
}

#[test]
fn decoded_frames_echo_their_payload() {
    let mut cfg = SimConfig::default();
    cfg.harvester.v_initial = 4.5;
    cfg.channel.noise_sigma = 0.03;
    cfg.duration = 100.0;
    every_cycle(&mut cfg, 0);
    let out = run_simulation(&cfg).unwrap();
    let echoes: Vec<u32> = out
        .packets
        .iter()
        .filter(|(_, p)| p.kind == PacketKind::Echo)
        .map(|(_, p)| p.payload)
        .collect();
    let decoded: Vec<&FrameOutcome> = out.frames.iter().filter(|f| f.decoded()).collect();
    for f in &decoded {
        assert_eq!(f.received, Some(f.payload));
        assert!(echoes.contains(&f.payload));
    }
    assert_eq!(decoded.len(), out.metrics.frames_decoded);
    let rate = out.metrics.frame_success_rate.unwrap();
    assert!((rate - decoded.len() as f64 / out.metrics.frames_sent as f64).abs() < 1e-12);
}

#[test]
fn halving_timestep_keeps_results() {
    let cfg = SimConfig::default();
    let fine = SimConfig {
        dt: cfg.dt / 2.0,
        ..cfg.clone()
    };
    let a = run_simulation(&cfg).unwrap().metrics;
    let b = run_simulation(&fine).unwrap().metrics;
    assert_eq!(a.frame_success_rate, b.frame_success_rate);
    for m in [Mode::Init, Mode::Sleep, Mode::Ble, Mode::VlcBle] {
        let (ea, eb) = (a.state(m).mean_energy(), b.state(m).mean_energy());
        assert!(
            ((ea - eb) / ea).abs() < 0.005,
            "{}: {ea} vs {eb}",
            m.label()
        );
    }
}
