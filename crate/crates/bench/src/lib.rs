//! Fixtures shared by the benchmarks.

use solarvlc::channel::render_panel_voltage;
use solarvlc::codec::encode_frame;
use solarvlc::{ChannelConfig, SignalTrace, SimConfig, Transmission, TxEntry, VlcFrame};

/// Charged node, one aligned frame per window, `windows` windows long.
pub fn aligned_scenario(windows: usize) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.harvester.v_initial = 4.5;
    cfg.duration = cfg.harvester.oc_start(windows.saturating_sub(1)) + 0.2;
    cfg.tx_schedule = (0..windows)
        .map(|k| TxEntry::in_cycle(k, (0x2468AC + k as u32) & 0xFF_FFFF))
        .collect();
    cfg
}

/// Panel voltage over one open-circuit window carrying `payload`.
pub fn window_panel_trace(payload: u32, dt: f64) -> SignalTrace {
    let frame = VlcFrame::from_u32(payload).expect("24-bit payload");
    let tx = Transmission::new(encode_frame(&frame), 1.25e-3);
    render_panel_voltage(
        &ChannelConfig::default(),
        Some(&tx),
        &[(0.0, 0.082)],
        0.0,
        0.082,
        dt,
    )
    .expect("valid trace")
}
