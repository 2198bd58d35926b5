//! Per-state energy/power/time table in the layout of the hardware
//! characterization (mJ, mW, s).

use serde::Serialize;
use std::fmt::Write;

use crate::node::Mode;
use crate::sim::SummaryMetrics;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub state: Mode,
    pub e_avg_mj: f64,
    pub p_avg_mw: f64,
    pub t_avg_s: f64,
    pub occurrences: usize,
}

/// Rows for INIT, SLEEP, BLE and VLC+BLE, in that order.
pub fn report_rows(metrics: &SummaryMetrics) -> Vec<ReportRow> {
    [Mode::Init, Mode::Sleep, Mode::Ble, Mode::VlcBle]
        .into_iter()
        .map(|m| {
            let s = metrics.state(m);
            ReportRow {
                state: m,
                e_avg_mj: s.mean_energy(),
                p_avg_mw: s.mean_power,
                t_avg_s: s.mean_duration,
                occurrences: s.occurrences,
            }
        })
        .collect()
}

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "| {:<8} | {:>10} | {:>10} | {:>9} | {:>3} |",
        "State", "E_avg [mJ]", "P_avg [mW]", "t_avg [s]", "n"
    );
    let _ = writeln!(
        out,
        "|{:-<10}|{:-<12}|{:-<12}|{:-<11}|{:-<5}|",
        "", "", "", "", ""
    );
    for r in rows {
        let _ = writeln!(
            out,
            "| {:<8} | {:>10.3} | {:>10.3} | {:>9.3} | {:>3} |",
            r.state.label(),
            r.e_avg_mj,
            r.p_avg_mw,
            r.t_avg_s,
            r.occurrences
        );
    }
    out
}
