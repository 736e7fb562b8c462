use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{processed_input_ratio, InputRatio, MetricsRecord};
use super::SimError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "timeseries.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node_id: String,
    pub operative_time: usize,
    pub offloads: u32,
    pub final_battery_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub num_slots: usize,
    pub slots_run: usize,
    pub nodes: Vec<NodeSummary>,
    /// Smallest operative time over all nodes.
    pub objective: usize,
    pub processed_inputs: InputRatio,
}

impl Summary {
    pub fn from_record(record: &MetricsRecord) -> Self {
        let taus = record.operative_times();
        let nodes = record
            .node_ids
            .iter()
            .zip(taus)
            .map(|(id, tau)| NodeSummary {
                node_id: id.clone(),
                operative_time: tau,
                offloads: record.node_rows(id).map(|r| r.offload_events).sum(),
                final_battery_pct: record.node_rows(id).last().map_or(0.0, |r| r.battery_pct),
            })
            .collect();
        Summary {
            scenario: record.scenario.clone(),
            seed: record.seed,
            num_slots: record.num_slots,
            slots_run: record.slots_run,
            nodes,
            objective: record.objective(),
            processed_inputs: processed_input_ratio(record),
        }
    }
}

pub fn write_metrics_csv<W: Write>(record: &MetricsRecord, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "slot",
        "node_id",
        "battery_pct",
        "cpu_pct",
        "workloads",
        "generated",
        "processed",
        "mean_proc_ms",
    ])?;
    for r in &record.rows {
        w.write_record([
            r.slot.to_string(),
            r.node_id.clone(),
            format!("{:.4}", r.battery_pct),
            format!("{:.1}", r.cpu_pct),
            r.workloads.to_string(),
            r.generated.to_string(),
            r.processed.to_string(),
            format!("{:.1}", r.mean_proc_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_csv<W: Write>(record: &MetricsRecord, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "time_ms", "node_id", "kind", "detail"])?;
    for e in &record.events {
        w.write_record([
            e.slot.to_string(),
            e.time_ms.to_string(),
            e.node_id.clone(),
            e.kind.clone(),
            e.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

type Panel<'a> = (&'a str, f64, fn(&super::metrics::SlotMetrics) -> f64);

/// Battery, CPU and container count per node over time, one panel each.
pub fn write_timeseries_svg(record: &MetricsRecord, path: &Path) -> Result<(), SimError> {
    let plot_err = |e: &dyn std::fmt::Display| SimError::Plot(e.to_string());
    let root = SVGBackend::new(path, (900, 900)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let areas = root.split_evenly((3, 1));
    let max_workloads = record.rows.iter().map(|r| r.workloads).max().unwrap_or(0).max(1) as f64;
    let panels: [Panel; 3] = [
        ("battery (%)", 100.0, |r| r.battery_pct),
        ("cpu (%)", 100.0, |r| r.cpu_pct),
        ("containers", max_workloads + 0.5, |r| r.workloads as f64),
    ];
    let minutes = record.slot_ms as f64 / 60_000.0;
    let x_max = (record.slots_run.max(1) as f64 * minutes).max(f64::MIN_POSITIVE);
    for (area, (label, y_max, value)) in areas.iter().zip(panels) {
        let mut chart = ChartBuilder::on(area)
            .margin(12)
            .x_label_area_size(28)
            .y_label_area_size(44)
            .build_cartesian_2d(0.0..x_max, 0.0..y_max)
            .map_err(|e| plot_err(&e))?;
        chart
            .configure_mesh()
            .x_desc("time (min)")
            .y_desc(label)
            .draw()
            .map_err(|e| plot_err(&e))?;
        for (k, id) in record.node_ids.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let points = record
                .node_rows(id)
                .map(|r| ((r.slot + 1) as f64 * minutes, value(r)));
            chart
                .draw_series(LineSeries::new(points, &color))
                .map_err(|e| plot_err(&e))?
                .label(id.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(&e))?;
    }
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

/// Writes metrics.csv, events.csv, summary.json and timeseries.svg into
/// `out_dir`, creating it if needed. Returns the written paths.
pub fn export_results(record: &MetricsRecord, out_dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    std::fs::create_dir_all(out_dir)?;
    let metrics = out_dir.join(METRICS_FILE);
    write_metrics_csv(record, BufWriter::new(File::create(&metrics)?))?;
    let events = out_dir.join(EVENTS_FILE);
    write_events_csv(record, BufWriter::new(File::create(&events)?))?;
    let summary = out_dir.join(SUMMARY_FILE);
    let mut file = BufWriter::new(File::create(&summary)?);
    serde_json::to_writer_pretty(&mut file, &Summary::from_record(record)).map_err(std::io::Error::from)?;
    file.write_all(b"\n")?;
    file.flush()?;
    let plot = out_dir.join(PLOT_FILE);
    write_timeseries_svg(record, &plot)?;
    Ok(vec![metrics, events, summary, plot])
}
