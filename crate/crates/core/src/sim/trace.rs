//! Per-step trace rows and their CSV forms. Numbers carry 12 significant
//! digits so repeated runs can be compared byte for byte.

use std::io::Write;

use crate::error::{Error, Result};

use super::{RunResult, Snapshot};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Sweep index, `None` for the continued best run.
    pub k: Option<usize>,
    pub step: usize,
    pub time: f64,
    pub cost: f64,
    /// `‖m − M/N‖` for the straight-ray sector masses.
    pub nominal_error: f64,
    /// Smallest marginal density at a bar.
    pub omega_min: f64,
    /// Agent id of each slot.
    pub ids: Vec<usize>,
    pub workloads: Vec<f64>,
    pub phases: Vec<f64>,
    pub speeds: Vec<f64>,
}

impl TraceRow {
    /// `‖m̂ − mean‖` over the slots.
    pub fn workload_error(&self) -> f64 {
        let mu = self.workloads.iter().sum::<f64>() / self.workloads.len() as f64;
        self.workloads.iter().map(|m| (m - mu).powi(2)).sum::<f64>().sqrt()
    }
}

pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Writes every row of the run. Columns are keyed by agent id; failed
/// agents leave their cells empty.
pub fn write_metrics_csv<W: Write>(result: &RunResult, n_agents: usize, out: W) -> Result<()> {
    let rows = result.sweeps.iter().flat_map(|s| s.rows.iter()).chain(result.final_run.rows.iter());
    write_rows_csv(rows, n_agents, out)
}

pub fn write_rows_csv<'r, W: Write>(rows: impl IntoIterator<Item = &'r TraceRow>, n_agents: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["stage", "k", "step", "time", "J", "nominal_error", "omega_min"].map(String::from).to_vec();
    for prefix in ["m", "psi", "u"] {
        header.extend((0..n_agents).map(|i| format!("{prefix}_{i}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            if r.k.is_some() { "sweep" } else { "final" }.to_string(),
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            r.step.to_string(),
            fmt12(r.time),
            fmt12(r.cost),
            fmt12(r.nominal_error),
            fmt12(r.omega_min),
        ];
        for values in [&r.workloads, &r.phases, &r.speeds] {
            let mut cells = vec![String::new(); n_agents];
            for (slot, &id) in r.ids.iter().enumerate() {
                cells[id] = fmt12(values[slot]);
            }
            rec.extend(cells);
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_metrics_csv`]. Slots follow increasing
/// agent id, which matches the phase order of a run.
pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let fixed = 7;
    if header.len() < fixed || (header.len() - fixed) % 3 != 0 || &header[0] != "stage" {
        return Err(Error::Config("not a metrics CSV".into()));
    }
    let n = (header.len() - fixed) / 3;
    let num = |s: &str, line: usize| -> Result<f64> {
        s.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad number {s:?}"),
        })
    };
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let k = match &rec[1] {
            "" => None,
            s => Some(num(s, line)? as usize),
        };
        let ids: Vec<usize> = (0..n).filter(|&a| !rec[fixed + a].is_empty()).collect();
        let column = |block: usize| -> Result<Vec<f64>> { ids.iter().map(|&a| num(&rec[fixed + block * n + a], line)).collect() };
        rows.push(TraceRow {
            k,
            step: num(&rec[2], line)? as usize,
            time: num(&rec[3], line)?,
            cost: num(&rec[4], line)?,
            nominal_error: num(&rec[5], line)?,
            omega_min: num(&rec[6], line)?,
            workloads: column(0)?,
            phases: column(1)?,
            speeds: column(2)?,
            ids,
        });
    }
    Ok(rows)
}

/// Rows of sweep run `best_k` followed by the continued run.
pub fn best_rows(rows: &[TraceRow], best_k: usize) -> Vec<TraceRow> {
    rows.iter().filter(|r| r.k.is_none_or(|k| k == best_k)).cloned().collect()
}

/// Splits rows into stretches with a fixed set of agents.
pub fn split_epochs(rows: &[TraceRow]) -> Vec<Vec<TraceRow>> {
    let mut out: Vec<Vec<TraceRow>> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some(e) if e[0].ids == r.ids => e.push(r.clone()),
            _ => out.push(vec![r.clone()]),
        }
    }
    out
}

/// One line per polyline vertex or agent: `k,step,time,kind,index,x,y`.
pub fn write_snapshots_csv<W: Write>(snapshots: &[Snapshot], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "step", "time", "kind", "index", "x", "y"]).map_err(csv_err)?;
    for s in snapshots {
        let k = s.k.map(|k| k.to_string()).unwrap_or_default();
        for (b, bar) in s.bars.iter().enumerate() {
            for p in bar {
                w.write_record([&k, &s.step.to_string(), &fmt12(s.time), "bar", &b.to_string(), &fmt12(p.re), &fmt12(p.im)])
                    .map_err(csv_err)?;
            }
        }
        for (id, p) in &s.agents {
            w.write_record([&k, &s.step.to_string(), &fmt12(s.time), "agent", &id.to_string(), &fmt12(p.re), &fmt12(p.im)])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: Option<usize>, step: usize, ids: Vec<usize>) -> TraceRow {
        let n = ids.len();
        TraceRow {
            k,
            step,
            time: step as f64 * 0.5,
            cost: 1.0 / (1u32 << step) as f64,
            nominal_error: 0.1,
            omega_min: 0.2,
            workloads: (0..n).map(|i| i as f64 + 0.25).collect(),
            phases: (0..n).map(|i| i as f64).collect(),
            speeds: vec![0.0; n],
            ids,
        }
    }

    #[test]
    fn metrics_csv_round_trip_and_epochs() {
        let rows = vec![
            row(Some(1), 0, vec![0, 1, 2]),
            row(Some(2), 0, vec![0, 1, 2]),
            row(Some(2), 1, vec![0, 1, 2]),
            row(None, 2, vec![0, 1, 2]),
            row(None, 3, vec![0, 2]),
        ];
        let mut buf = Vec::new();
        write_rows_csv(&rows, 3, &mut buf).unwrap();
        let back = read_metrics_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let best = best_rows(&back, 2);
        assert_eq!(best.len(), 4);
        let epochs = split_epochs(&best);
        assert_eq!(epochs.iter().map(|e| e.len()).collect::<Vec<_>>(), vec![3, 1]);
        assert!(read_metrics_csv("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt12(1.0), "1.00000000000e0");
        assert_eq!(fmt12(-0.000123456789012345), "-1.23456789012e-4");
    }
}
