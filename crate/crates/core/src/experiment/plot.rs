use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::log_grid;
use crate::driver::TraceRecord;
use crate::{Error, Result};

pub const MAX_PLOT_ROWS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Median,
}

/// Cross-seed statistics at one iteration; `lo` and `hi` are the min and max over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotRow {
    pub n: u64,
    pub v_gap: Option<(f64, f64, f64)>,
    pub grad: (f64, f64, f64),
}

fn reduce(xs: &mut [f64], how: Reduction) -> (f64, f64, f64) {
    xs.sort_by(f64::total_cmp);
    let lo = xs[0];
    let hi = xs[xs.len() - 1];
    let stat = match how {
        Reduction::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
        Reduction::Median => {
            let m = xs.len() / 2;
            if xs.len() % 2 == 1 {
                xs[m]
            } else {
                0.5 * (xs[m - 1] + xs[m])
            }
        }
    };
    (stat, lo, hi)
}

/// Per-iteration statistics over traces sharing one iteration grid.
pub fn aggregate(traces: &[&[TraceRecord]], how: Reduction) -> Result<Vec<PlotRow>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Domain("no traces to aggregate".into()))?;
    for t in traces {
        if t.len() != first.len() || t.iter().zip(first.iter()).any(|(a, b)| a.n != b.n) {
            return Err(Error::Domain(
                "traces do not share an iteration grid".into(),
            ));
        }
    }
    let mut rows = Vec::with_capacity(first.len());
    for i in 0..first.len() {
        let mut g: Vec<f64> = traces.iter().map(|t| t[i].grad_norm_sq).collect();
        let v: Option<Vec<f64>> = traces.iter().map(|t| t[i].v_gap).collect();
        rows.push(PlotRow {
            n: first[i].n,
            v_gap: v.map(|mut v| reduce(&mut v, how)),
            grad: reduce(&mut g, how),
        });
    }
    Ok(rows)
}

/// Keep at most `max_rows` rows on a log grid of `n`; first and last rows always survive.
pub fn thin_log(rows: &[PlotRow], max_rows: usize) -> Vec<PlotRow> {
    if rows.len() <= max_rows {
        return rows.to_vec();
    }
    let last = rows[rows.len() - 1].n;
    let mut keep: Vec<u64> = log_grid(1, last, max_rows.saturating_sub(1).max(2));
    keep.insert(0, rows[0].n);
    keep.dedup();
    let mut out = Vec::with_capacity(keep.len());
    let mut j = 0;
    for r in rows {
        while j < keep.len() && keep[j] < r.n {
            j += 1;
        }
        if j < keep.len() && keep[j] == r.n {
            out.push(*r);
        }
    }
    if out.last().map(|r| r.n) != Some(last) {
        out.push(rows[rows.len() - 1]);
    }
    out
}

fn opt3(x: Option<(f64, f64, f64)>) -> [String; 3] {
    match x {
        Some((a, b, c)) => [a.to_string(), b.to_string(), c.to_string()],
        None => Default::default(),
    }
}

/// Write a gnuplot-friendly CSV `n,stat_V_gap,lo_V_gap,hi_V_gap,stat_grad,lo_grad,hi_grad`.
pub fn write_plot_data<W: Write>(rows: &[PlotRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Config(format!("writing plot data: {e}"));
    out.write_record([
        "n",
        "stat_V_gap",
        "lo_V_gap",
        "hi_V_gap",
        "stat_grad",
        "lo_grad",
        "hi_grad",
    ])
    .map_err(err)?;
    for r in rows {
        let [a, b, c] = opt3(r.v_gap);
        let [d, e, f] = opt3(Some(r.grad));
        out.write_record([r.n.to_string(), a, b, c, d, e, f])
            .map_err(err)?;
    }
    out.flush()
        .map_err(|e| Error::Config(format!("writing plot data: {e}")))?;
    Ok(())
}

pub fn emit_plot_data(
    traces: &[&[TraceRecord]],
    how: Reduction,
    out_path: &Path,
) -> Result<Vec<PlotRow>> {
    let rows = thin_log(&aggregate(traces, how)?, MAX_PLOT_ROWS);
    let file = std::fs::File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    write_plot_data(&rows, std::io::BufWriter::new(file))?;
    Ok(rows)
}
