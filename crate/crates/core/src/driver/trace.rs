use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result, Vector};

pub const TRACE_HEADER: [&str; 8] = [
    "n",
    "V_gap",
    "grad_norm_sq",
    "step",
    "bias_norm",
    "A_lmin",
    "A_lmax",
    "inner_samples",
];

/// Observables of iterate `theta_n` and of the step taken from it.
///
/// The last record of a run describes the final iterate only; its step fields are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub n: u64,
    pub v_gap: Option<f64>,
    pub grad_norm_sq: f64,
    pub step: Option<f64>,
    pub bias_norm: Option<f64>,
    pub a_lmin: Option<f64>,
    pub a_lmax: Option<f64>,
    pub inner_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceMeta {
    pub seed: u64,
    pub config_hash: String,
    pub wall_time_secs: f64,
}

/// Per-run record stream plus run-level diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub meta: TraceMeta,
    /// Steps whose `A` left the bracket `[(delta + M_obs^2)^{-1/2}, delta^{-1/2}]`.
    pub bracket_violations: usize,
    /// Steps where the bracket was checked.
    pub bracket_checks: usize,
    /// AMSGRAD steps where `A_lmax` increased.
    pub monotone_violations: usize,
    /// Steps exceeding the step cap `lambda / (sigma1 L beta^2)`, when `sigma1` is given.
    pub step_cap_warnings: usize,
    /// Largest `|m_k|` seen relative to the largest `|H|` seen so far (AMSGRAD).
    pub momentum_ratio: Option<f64>,
    pub final_theta: Vector,
    pub best_theta: Vector,
    pub best_n: u64,
    /// `theta_0, ..., theta_n`, when requested.
    pub iterates: Option<Vec<Vector>>,
}

fn opt_f(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|e| Error::Config(format!("bad float {s:?}: {e}")))
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// CSV with the fixed header. `stride > 1` keeps every `stride`-th record plus the last.
    pub fn write_csv<W: Write>(&self, w: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Config(format!("csv write: {e}"));
        wr.write_record(TRACE_HEADER).map_err(io)?;
        let last = self.records.len().saturating_sub(1);
        for (i, r) in self.records.iter().enumerate() {
            if i % stride != 0 && i != last {
                continue;
            }
            wr.write_record([
                r.n.to_string(),
                opt_f(r.v_gap),
                r.grad_norm_sq.to_string(),
                opt_f(r.step),
                opt_f(r.bias_norm),
                opt_f(r.a_lmin),
                opt_f(r.a_lmax),
                r.inner_samples.map(|x| x.to_string()).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        wr.flush()
            .map_err(|e| Error::Config(format!("csv flush: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, stride: usize) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f), stride)
    }

    /// Records from a CSV written by `write_csv`.
    pub fn read_csv<R: Read>(r: R) -> Result<Vec<TraceRecord>> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd
            .headers()
            .map_err(|e| Error::Config(format!("csv header: {e}")))?
            .clone();
        if headers.iter().ne(TRACE_HEADER.iter().copied()) {
            return Err(Error::Config(format!(
                "unexpected trace header: {headers:?}"
            )));
        }
        let mut out = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(format!("csv row {}: {e}", line + 2)))?;
            let n = rec[0]
                .parse::<u64>()
                .map_err(|e| Error::Config(format!("csv row {}: n: {e}", line + 2)))?;
            let inner = if rec[7].is_empty() {
                None
            } else {
                Some(
                    rec[7]
                        .parse::<usize>()
                        .map_err(|e| Error::Config(format!("csv row {}: {e}", line + 2)))?,
                )
            };
            out.push(TraceRecord {
                n,
                v_gap: parse_opt(&rec[1])?,
                grad_norm_sq: parse_opt(&rec[2])?.ok_or_else(|| {
                    Error::Config(format!("csv row {}: empty grad_norm_sq", line + 2))
                })?,
                step: parse_opt(&rec[3])?,
                bias_norm: parse_opt(&rec[4])?,
                a_lmin: parse_opt(&rec[5])?,
                a_lmax: parse_opt(&rec[6])?,
                inner_samples: inner,
            });
        }
        Ok(out)
    }

    pub fn load_csv(path: &Path) -> Result<Vec<TraceRecord>> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    /// `(n, V_gap)` pairs with a recorded gap.
    pub fn v_gap_series(&self) -> Vec<(f64, f64)> {
        series(&self.records, |r| r.v_gap)
    }

    pub fn grad_series(&self) -> Vec<(f64, f64)> {
        series(&self.records, |r| Some(r.grad_norm_sq))
    }
}

pub fn series(records: &[TraceRecord], f: impl Fn(&TraceRecord) -> Option<f64>) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter_map(|r| f(r).map(|y| (r.n as f64, y)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_stride() {
        let records: Vec<TraceRecord> = (0..7u64)
            .map(|n| TraceRecord {
                n,
                v_gap: Some(1.0 / (n as f64 + 3.0)),
                grad_norm_sq: 0.1 * n as f64,
                step: (n < 6).then_some(0.5),
                bias_norm: None,
                a_lmin: Some(0.25),
                a_lmax: Some(1.0 / 3.0),
                inner_samples: (n < 6).then_some(2),
            })
            .collect();
        let t = Trace {
            records: records.clone(),
            ..Default::default()
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf, 1).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(
            text.starts_with("n,V_gap,grad_norm_sq,step,bias_norm,A_lmin,A_lmax,inner_samples\n")
        );
        assert_eq!(Trace::read_csv(&buf[..]).unwrap(), records);

        let mut buf = Vec::new();
        t.write_csv(&mut buf, 4).unwrap();
        let back = Trace::read_csv(&buf[..]).unwrap();
        assert_eq!(back.iter().map(|r| r.n).collect::<Vec<_>>(), vec![0, 4, 6]);
    }

    #[test]
    fn rejects_foreign_header() {
        let text = "a,b\n1,2\n";
        assert!(Trace::read_csv(text.as_bytes()).is_err());
    }
}
