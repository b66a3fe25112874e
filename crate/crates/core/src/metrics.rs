//! Performance norms of the distributed error and table aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::sim::Trajectory;
use crate::tuners::TunerKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error("sample spacing must be positive, got {0}")]
    InvalidSpacing(f64),
}

/// Trapezoidal `int f(t)^2 dt` for samples spaced `dt` apart.
pub fn l2_squared_samples(f: &[f64], dt: f64) -> Result<f64, MetricsError> {
    if f.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    if !(dt > 0.0) {
        return Err(MetricsError::InvalidSpacing(dt));
    }
    let sq: f64 = f.iter().map(|v| v * v).sum();
    let ends = 0.5 * (f[0] * f[0] + f[f.len() - 1] * f[f.len() - 1]);
    Ok(dt * (sq - ends))
}

/// `max_k |f_k|`.
pub fn linf_samples(f: &[f64]) -> Result<f64, MetricsError> {
    if f.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    Ok(f.iter().fold(0.0, |acc, v| acc.max(v.abs())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct L2Norm {
    pub per_agent: Vec<f64>,
    /// `int ||e||^2 dt`, the sum of `per_agent`.
    pub squared: f64,
    pub root: f64,
}

/// Squared L2 norm of every agent's error and of the stacked error.
pub fn l2_norm(traj: &Trajectory) -> Result<L2Norm, MetricsError> {
    if traj.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let dt = traj.dt();
    let per_agent = (0..traj.m())
        .map(|i| {
            let col: Vec<f64> = traj.e.iter().map(|e| e[i]).collect();
            l2_squared_samples(&col, dt)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let squared = per_agent.iter().sum::<f64>();
    Ok(L2Norm { per_agent, squared, root: squared.sqrt() })
}

/// `sup_t max_i |e_i(t)|` over the samples.
pub fn linf_norm(traj: &Trajectory) -> Result<f64, MetricsError> {
    if traj.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    Ok(traj.e.iter().map(|e| e.amax()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub topology: String,
    pub m: usize,
    pub tuner: TunerKind,
    pub per_agent_l2_squared: Vec<f64>,
    pub l2_squared: f64,
    pub l2: f64,
    pub linf: f64,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
}

pub const METRICS_HEADER: &str = "topology,m,tuner,l2_squared,l2,linf,horizon,step,seed";

impl MetricsRecord {
    pub fn from_trajectory(
        topology: impl Into<String>,
        tuner: TunerKind,
        seed: u64,
        traj: &Trajectory,
    ) -> Result<Self, MetricsError> {
        let l2 = l2_norm(traj)?;
        Ok(MetricsRecord {
            topology: topology.into(),
            m: traj.m(),
            tuner,
            per_agent_l2_squared: l2.per_agent,
            l2_squared: l2.squared,
            l2: l2.root,
            linf: linf_norm(traj)?,
            horizon: *traj.times.last().unwrap_or(&0.0),
            step: traj.step,
            seed,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.9e},{:.9e},{:.9e},{},{},{}",
            self.topology,
            self.m,
            self.tuner,
            self.l2_squared,
            self.l2,
            self.linf,
            self.horizon,
            self.step,
            self.seed
        )
    }
}

/// One header line plus a row per record, in input order.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Per-agent squared norms, one row per agent.
pub fn per_agent_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("topology,m,tuner,agent,l2_squared\n");
    for r in records {
        for (i, v) in r.per_agent_l2_squared.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{:.9e}", r.topology, r.m, r.tuner, i + 1, v);
        }
    }
    out
}

/// Records pivoted to topology rows and `(tuner, m)` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotTable {
    pub rows: Vec<String>,
    pub columns: Vec<(TunerKind, usize)>,
    pub l2_squared: Vec<Vec<Option<f64>>>,
    pub l2: Vec<Vec<Option<f64>>>,
    pub linf: Vec<Vec<Option<f64>>>,
}

impl PivotTable {
    pub fn cell(&self, topology: &str, tuner: TunerKind, m: usize) -> Option<(f64, f64, f64)> {
        let r = self.rows.iter().position(|t| t == topology)?;
        let c = self.columns.iter().position(|&k| k == (tuner, m))?;
        Some((self.l2_squared[r][c]?, self.l2[r][c]?, self.linf[r][c]?))
    }

    /// Three stacked blocks (`l2_squared`, `l2`, `linf`) sharing one header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,topology");
        for (k, m) in &self.columns {
            let _ = write!(out, ",{k} m={m}");
        }
        out.push('\n');
        for (name, block) in [("l2_squared", &self.l2_squared), ("l2", &self.l2), ("linf", &self.linf)] {
            for (topo, row) in self.rows.iter().zip(block) {
                let _ = write!(out, "{name},{topo}");
                for v in row {
                    match v {
                        Some(v) => {
                            let _ = write!(out, ",{v:.6}");
                        }
                        None => out.push(','),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Pivots records into a table. Rows keep first-seen topology order and
/// columns are sorted by tuner then `m`. Repeated keys (several seeds) are
/// averaged.
pub fn aggregate_table(records: &[MetricsRecord]) -> PivotTable {
    let mut rows: Vec<String> = Vec::new();
    let mut cols: Vec<(TunerKind, usize)> = Vec::new();
    let mut acc: BTreeMap<(usize, (u8, usize)), ([f64; 3], usize)> = BTreeMap::new();
    let order = |k: TunerKind| TunerKind::ALL.iter().position(|&x| x == k).unwrap_or(0) as u8;
    for r in records {
        let ri = match rows.iter().position(|t| *t == r.topology) {
            Some(i) => i,
            None => {
                rows.push(r.topology.clone());
                rows.len() - 1
            }
        };
        if !cols.contains(&(r.tuner, r.m)) {
            cols.push((r.tuner, r.m));
        }
        let e = acc.entry((ri, (order(r.tuner), r.m))).or_insert(([0.0; 3], 0));
        e.0[0] += r.l2_squared;
        e.0[1] += r.l2;
        e.0[2] += r.linf;
        e.1 += 1;
    }
    cols.sort_by_key(|&(k, m)| (order(k), m));
    let block = |idx: usize| -> Vec<Vec<Option<f64>>> {
        (0..rows.len())
            .map(|ri| {
                cols.iter()
                    .map(|&(k, m)| acc.get(&(ri, (order(k), m))).map(|(s, n)| s[idx] / *n as f64))
                    .collect()
            })
            .collect()
    };
    PivotTable { l2_squared: block(0), l2: block(1), linf: block(2), rows, columns: cols }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(t_end: f64, h: f64) -> Vec<f64> {
        let n = (t_end / h).round() as usize;
        (0..=n).map(|k| k as f64 * h).collect()
    }

    #[test]
    fn constant_integrates_to_length() {
        let f = vec![1.0; 4001];
        assert_abs_diff_eq!(l2_squared_samples(&f, 1e-3).unwrap(), 4.0, epsilon = 1e-12);
        assert_eq!(linf_samples(&f).unwrap(), 1.0);
    }

    #[test]
    fn ramp_squared_is_one_third() {
        let t = grid(1.0, 1e-3);
        assert_abs_diff_eq!(l2_squared_samples(&t, 1e-3).unwrap(), 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_and_empty() {
        assert_eq!(l2_squared_samples(&[0.0; 10], 0.1).unwrap(), 0.0);
        assert_eq!(l2_squared_samples(&[], 0.1), Err(MetricsError::EmptyTrajectory));
        assert_eq!(linf_samples(&[]), Err(MetricsError::EmptyTrajectory));
        assert!(matches!(l2_squared_samples(&[1.0], 0.0), Err(MetricsError::InvalidSpacing(_))));
    }

    #[test]
    fn sine_supremum() {
        let s: Vec<f64> = grid(10.0, 1e-3).iter().map(|t| t.sin()).collect();
        assert_abs_diff_eq!(linf_samples(&s).unwrap(), 1.0, epsilon = 1e-3);
    }

    fn record(topo: &str, m: usize, tuner: TunerKind, l2sq: f64) -> MetricsRecord {
        MetricsRecord {
            topology: topo.into(),
            m,
            tuner,
            per_agent_l2_squared: vec![l2sq],
            l2_squared: l2sq,
            l2: l2sq.sqrt(),
            linf: 1.0,
            horizon: 200.0,
            step: 1e-3,
            seed: 7,
        }
    }

    #[test]
    fn single_record_table() {
        let t = aggregate_table(&[record("star", 3, TunerKind::Gradient, 4.0)]);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.columns, vec![(TunerKind::Gradient, 3)]);
        assert_eq!(t.cell("star", TunerKind::Gradient, 3), Some((4.0, 2.0, 1.0)));
        assert_eq!(t.to_csv().lines().count(), 4);
    }

    #[test]
    fn topology_by_m_grid() {
        let mut recs = Vec::new();
        for topo in ["star", "cyclic", "path"] {
            for m in [1, 3, 5, 7, 9, 11, 13] {
                recs.push(record(topo, m, TunerKind::Gradient, m as f64));
            }
        }
        let t = aggregate_table(&recs);
        assert_eq!((t.rows.len(), t.columns.len()), (3, 7));
        assert!(t.l2.iter().flatten().all(Option::is_some));
    }

    #[test]
    fn tuners_side_by_side() {
        let recs: Vec<_> =
            TunerKind::ALL.iter().rev().map(|&k| record("random", 9, k, 1.0)).collect();
        let t = aggregate_table(&recs);
        assert_eq!(t.rows, vec!["random".to_string()]);
        assert_eq!(t.columns.iter().map(|c| c.0).collect::<Vec<_>>(), TunerKind::ALL.to_vec());
    }

    #[test]
    fn repeated_keys_are_averaged() {
        let t = aggregate_table(&[
            record("star", 1, TunerKind::Ht1, 2.0),
            record("star", 1, TunerKind::Ht1, 4.0),
        ]);
        assert_eq!(t.l2_squared[0][0], Some(3.0));
    }

    #[test]
    fn csv_header_and_rows() {
        let csv = metrics_csv(&[record("path", 5, TunerKind::Ht2, 1.0)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert!(lines.next().unwrap().starts_with("path,5,ht2,"));
    }
}
