//! Seed aggregation of episode-reward logs: per-episode median across seeds,
//! then a trailing moving average.

use std::path::Path;

use crate::error::{Error, Result};

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Degenerate("median of an empty slice".into()));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("median of NaN".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `out[i]` is the mean of `xs[i+1-window ..= i]`, over fewer values while
/// `i + 1 < window`.
pub fn trailing_mean(xs: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::config("moving-average window must be positive"));
    }
    Ok((0..xs.len())
        .map(|i| {
            let w = &xs[(i + 1).saturating_sub(window)..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect())
}

/// Per-episode median across runs. All runs must have the same length.
pub fn median_curve(runs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = runs
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Degenerate("no runs to aggregate".into()))?;
    if runs.iter().any(|r| r.len() != n) {
        return Err(Error::Contract("runs to aggregate differ in episode count".into()));
    }
    (0..n)
        .map(|i| median(&runs.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    /// 1-based.
    pub episode: usize,
    pub median: f64,
    pub smoothed: f64,
}

pub fn aggregate(runs: &[Vec<f64>], window: usize) -> Result<Vec<AggregateRow>> {
    let med = median_curve(runs)?;
    let smooth = trailing_mean(&med, window)?;
    Ok(med
        .into_iter()
        .zip(smooth)
        .enumerate()
        .map(|(i, (median, smoothed))| AggregateRow {
            episode: i + 1,
            median,
            smoothed,
        })
        .collect())
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "median_reward", "smoothed_reward"])?;
    for r in rows {
        w.write_record([r.episode.to_string(), r.median.to_string(), r.smoothed.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = || Error::Dataset(format!("{}: malformed aggregate row", path.display()));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).ok_or_else(bad);
        out.push(AggregateRow {
            episode: f(0)?.parse().map_err(|_| bad())?,
            median: f(1)?.parse().map_err(|_| bad())?,
            smoothed: f(2)?.parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even_and_errors() {
        assert_eq!(median(&[3.0, -1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
        assert!(median(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn trailing_mean_warms_up() {
        let m = trailing_mean(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(m, vec![1.0, 1.5, 2.5, 3.5]);
        assert_eq!(trailing_mean(&[2.0, 4.0], 100).unwrap(), vec![2.0, 3.0]);
        assert!(trailing_mean(&[1.0], 0).is_err());
    }

    #[test]
    fn curve_has_one_row_per_episode_and_round_trips() {
        let runs = vec![vec![0.0, -2.0, -4.0], vec![-1.0, 0.0, 0.0], vec![5.0, 1.0, -1.0]];
        let rows = aggregate(&runs, 2).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].median, 0.0);
        assert_eq!(rows[2].smoothed, (0.0 + -1.0) / 2.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("agg.csv");
        write_aggregate_csv(&p, &rows).unwrap();
        assert_eq!(read_aggregate_csv(&p).unwrap(), rows);
        assert!(aggregate(&[vec![1.0], vec![1.0, 2.0]], 2).is_err());
    }
}
