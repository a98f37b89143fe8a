use crate::error::{GradselError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxErrorRecord {
    pub subset_id: usize,
    pub exact: f64,
    pub estimated: f64,
    pub relative_distance: f64,
}

impl ApproxErrorRecord {
    /// (h − ĥ)² / h², or `None` when h = 0.
    pub fn relative_squared_error(&self) -> Option<f64> {
        (self.exact != 0.0).then(|| {
            let r = (self.exact - self.estimated) / self.exact;
            r * r
        })
    }

    /// Index of the bucket `[edges[b], edges[b+1])` containing the distance.
    pub fn bucket(&self, edges: &[f64]) -> Option<usize> {
        edges.windows(2).position(|w| self.relative_distance >= w[0] && self.relative_distance < w[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketTable {
    pub rows: Vec<BucketRow>,
    /// records dropped because h = 0
    pub excluded_zero: usize,
    /// records outside every bucket
    pub out_of_range: usize,
}

impl BucketTable {
    /// Means of the non-empty buckets, in bucket order.
    pub fn means(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.count > 0).map(|r| r.mean).collect()
    }
}

/// Per-bucket mean ± std of the relative squared error. `edges` are bucket
/// boundaries (e.g. 0.15, 0.20, …, 0.40).
pub fn aggregate_relative_error(records: &[ApproxErrorRecord], edges: &[f64]) -> Result<BucketTable> {
    if records.is_empty() {
        return Err(GradselError::InvalidConfig("no records to aggregate".into()));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(GradselError::InvalidConfig("bucket edges must be increasing".into()));
    }
    let mut vals: Vec<Vec<f64>> = vec![Vec::new(); edges.len() - 1];
    let (mut excluded_zero, mut out_of_range) = (0, 0);
    for r in records {
        let Some(e) = r.relative_squared_error() else {
            excluded_zero += 1;
            continue;
        };
        match r.bucket(edges) {
            Some(b) => vals[b].push(e),
            None => out_of_range += 1,
        }
    }
    let rows = vals
        .iter()
        .enumerate()
        .map(|(b, v)| {
            let n = v.len();
            // sorted summation keeps the result independent of record order
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            let mean = if n > 0 { s.iter().sum::<f64>() / n as f64 } else { 0.0 };
            let var = if n > 1 { s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            BucketRow { lo: edges[b], hi: edges[b + 1], count: n, mean, std: var.sqrt() }
        })
        .collect();
    Ok(BucketTable { rows, excluded_zero, out_of_range })
}

/// Σ (ĥ_i − h_i)².
pub fn rss_scores(estimated: &[f64], exact: &[f64]) -> Result<f64> {
    if estimated.len() != exact.len() {
        return Err(GradselError::DimensionMismatch { what: "rss inputs", expected: exact.len(), got: estimated.len() });
    }
    let mut sq: Vec<f64> = estimated.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).collect();
    sq.sort_by(f64::total_cmp);
    Ok(sq.iter().sum())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(GradselError::InvalidConfig("spearman needs two equal-length series of length ≥ 2".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut c, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        c += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    Ok(if va == 0.0 || vb == 0.0 { 0.0 } else { c / (va * vb).sqrt() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub mean_in: f64,
    pub mean_out: f64,
    /// mean_out − mean_in
    pub gap: f64,
}

/// Mean score of in-distribution demos (component == `target`) vs the rest.
pub fn score_separation(scores: &[f64], components: &[usize], target: usize) -> Result<Separation> {
    if scores.len() != components.len() {
        return Err(GradselError::DimensionMismatch { what: "component labels", expected: scores.len(), got: components.len() });
    }
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (&s, &c) in scores.iter().zip(components) {
        if c == target {
            si += s;
            ni += 1;
        } else {
            so += s;
            no += 1;
        }
    }
    if ni == 0 || no == 0 {
        return Err(GradselError::InvalidConfig("both in- and out-of-distribution demos are required".into()));
    }
    let (mean_in, mean_out) = (si / ni as f64, so / no as f64);
    Ok(Separation { mean_in, mean_out, gap: mean_out - mean_in })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(exact: f64, estimated: f64, d: f64) -> ApproxErrorRecord {
        ApproxErrorRecord { subset_id: 0, exact, estimated, relative_distance: d }
    }

    #[test]
    fn exact_estimates_give_zero_table() {
        let r: Vec<_> = (0..10).map(|i| rec(1.0 + i as f64, 1.0 + i as f64, 0.15 + 0.02 * i as f64)).collect();
        let t = aggregate_relative_error(&r, &[0.15, 0.2, 0.25, 0.3, 0.35, 0.4]).unwrap();
        assert!(t.rows.iter().all(|r| r.mean == 0.0));
    }

    #[test]
    fn single_record_arithmetic_and_zero_exclusion() {
        let t = aggregate_relative_error(&[rec(2.0, 1.0, 0.17), rec(0.0, 1.0, 0.17)], &[0.15, 0.2]).unwrap();
        assert_eq!(t.rows[0].mean, 0.25);
        assert_eq!(t.excluded_zero, 1);
    }

    #[test]
    fn rss_examples() {
        assert_eq!(rss_scores(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rss_scores(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(rss_scores(&[1.0], &[]).is_err());
    }

    #[test]
    fn spearman_handles_monotone_and_ties() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 40.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
    }

    #[test]
    fn equal_scores_have_no_gap() {
        let s = score_separation(&[2.0; 6], &[0, 1, 2, 0, 1, 2], 0).unwrap();
        assert_eq!(s.gap, 0.0);
    }
}
