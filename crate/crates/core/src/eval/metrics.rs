//! Confusion matrices, calibration histograms of wrong answers, and the
//! silhouette score.

use serde::{Deserialize, Serialize};

use super::episode::RunResult;
use crate::embedding::{norm, EmbeddingBatch, DEGENERATE_NORM};
use crate::error::{Error, Result};

pub const DEFAULT_CALIBRATION_BINS: usize = 20;

/// Rows are true labels, columns predicted labels plus a final "none"
/// column for queries without a detection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn render(&self) -> String {
        let w = self.labels.iter().map(String::len).max().unwrap_or(0).max(4);
        let cw = self
            .counts
            .iter()
            .flatten()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(4);
        let mut out = format!("{:w$}", "");
        for i in 0..self.labels.len() {
            out += &format!(" {:>cw$}", i);
        }
        out += &format!(" {:>cw$}\n", "none");
        for (i, row) in self.counts.iter().enumerate() {
            out += &format!("{:w$}", self.labels[i]);
            for c in row {
                out += &format!(" {c:>cw$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies every query of `results`. Labels come first from `labels`, then
/// any unseen truth or prediction in order of appearance.
pub fn confusion(results: &[RunResult], labels: &[String]) -> ConfusionMatrix {
    let mut labels = labels.to_vec();
    let index = |labels: &mut Vec<String>, l: &str| match labels.iter().position(|x| x == l) {
        Some(i) => i,
        None => {
            labels.push(l.to_string());
            labels.len() - 1
        }
    };
    let mut pairs = Vec::new();
    for q in results.iter().flat_map(|r| &r.per_query) {
        let t = index(&mut labels, &q.truth);
        let p = q.predicted.as_deref().map(|p| index(&mut labels, p));
        pairs.push((t, p));
    }
    let n = labels.len();
    let mut counts = vec![vec![0u64; n + 1]; n];
    for (t, p) in pairs {
        counts[t][p.unwrap_or(n)] += 1;
    }
    ConfusionMatrix { labels, counts }
}

/// Counts of predicted confidence over misclassified queries in uniform
/// bins over [0, 1]; queries without a prediction land in the first bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl CalibrationHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn render(&self) -> String {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let mut out = String::new();
        for (i, c) in self.counts.iter().enumerate() {
            let bar = "#".repeat(((*c as f64 / max as f64) * 40.0).round() as usize);
            out += &format!(
                "[{:.2}, {:.2}) {c:>6} {bar}\n",
                self.bin_edges[i],
                self.bin_edges[i + 1]
            );
        }
        out
    }
}

pub fn bin_index(confidence: f64, bins: usize) -> usize {
    ((confidence * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

pub fn calibration(results: &[RunResult], bins: usize) -> Result<CalibrationHistogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig("calibration needs at least one bin".into()));
    }
    let bin_edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut counts = vec![0u64; bins];
    for q in results.iter().flat_map(|r| &r.per_query) {
        if !q.is_correct() {
            let conf = if q.predicted.is_some() { q.confidence } else { 0.0 };
            counts[bin_index(conf, bins)] += 1;
        }
    }
    Ok(CalibrationHistogram { bin_edges, counts })
}

/// Mean silhouette under cosine distance. Points in singleton clusters
/// score 0, as do points with `a == b == 0`.
pub fn silhouette(batch: &EmbeddingBatch, labels: &[usize]) -> Result<f64> {
    let n = batch.rows();
    if labels.len() != n {
        return Err(Error::InvalidConfig(format!("{} labels for {n} points", labels.len())));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::DegenerateClustering(ids.len()));
    }
    let cluster: Vec<usize> = labels.iter().map(|l| ids.binary_search(l).unwrap()).collect();
    let k = ids.len();
    let mut sizes = vec![0usize; k];
    for &c in &cluster {
        sizes[c] += 1;
    }

    let unit: Vec<Vec<f64>> = batch
        .iter_rows()
        .map(|r| {
            let nr = norm(r);
            if nr < DEGENERATE_NORM {
                return Err(Error::DegenerateVector { norm: nr });
            }
            Ok(r.iter().map(|&x| f64::from(x) / nr).collect())
        })
        .collect::<Result<_>>()?;
    let dist = |i: usize, j: usize| {
        let cos: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
        1.0 - cos.clamp(-1.0, 1.0)
    };

    let mut sums = vec![0.0f64; k];
    let mut total = 0.0;
    for i in 0..n {
        let own = cluster[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[cluster[j]] += dist(i, j);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Silhouette with string labels, numbered by first appearance.
pub fn silhouette_labeled(batch: &EmbeddingBatch, labels: &[String]) -> Result<f64> {
    let mut seen: Vec<&str> = Vec::new();
    let ids: Vec<usize> = labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(i) => i,
            None => {
                seen.push(l);
                seen.len() - 1
            }
        })
        .collect();
    silhouette(batch, &ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ModelSize;
    use crate::eval::episode::QueryOutcome;

    fn q(truth: &str, pred: Option<&str>, conf: f64) -> QueryOutcome {
        QueryOutcome {
            image: String::new(),
            truth: truth.into(),
            predicted: pred.map(str::to_string),
            confidence: conf,
        }
    }

    fn result(per_query: Vec<QueryOutcome>) -> RunResult {
        let total = per_query.len();
        let correct = per_query.iter().filter(|q| q.is_correct()).count();
        RunResult {
            size: ModelSize::M,
            c: 2,
            k: 1,
            aug: true,
            adapter: false,
            repeat: 0,
            seed: 0,
            labels: vec!["a".into(), "b".into()],
            correct,
            total,
            accuracy: correct as f64 / total as f64,
            no_detection_rate: 0.0,
            silhouette: None,
            wall_time_ms: None,
            per_query,
        }
    }

    #[test]
    fn confusion_counts() {
        let r = result(vec![
            q("a", Some("a"), 0.9),
            q("a", Some("b"), 0.7),
            q("b", None, 0.0),
            q("b", Some("b"), 0.8),
        ]);
        let m = confusion(&[r], &["a".into(), "b".into()]);
        assert_eq!(m.counts, vec![vec![1, 1, 0], vec![0, 1, 1]]);
        assert_eq!(m.total(), 4);
        assert_eq!(m.row_sum(1), 2);
        assert!(m.render().contains("none"));
    }

    #[test]
    fn calibration_bins() {
        let all_right = result(vec![q("a", Some("a"), 0.97)]);
        let h = calibration(&[all_right], 20).unwrap();
        assert_eq!(h.total(), 0);
        assert_eq!(h.bin_edges.len(), 21);

        let wrong = result(vec![q("a", Some("b"), 0.97), q("b", None, 0.0), q("a", Some("b"), 1.0)]);
        let h = calibration(&[wrong], 20).unwrap();
        assert_eq!(h.counts[19], 2);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.total(), 3);
        assert_eq!(bin_index(0.05, 20), 1);
    }

    fn batch(rows: &[[f32; 2]]) -> EmbeddingBatch {
        EmbeddingBatch::from_rows(2, rows).unwrap()
    }

    #[test]
    fn silhouette_cases() {
        let b = batch(&[[1.0, 0.0], [1.0, 0.01], [0.0, 1.0], [0.01, 1.0]]);
        assert!(silhouette(&b, &[0, 0, 1, 1]).unwrap() > 0.9);

        let same = batch(&[[1.0, 0.0]; 4]);
        assert_eq!(silhouette(&same, &[0, 0, 1, 1]).unwrap(), 0.0);

        assert!(matches!(
            silhouette(&b, &[3, 3, 3, 3]),
            Err(Error::DegenerateClustering(1))
        ));
        let singletons = batch(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(silhouette(&singletons, &[0, 1]).unwrap(), 0.0);
        let named = silhouette_labeled(&b, &["x".into(), "x".into(), "y".into(), "y".into()]).unwrap();
        assert_eq!(named, silhouette(&b, &[0, 0, 1, 1]).unwrap());
    }

    #[test]
    fn silhouette_hand_computed() {
        // Angles 0, 90 in cluster 0 and 180 in cluster 1.
        // Point 0: a = 1, b = 2 -> 0.5. Point 1: a = 1, b = 1 -> 0. Point 2: singleton.
        let b = batch(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
        let s = silhouette(&b, &[0, 0, 1]).unwrap();
        assert!((s - 0.5 / 3.0).abs() < 1e-12);
    }
}
