//! AUC, TPR at a threshold, two-component PCA and a 2-D linear probe.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WmError};
use crate::scalar::Scalar;
use crate::watermarks::Direction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    Watermarked,
    Unwatermarked,
    Removed,
    Forged,
    PgidProcessed,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Watermarked => "watermarked",
            Group::Unwatermarked => "unwatermarked",
            Group::Removed => "removed",
            Group::Forged => "forged",
            Group::PgidProcessed => "pgid-processed",
        }
    }
}

/// One scored sample; `score` is oriented so larger is more watermark-like.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub label: bool,
    pub score: f64,
    pub group: Group,
}

/// Mann–Whitney AUC with ties counted ½.
pub fn auc(samples: &[ScoreSample]) -> Result<f64> {
    let n_pos = samples.iter().filter(|s| s.label).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(WmError::SingleClass);
    }
    let mut sorted: Vec<&ScoreSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    // Sum of (1-based, tie-averaged) ranks of the positives, doubled to stay integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].score == sorted[i].score {
            j += 1;
        }
        let twice_avg = (i + 1 + j + 1) as u64;
        let pos_in_block = sorted[i..=j].iter().filter(|s| s.label).count() as u64;
        twice_rank_sum += twice_avg * pos_in_block;
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Convenience: AUC of positive vs negative score lists.
pub fn auc_of(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    let samples: Vec<ScoreSample> = positives
        .iter()
        .map(|&score| ScoreSample { label: true, score, group: Group::Watermarked })
        .chain(negatives.iter().map(|&score| ScoreSample { label: false, score, group: Group::Unwatermarked }))
        .collect();
    auc(&samples)
}

/// Fraction of positive samples on the detect side of `threshold`
/// (0 when there are no positives).
pub fn tpr_at_threshold(samples: &[ScoreSample], threshold: f64, direction: Direction) -> f64 {
    let pos: Vec<&ScoreSample> = samples.iter().filter(|s| s.label).collect();
    if pos.is_empty() {
        return 0.0;
    }
    pos.iter().filter(|s| direction.detects(s.score, threshold)).count() as f64 / pos.len() as f64
}

/// Fitted two-component PCA.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
    pub total_variance: f64,
}

impl Pca2 {
    /// Fits on the rows of `data`. Uses the `n × n` Gram matrix when there
    /// are fewer samples than dimensions (same nonzero spectrum as the
    /// covariance, much cheaper).
    pub fn fit<T: Scalar>(data: &[Vec<T>]) -> Result<Self> {
        let n = data.len();
        if n < 3 {
            return Err(WmError::TooFewSamples { needed: 3, got: n });
        }
        let d = data[0].len();
        if let Some(r) = data.iter().find(|r| r.len() != d) {
            return Err(WmError::DimensionMismatch { expected: d, got: r.len() });
        }
        let mut mean = vec![0.0; d];
        for r in data {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v.f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let x = DMatrix::from_fn(n, d, |i, j| data[i][j].f64() - mean[j]);
        let denom = (n - 1) as f64;
        let total_variance = x.iter().map(|v| v * v).sum::<f64>() / denom;

        let (vals, vecs): (Vec<f64>, Vec<Vec<f64>>) = if n < d {
            let gram = &x * x.transpose() / denom;
            let eig = SymmetricEigen::new(gram);
            let order = descending(eig.eigenvalues.as_slice());
            order[..2]
                .iter()
                .map(|&k| {
                    let u = eig.eigenvectors.column(k);
                    let v = x.transpose() * u;
                    let norm = v.norm();
                    let dir = if norm > 0.0 { v / norm } else { v };
                    (eig.eigenvalues[k], dir.iter().copied().collect())
                })
                .unzip()
        } else {
            let cov = x.transpose() * &x / denom;
            let eig = SymmetricEigen::new(cov);
            let order = descending(eig.eigenvalues.as_slice());
            order[..2]
                .iter()
                .map(|&k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
                .unzip()
        };
        if !(vals[0] > 0.0) {
            return Err(WmError::RankDeficient);
        }
        let mut comps: Vec<Vec<f64>> = vecs;
        for c in &mut comps {
            let big = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if let Some(&first) = c.iter().find(|v| v.abs() > 1e-9 * big) {
                if first < 0.0 {
                    c.iter_mut().for_each(|v| *v = -*v);
                }
            }
        }
        let c1 = comps.pop().expect("two components");
        let c0 = comps.pop().expect("two components");
        Ok(Self { mean, components: [c0, c1], eigenvalues: [vals[0], vals[1].max(0.0)], total_variance })
    }

    pub fn transform<T: Scalar>(&self, z: &[T]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = z.iter().zip(&self.mean).zip(c).map(|((v, m), w)| (v.f64() - m) * w).sum();
        }
        out
    }
}

fn descending(vals: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    idx
}

/// Centered data projected on its top-2 principal directions.
pub fn pca2<T: Scalar>(latents: &[Vec<T>]) -> Result<Vec<[f64; 2]>> {
    let p = Pca2::fit(latents)?;
    Ok(latents.iter().map(|z| p.transform(z)).collect())
}

/// Fisher linear discriminant in the PCA plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearProbe {
    pub w: [f64; 2],
    pub bias: f64,
}

impl LinearProbe {
    /// Separates `positive` from `negative` points; `classify` is true on
    /// the positive side.
    pub fn fit(positive: &[[f64; 2]], negative: &[[f64; 2]]) -> Result<Self> {
        if positive.len() < 2 || negative.len() < 2 {
            return Err(WmError::TooFewSamples { needed: 2, got: positive.len().min(negative.len()) });
        }
        let mean = |p: &[[f64; 2]]| {
            let n = p.len() as f64;
            [p.iter().map(|v| v[0]).sum::<f64>() / n, p.iter().map(|v| v[1]).sum::<f64>() / n]
        };
        let (mp, mn) = (mean(positive), mean(negative));
        let mut s = [[0.0; 2]; 2];
        for (pts, m) in [(positive, mp), (negative, mn)] {
            for v in pts {
                let d = [v[0] - m[0], v[1] - m[1]];
                for a in 0..2 {
                    for b in 0..2 {
                        s[a][b] += d[a] * d[b];
                    }
                }
            }
        }
        let ridge = 1e-12 * (s[0][0] + s[1][1]).max(1e-300);
        s[0][0] += ridge;
        s[1][1] += ridge;
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let diff = [mp[0] - mn[0], mp[1] - mn[1]];
        let w = [
            (s[1][1] * diff[0] - s[0][1] * diff[1]) / det,
            (-s[1][0] * diff[0] + s[0][0] * diff[1]) / det,
        ];
        let proj = |m: [f64; 2]| w[0] * m[0] + w[1] * m[1];
        Ok(Self { w, bias: -(proj(mp) + proj(mn)) / 2.0 })
    }

    pub fn classify(&self, p: [f64; 2]) -> bool {
        self.w[0] * p[0] + self.w[1] * p[1] + self.bias > 0.0
    }

    /// Fraction of `points` classified as `expect_positive`.
    pub fn rate(&self, points: &[[f64; 2]], expect_positive: bool) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        points.iter().filter(|&&p| self.classify(p) == expect_positive).count() as f64 / points.len() as f64
    }
}
