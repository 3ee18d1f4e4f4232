//! Detection metrics over steganalyzer scores (stego-class probabilities).

use serde::{Deserialize, Serialize};

use crate::data::image_io::quantize;
use crate::data::ImageBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_alarm: f64,
    pub true_positive: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRates {
    pub threshold: f64,
    pub false_alarm: f64,
    pub missed_detection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub pe: f64,
    pub threshold_at_pe: f64,
    /// Sorted by increasing false-alarm rate, from `(0,0)` to `(1,1)`.
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    pub rates: Vec<ThresholdRates>,
    pub n_cover: usize,
    pub n_stego: usize,
}

fn sorted_scores(name: &str, scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} scores are empty")));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            what: format!("{name} score"),
            location: Some(format!("index {i}")),
        });
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Decision rule "stego iff score ≥ t" evaluated at every distinct score and
/// at ±∞, in decreasing threshold order.
fn sweep(covers: &[f64], stegos: &[f64]) -> Vec<ThresholdRates> {
    let mut thresholds: Vec<f64> = covers.iter().chain(stegos).copied().collect();
    thresholds.push(f64::INFINITY);
    thresholds.push(f64::NEG_INFINITY);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (nc, ns) = (covers.len() as f64, stegos.len() as f64);
    thresholds
        .into_iter()
        .map(|t| {
            let covers_below = covers.partition_point(|&s| s < t);
            let stegos_below = stegos.partition_point(|&s| s < t);
            ThresholdRates {
                threshold: t,
                false_alarm: (covers.len() - covers_below) as f64 / nc,
                missed_detection: stegos_below as f64 / ns,
            }
        })
        .collect()
}

/// `P_E = min_t ½(P_FA(t) + P_MD(t))` plus the full ROC.
pub fn pe(scores_cover: &[f64], scores_stego: &[f64]) -> Result<DetectionReport> {
    let covers = sorted_scores("cover", scores_cover)?;
    let stegos = sorted_scores("stego", scores_stego)?;
    let rates = sweep(&covers, &stegos);
    let (mut best, mut best_t) = (f64::INFINITY, f64::INFINITY);
    for r in &rates {
        let e = 0.5 * (r.false_alarm + r.missed_detection);
        if e < best {
            best = e;
            best_t = r.threshold;
        }
    }
    let roc: Vec<RocPoint> = rates
        .iter()
        .map(|r| RocPoint {
            threshold: r.threshold,
            false_alarm: r.false_alarm,
            true_positive: 1.0 - r.missed_detection,
        })
        .collect();
    let auc = trapezoid_counts(&covers, &stegos, &rates);
    Ok(DetectionReport {
        pe: best,
        threshold_at_pe: best_t,
        roc,
        auc,
        rates,
        n_cover: covers.len(),
        n_stego: stegos.len(),
    })
}

/// Trapezoid area under the ROC, accumulated on integer counts so that the
/// only rounding is the final division.
fn trapezoid_counts(covers: &[f64], stegos: &[f64], rates: &[ThresholdRates]) -> f64 {
    let counts: Vec<(u128, u128)> = rates
        .iter()
        .map(|r| {
            let fa = covers.len() - covers.partition_point(|&s| s < r.threshold);
            let tp = stegos.len() - stegos.partition_point(|&s| s < r.threshold);
            (fa as u128, tp as u128)
        })
        .collect();
    let twice_area: u128 = counts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1)).sum();
    twice_area as f64 / (2 * covers.len() * stegos.len()) as f64
}

pub fn roc_auc(scores_cover: &[f64], scores_stego: &[f64]) -> Result<(Vec<RocPoint>, f64)> {
    let r = pe(scores_cover, scores_stego)?;
    Ok((r.roc, r.auc))
}

/// Mean absolute difference of paired images after 8-bit quantisation, in
/// 0–255 units.
pub fn mae_pairs(covers: &ImageBatch, stegos: &ImageBatch) -> Result<f64> {
    if covers.pixels.shape() != stegos.pixels.shape() {
        return Err(Error::shape("mae_pairs", covers.pixels.shape(), stegos.pixels.shape()));
    }
    let n = covers.pixels.len();
    if n == 0 {
        return Ok(0.0);
    }
    let total: u64 = covers
        .pixels
        .data()
        .iter()
        .zip(stegos.pixels.data())
        .map(|(&a, &b)| u64::from(quantize(a).abs_diff(quantize(b))))
        .sum();
    Ok(total as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageSource;
    use crate::substrate::Tensor;
    use proptest::prelude::*;

    /// Every threshold between consecutive distinct scores plus both ends.
    fn brute_pe(c: &[f64], s: &[f64]) -> f64 {
        let mut all: Vec<f64> = c.iter().chain(s).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        let mut cands = vec![all[0] - 1.0, all[all.len() - 1] + 1.0];
        cands.extend(all.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        cands.extend(all.iter().copied());
        cands
            .iter()
            .map(|&t| {
                let fa = c.iter().filter(|&&x| x >= t).count() as f64 / c.len() as f64;
                let md = s.iter().filter(|&&x| x < t).count() as f64 / s.len() as f64;
                0.5 * (fa + md)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn pair_auc(c: &[f64], s: &[f64]) -> f64 {
        let mut total = 0.0;
        for &a in c {
            for &b in s {
                total += if b > a {
                    1.0
                } else if b == a {
                    0.5
                } else {
                    0.0
                };
            }
        }
        total / (c.len() * s.len()) as f64
    }

    #[test]
    fn worked_example() {
        let r = pe(&[0.1, 0.4], &[0.3, 0.9]).unwrap();
        assert_eq!(r.pe, 0.25);
        assert_eq!(r.auc, 0.75);
        assert_eq!(r.roc.first().map(|p| (p.false_alarm, p.true_positive)), Some((0.0, 0.0)));
        assert_eq!(r.roc.last().map(|p| (p.false_alarm, p.true_positive)), Some((1.0, 1.0)));
    }

    #[test]
    fn separable_and_identical() {
        let r = pe(&[0.1, 0.2, 0.3], &[0.6, 0.7]).unwrap();
        assert_eq!((r.pe, r.auc), (0.0, 1.0));
        let r = pe(&[0.2, 0.5, 0.5], &[0.5, 0.2, 0.5]).unwrap();
        assert_eq!((r.pe, r.auc), (0.5, 0.5));
        assert!(pe(&[], &[0.1]).is_err());
        assert!(pe(&[0.1], &[f64::NAN]).is_err());
    }

    #[test]
    fn roc_is_monotone() {
        let r = pe(&[0.1, 0.5, 0.5, 0.9], &[0.3, 0.5, 0.8]).unwrap();
        for w in r.roc.windows(2) {
            assert!(w[1].false_alarm >= w[0].false_alarm && w[1].true_positive >= w[0].true_positive);
        }
        assert!((r.auc - pair_auc(&[0.1, 0.5, 0.5, 0.9], &[0.3, 0.5, 0.8])).abs() < 1e-12);
    }

    #[test]
    fn mae_scale() {
        let a = ImageBatch::new(Tensor::full(&[2, 3, 4, 4], 0.0), ImageSource::Cover).unwrap();
        assert_eq!(mae_pairs(&a, &a).unwrap(), 0.0);
        let shifted = a.pixels.map(|_| crate::data::image_io::dequantize(129));
        let b = ImageBatch::new(shifted, ImageSource::Stego).unwrap();
        assert_eq!(mae_pairs(&a, &b).unwrap(), 1.0);
        let c = ImageBatch::new(Tensor::zeros(&[1, 3, 4, 4]), ImageSource::Stego).unwrap();
        assert!(mae_pairs(&a, &c).is_err());
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec((0u32..20).prop_map(|v| f64::from(v) / 20.0), 1..=64)
    }

    proptest! {
        #[test]
        fn pe_matches_brute_force(c in scores(), s in scores()) {
            prop_assert_eq!(pe(&c, &s).unwrap().pe, brute_pe(&c, &s));
        }

        #[test]
        fn auc_matches_pair_count(c in scores(), s in scores()) {
            prop_assert!((pe(&c, &s).unwrap().auc - pair_auc(&c, &s)).abs() < 1e-9);
        }

        #[test]
        fn pe_invariant_under_monotone_maps(c in scores(), s in scores()) {
            let f = |v: &f64| (3.0 * v - 1.0).exp() + v;
            let base = pe(&c, &s).unwrap();
            let mapped = pe(&c.iter().map(f).collect::<Vec<_>>(), &s.iter().map(f).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(base.pe, mapped.pe);
            prop_assert_eq!(base.auc, mapped.auc);
        }
    }
}
