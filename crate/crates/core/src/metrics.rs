//! Standard depth-estimation error metrics and parameter accounting.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::DepthMap;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rel: f64,
    pub rms: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: usize,
    pub n_params: Option<usize>,
    /// Ground-truth pixels where the prediction was not positive.
    #[serde(skip)]
    pub nonpositive_pred: usize,
}

/// Pairwise summation.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Compares `pred` against `gt` over the pixels where `gt` is valid.
///
/// Non-positive predictions at such pixels enter `rel` and `rms` with their
/// value, fail every `delta` threshold and are left out of `log10`, whose
/// mean runs over the remaining pixels. Thresholds use strict `<`.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap) -> Result<MetricsReport> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    let mut abs_rel = Vec::new();
    let mut sq = Vec::new();
    let mut log_err = Vec::new();
    let mut within = [0usize; 3];
    let mut both_valid = 0usize;
    let mut nonpositive = 0usize;
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if !(g > 0.0) {
            continue;
        }
        abs_rel.push((p - g).abs() / g);
        sq.push((p - g) * (p - g));
        if p > 0.0 {
            both_valid += 1;
            log_err.push((p.log10() - g.log10()).abs());
            let ratio = (p / g).max(g / p);
            for (count, t) in within.iter_mut().zip(thresholds) {
                if ratio < t {
                    *count += 1;
                }
            }
        } else {
            nonpositive += 1;
        }
    }
    if both_valid == 0 {
        return Err(Error::NoValidPixels(
            "no pixel is valid in both prediction and ground truth".into(),
        ));
    }
    if nonpositive > 0 {
        log::warn!("{nonpositive} ground-truth pixels have a non-positive prediction");
    }
    let n = abs_rel.len() as f64;
    Ok(MetricsReport {
        rel: pairwise_sum(&abs_rel) / n,
        rms: (pairwise_sum(&sq) / n).sqrt(),
        log10: pairwise_sum(&log_err) / log_err.len() as f64,
        delta1: within[0] as f64 / n,
        delta2: within[1] as f64 / n,
        delta3: within[2] as f64 / n,
        n_valid: abs_rel.len(),
        n_params: None,
        nonpositive_pred: nonpositive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ParamKind {
    /// One 3D point per pixel.
    Pointcloud,
    /// One plane per triangular patch.
    Patchcloud,
}

/// Three parameters per pixel or per face.
pub fn param_count(kind: ParamKind, size: usize) -> usize {
    match kind {
        ParamKind::Pointcloud | ParamKind::Patchcloud => 3 * size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, v: &[f64]) -> DepthMap {
        DepthMap::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn identity() {
        let g = map(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let r = evaluate(&g, &g).unwrap();
        assert_eq!((r.rel, r.rms, r.log10), (0.0, 0.0, 0.0));
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
        assert_eq!(r.n_valid, 4);
    }

    #[test]
    fn ratio_tie_fails_delta1() {
        let r = evaluate(&map(2, 1, &[2.5, 2.0]), &map(2, 1, &[2.0, 2.0])).unwrap();
        assert_eq!(r.rel, 0.125);
        assert!((r.rms - 0.125f64.sqrt()).abs() < 1e-15);
        assert_eq!((r.delta1, r.delta2, r.delta3), (0.5, 1.0, 1.0));
    }

    #[test]
    fn uniform_scale_between_thresholds() {
        let g = map(3, 1, &[1.0, 2.0, 5.0]);
        let s = 1.25f64.powf(1.5);
        let p = map(3, 1, &[s, 2.0 * s, 5.0 * s]);
        let r = evaluate(&p, &g).unwrap();
        assert_eq!((r.delta1, r.delta2, r.delta3), (0.0, 1.0, 1.0));
    }

    #[test]
    fn small_relative_perturbation() {
        let g = DepthMap::from_fn(8, 8, |x, y| 1.0 + (x + 3 * y) as f64 * 0.1).unwrap();
        let eps = 1e-6;
        let p = DepthMap::from_fn(8, 8, |x, y| g.get(x, y) * (1.0 + eps)).unwrap();
        let r = evaluate(&p, &g).unwrap();
        assert!((r.rel - eps).abs() < 1e-9);
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn nonpositive_predictions() {
        let r = evaluate(&map(3, 1, &[0.0, 2.0, 1.0]), &map(3, 1, &[1.0, 2.0, 0.0])).unwrap();
        assert_eq!(r.n_valid, 2);
        assert_eq!(r.nonpositive_pred, 1);
        assert_eq!(r.rel, 0.5);
        assert_eq!(r.log10, 0.0);
        assert_eq!(r.delta1, 0.5);
        assert!(evaluate(&map(1, 1, &[0.0]), &map(1, 1, &[1.0])).is_err());
        assert!(evaluate(&map(1, 1, &[1.0]), &map(1, 1, &[0.0])).is_err());
        assert!(evaluate(&map(2, 1, &[1.0, 1.0]), &map(1, 2, &[1.0, 1.0])).is_err());
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(param_count(ParamKind::Pointcloud, 640 * 480), 921_600);
        assert_eq!(param_count(ParamKind::Patchcloud, 10_667), 32_001);
        assert_eq!(param_count(ParamKind::Patchcloud, 0), 0);
    }

    #[test]
    fn report_json_field_names() {
        let g = map(1, 1, &[1.0]);
        let mut r = evaluate(&g, &g).unwrap();
        r.n_params = Some(6);
        let v: serde_json::Value =
            serde_json::from_str(&crate::json::to_string(&r).unwrap()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort();
        assert_eq!(
            keys,
            ["delta1", "delta2", "delta3", "log10", "n_params", "n_valid", "rel", "rms"]
        );
    }
}
