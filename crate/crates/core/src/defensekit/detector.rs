//! Heatmap-distance detector: a poisoned model that rewired its frequency
//! sensitivity sits measurably far from a clean reference heatmap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::FourierHeatmap;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorVerdict {
    pub distance: f64,
    pub threshold: f64,
    pub flagged: bool,
}

/// Mean absolute difference of the two max-normalized heatmaps.
/// Symmetric in its arguments.
pub fn heatmap_distance(a: &FourierHeatmap, b: &FourierHeatmap) -> Result<f64> {
    if a.h != b.h || a.w != b.w {
        return Err(Error::dimension(format!(
            "heatmap grids {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    let norm = |hm: &FourierHeatmap| -> Vec<f64> {
        let max = hm.grid.iter().cloned().fold(0.0f64, f64::max);
        if max == 0.0 {
            hm.grid.clone()
        } else {
            hm.grid.iter().map(|v| v / max).collect()
        }
    };
    let (na, nb) = (norm(a), norm(b));
    Ok(na.iter().zip(&nb).map(|(x, y)| (x - y).abs()).sum::<f64>() / na.len() as f64)
}

/// Flag the suspect when its normalized distance from the reference
/// exceeds the threshold.
pub fn heatmap_detect(
    suspect: &FourierHeatmap,
    reference: &FourierHeatmap,
    threshold: f64,
) -> Result<DetectorVerdict> {
    let distance = heatmap_distance(suspect, reference)?;
    Ok(DetectorVerdict { distance, threshold, flagged: distance > threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::HeatmapMeta;

    fn heatmap(grid: Vec<f64>, h: usize, w: usize) -> FourierHeatmap {
        FourierHeatmap {
            h,
            w,
            grid,
            meta: HeatmapMeta {
                alpha: 4.0,
                batch: 1,
                seed: 0,
                dataset_id: "d".into(),
                model_id: "m".into(),
            },
        }
    }

    #[test]
    fn identical_heatmaps_are_not_flagged() {
        let a = heatmap(vec![0.1, 0.5, 0.9, 0.2], 2, 2);
        let v = heatmap_detect(&a, &a.clone(), 0.05).unwrap();
        assert_eq!(v.distance, 0.0);
        assert!(!v.flagged);
    }

    #[test]
    fn distance_is_symmetric_and_scale_invariant() {
        let a = heatmap(vec![0.1, 0.5, 0.9, 0.2], 2, 2);
        let b = heatmap(vec![0.3, 0.3, 0.3, 0.3], 2, 2);
        let ab = heatmap_distance(&a, &b).unwrap();
        let ba = heatmap_distance(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
        // scaling one map leaves the normalized distance unchanged
        let half = heatmap(a.grid.iter().map(|v| v / 2.0).collect(), 2, 2);
        assert!((heatmap_distance(&half, &b).unwrap() - ab).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_a_dimension_error() {
        let a = heatmap(vec![0.0; 4], 2, 2);
        let b = heatmap(vec![0.0; 9], 3, 3);
        assert!(heatmap_detect(&a, &b, 0.1).is_err());
    }

    #[test]
    fn larger_disruption_means_larger_distance() {
        let reference = heatmap(vec![1.0, 0.8, 0.2, 0.1], 2, 2);
        let mild = heatmap(vec![1.0, 0.7, 0.3, 0.1], 2, 2);
        let wild = heatmap(vec![0.1, 0.2, 1.0, 0.9], 2, 2);
        let d_mild = heatmap_distance(&mild, &reference).unwrap();
        let d_wild = heatmap_distance(&wild, &reference).unwrap();
        assert!(d_wild > d_mild);
        let v = heatmap_detect(&wild, &reference, 3.0 * d_mild).unwrap();
        assert!(v.flagged);
    }
}
