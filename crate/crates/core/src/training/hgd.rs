//! Hierarchical gradient decay: extraction-loss gradients of generator layers
//! are shrunk by a factor that grows as the layer's feature map gets coarser.

use crate::substrate::{Real, Tensor};

/// `δ^-(log2 √(HW) − log2 √(hw))`. An infinite `δ` zeroes every layer below
/// full resolution and leaves full-resolution layers alone.
pub fn hgd_factor(h: usize, w: usize, full_h: usize, full_w: usize, delta: f64) -> f64 {
    let exponent = 0.5 * ((full_h * full_w) as f64).log2() - 0.5 * ((h * w) as f64).log2();
    if exponent == 0.0 {
        return 1.0;
    }
    delta.powf(-exponent)
}

pub fn hgd_scale<T: Real>(grad: &Tensor<T>, h: usize, w: usize, full_h: usize, full_w: usize, delta: f64) -> Tensor<T> {
    let f = T::of(hgd_factor(h, w, full_h, full_w, delta));
    grad.map(|g| g * f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_cases() {
        assert_eq!(hgd_factor(128, 128, 128, 128, 10.0), 1.0);
        assert_eq!(hgd_factor(64, 64, 128, 128, 10.0), 0.1);
        let f = hgd_factor(4, 8, 128, 128, 10.0);
        assert!((f - 10f64.powf(-4.5)).abs() <= f64::EPSILON * f);
        assert_eq!(hgd_factor(4, 4, 32, 32, f64::INFINITY), 0.0);
        assert_eq!(hgd_factor(32, 32, 32, 32, f64::INFINITY), 1.0);
    }

    #[test]
    fn identity_at_full_resolution() {
        let g = Tensor::new(vec![3], vec![1.5f64, -2.0, 1e-30]).unwrap();
        assert_eq!(hgd_scale(&g, 32, 32, 32, 32, 10.0), g);
    }

    proptest! {
        #[test]
        fn linear(a in -5.0f64..5.0, b in -5.0f64..5.0, x in proptest::collection::vec(-3.0f64..3.0, 8), y in proptest::collection::vec(-3.0f64..3.0, 8), k in 0u32..5) {
            let res = 4usize << k;
            let g1 = Tensor::new(vec![8], x).unwrap();
            let g2 = Tensor::new(vec![8], y).unwrap();
            let combo = g1.zip_map(&g2, |p, q| a * p + b * q).unwrap();
            let lhs = hgd_scale(&combo, res, res, 64, 64, 10.0);
            let s1 = hgd_scale(&g1, res, res, 64, 64, 10.0);
            let s2 = hgd_scale(&g2, res, res, 64, 64, 10.0);
            let rhs = s1.zip_map(&s2, |p, q| a * p + b * q).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        }
    }
}
