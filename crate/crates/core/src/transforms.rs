//! Variance-stabilizing and standardizing transforms with exact inverses.
//!
//! Parameters are fitted from a training slice only; applying them to other
//! rows never refits.

use serde::{Deserialize, Serialize};

use crate::math::{mean, median, median_sorted, sample_sd, sorted};
use crate::{Error, Result};

/// Scale floor for degenerate (constant) inputs.
pub const SCALE_FLOOR: f64 = 1e-8;
/// Consistency factor turning the MAD into a normal standard deviation.
pub const MAD_NORMALIZER: f64 = 1.4826;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Asinh,
    Standardize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub kind: TransformKind,
    pub center: f64,
    pub scale: f64,
}

/// Result of fitting; `degenerate` is set when the scale hit the floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fitted {
    pub params: TransformParams,
    pub degenerate: bool,
}

pub fn fit_transform(train_values: &[f64], kind: TransformKind) -> Result<Fitted> {
    let finite: alloc::vec::Vec<f64> =
        train_values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Input("no finite training values to fit a transform".into()));
    }
    let (center, raw_scale) = match kind {
        TransformKind::Asinh => {
            let s = sorted(&finite);
            let med = median_sorted(&s);
            let dev: alloc::vec::Vec<f64> = s.iter().map(|v| (v - med).abs()).collect();
            (med, MAD_NORMALIZER * median(&dev))
        }
        TransformKind::Standardize => (mean(&finite), sample_sd(&finite)),
    };
    let degenerate = !(raw_scale > SCALE_FLOOR);
    let scale = if degenerate { SCALE_FLOOR } else { raw_scale };
    Ok(Fitted { params: TransformParams { kind, center, scale }, degenerate })
}

impl TransformParams {
    pub fn identity() -> Self {
        TransformParams { kind: TransformKind::Standardize, center: 0.0, scale: 1.0 }
    }

    pub fn apply(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.scale;
        match self.kind {
            TransformKind::Asinh => libm::asinh(u),
            TransformKind::Standardize => u,
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        let u = match self.kind {
            TransformKind::Asinh => libm::sinh(z),
            TransformKind::Standardize => z,
        };
        self.center + self.scale * u
    }

    /// Applies in place and returns how many outputs are non-finite.
    pub fn apply_slice(&self, xs: &mut [f64]) -> usize {
        let mut bad = 0;
        for x in xs.iter_mut() {
            *x = self.apply(*x);
            if !x.is_finite() {
                bad += 1;
            }
        }
        bad
    }

    pub fn apply_checked(&self, x: f64) -> Result<f64> {
        let z = self.apply(x);
        if z.is_finite() {
            Ok(z)
        } else {
            Err(Error::Input(alloc::format!("non-finite transform input {x}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_hand_values() {
        let f = fit_transform(&[1.0, 2.0, 3.0], TransformKind::Standardize).unwrap();
        assert_eq!(f.params.center, 2.0);
        assert!((f.params.scale - 1.0).abs() < 1e-15);
        assert!(!f.degenerate);
    }

    #[test]
    fn asinh_symmetric_center() {
        let f = fit_transform(&[-4.0, 0.0, 4.0], TransformKind::Asinh).unwrap();
        assert_eq!(f.params.center, 0.0);
        assert!((f.params.scale - 4.0 * MAD_NORMALIZER).abs() < 1e-12);
    }

    #[test]
    fn constant_column_floors_scale() {
        for kind in [TransformKind::Asinh, TransformKind::Standardize] {
            let f = fit_transform(&[5.0; 10], kind).unwrap();
            assert_eq!(f.params.scale, SCALE_FLOOR);
            assert!(f.degenerate);
            assert_eq!(f.params.apply(5.0), 0.0);
        }
    }

    #[test]
    fn centering_and_tail_compression() {
        let f = fit_transform(&[1.0, 7.0, 2.0, 9.0, 4.0], TransformKind::Asinh).unwrap();
        let p = f.params;
        assert_eq!(p.apply(p.center), 0.0);
        let z = p.apply(p.center + 1e6 * p.scale);
        assert!(z < 15.0);
        // asinh(u) = ln(u + sqrt(u^2 + 1))
        let oracle = (1e6f64 + (1e12f64 + 1.0).sqrt()).ln();
        assert!((z - oracle).abs() < 1e-9);
    }

    #[test]
    fn non_finite_input_is_flagged() {
        let p = TransformParams { kind: TransformKind::Asinh, center: 0.0, scale: 1.0 };
        let mut xs = [1.0, f64::NAN, 2.0];
        assert_eq!(p.apply_slice(&mut xs), 1);
        assert!(p.apply_checked(f64::INFINITY).is_err());
    }
}
