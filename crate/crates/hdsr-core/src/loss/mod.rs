//! Classification losses: binary cross-entropy, its focal-modulated variant,
//! the multiclass generalization, and the sequence alignment objective used
//! by the transcription head.
//!
//! All functions here are pure and safe to call concurrently.

mod sequence;

pub use sequence::{sequence_loss, sequence_loss_from_logits, min_frames_for, BLANK};

use crate::error::{Error, Result};

/// Probability clamp applied by the lenient constructors. This is the single
/// place where out-of-range estimates are pulled back into the open interval.
pub const PROB_CLAMP: f64 = 1e-12;

/// A binary ground truth with the estimated probability for the positive class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinarySample {
    /// Ground-truth label, +1 or -1.
    pub y: i8,
    /// Estimated probability of the y = +1 class, in (0,1).
    pub p: f64,
}

impl BinarySample {
    /// Strict constructor: rejects probabilities outside the open interval.
    pub fn new(y: i8, p: f64) -> Result<Self> {
        if y != 1 && y != -1 {
            return Err(Error::InvalidArgument(format!("label {y} must be +1 or -1")));
        }
        if !(p > 0.0 && p < 1.0) || !p.is_finite() {
            return Err(Error::ProbabilityDomain(p));
        }
        Ok(BinarySample { y, p })
    }

    /// Lenient constructor: clamps p into [PROB_CLAMP, 1 - PROB_CLAMP].
    pub fn clamped(y: i8, p: f64) -> Self {
        let p = if p.is_finite() { p } else { 0.5 };
        BinarySample {
            y: if y >= 0 { 1 } else { -1 },
            p: p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP),
        }
    }
}

/// Loss weighting knobs for the focal variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    /// Weighting factor applied to this sample's loss, in [0,1].
    pub alpha_t: f64,
    /// Focusing parameter; 0 recovers plain cross-entropy.
    pub gamma: f64,
}

impl FocalParams {
    pub fn new(alpha_t: f64, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha_t) {
            return Err(Error::InvalidArgument(format!("alpha_t {alpha_t} outside [0,1]")));
        }
        if gamma < 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma {gamma} must be >= 0")));
        }
        Ok(FocalParams { alpha_t, gamma })
    }

    /// Plain cross-entropy in focal clothing.
    pub fn plain() -> Self {
        FocalParams { alpha_t: 1.0, gamma: 0.0 }
    }
}

/// The probability assigned to the true class: p for y = +1, 1 - p otherwise.
pub fn p_t(sample: BinarySample) -> f64 {
    if sample.y == 1 {
        sample.p
    } else {
        1.0 - sample.p
    }
}

/// Binary cross-entropy, -log(p_t).
pub fn cross_entropy(sample: BinarySample) -> f64 {
    -p_t(sample).ln()
}

/// Focal loss, -alpha_t * (1 - p_t)^gamma * log(p_t).
pub fn focal_loss(sample: BinarySample, params: FocalParams) -> f64 {
    let pt = p_t(sample);
    let modulator = if params.gamma == 0.0 {
        1.0
    } else {
        (1.0 - pt).powf(params.gamma)
    };
    -params.alpha_t * modulator * pt.ln()
}

/// Analytic derivative of the focal loss with respect to p.
pub fn focal_grad(sample: BinarySample, params: FocalParams) -> f64 {
    let pt = p_t(sample);
    let one_minus = 1.0 - pt;
    // d/dp_t [ -a (1-p_t)^g ln p_t ] = a g (1-p_t)^(g-1) ln p_t - a (1-p_t)^g / p_t
    let d_pt = if params.gamma == 0.0 {
        -params.alpha_t / pt
    } else {
        params.alpha_t * params.gamma * one_minus.powf(params.gamma - 1.0) * pt.ln()
            - params.alpha_t * one_minus.powf(params.gamma) / pt
    };
    // chain through p_t = p or 1 - p
    if sample.y == 1 {
        d_pt
    } else {
        -d_pt
    }
}

/// Multiclass cross-entropy, -log(distribution[target]).
///
/// The caller guarantees the distribution is normalized; only the target
/// index is validated here.
pub fn multiclass_ce(distribution: &[f64], target: usize) -> Result<f64> {
    if target >= distribution.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} classes",
            distribution.len()
        )));
    }
    let sum: f64 = distribution.iter().sum();
    if !sum.is_finite() {
        return Err(Error::Numerics("non-finite class distribution".into()));
    }
    debug_assert!((sum - 1.0).abs() < 1e-6, "distribution does not sum to 1");
    let p = distribution[target].clamp(PROB_CLAMP, 1.0);
    Ok(-p.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_focal(sample: BinarySample, params: FocalParams, h: f64) -> f64 {
        let up = BinarySample { p: sample.p + h, ..sample };
        let dn = BinarySample { p: sample.p - h, ..sample };
        (focal_loss(up, params) - focal_loss(dn, params)) / (2.0 * h)
    }

    #[test]
    fn p_t_matches_definition() {
        let s = BinarySample::new(1, 0.3).unwrap();
        assert_eq!(p_t(s), 0.3);
        let s = BinarySample::new(-1, 0.3).unwrap();
        assert_eq!(p_t(s), 0.7);
    }

    #[test]
    fn p_t_flip_sums_to_one() {
        for &p in &[0.001, 0.25, 0.5, 0.77, 0.999] {
            let pos = BinarySample::new(1, p).unwrap();
            let neg = BinarySample::new(-1, p).unwrap();
            assert!((p_t(pos) + p_t(neg) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_reference_points() {
        // p -> 1 drives the loss to zero
        let s = BinarySample::new(1, 1.0 - 1e-12).unwrap();
        assert!(cross_entropy(s) < 1e-11);
        // symmetric point
        let s = BinarySample::new(1, 0.5).unwrap();
        assert!((cross_entropy(s) - std::f64::consts::LN_2).abs() < 1e-12);
        // -ln 0.9 evaluated to full precision
        let s = BinarySample::new(1, 0.9).unwrap();
        assert!((cross_entropy(s) - 0.10536051565782628).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_out_of_domain() {
        assert!(BinarySample::new(1, 0.0).is_err());
        assert!(BinarySample::new(1, 1.0).is_err());
        assert!(BinarySample::new(1, -0.2).is_err());
        assert!(BinarySample::new(1, f64::NAN).is_err());
    }

    #[test]
    fn clamped_constructor_pulls_into_domain() {
        let s = BinarySample::clamped(1, 0.0);
        assert_eq!(s.p, PROB_CLAMP);
        let s = BinarySample::clamped(-1, 2.0);
        assert_eq!(s.p, 1.0 - PROB_CLAMP);
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let params = FocalParams::plain();
        for &y in &[1i8, -1] {
            for i in 1..1000 {
                let p = i as f64 / 1000.0;
                let s = BinarySample::new(y, p).unwrap();
                assert!((focal_loss(s, params) - cross_entropy(s)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn focal_reference_point() {
        // p_t = 0.9, gamma = 2: 0.01 * -ln(0.9)
        let s = BinarySample::new(1, 0.9).unwrap();
        let params = FocalParams::new(1.0, 2.0).unwrap();
        let expected = 0.01 * 0.10536051565782628;
        assert!((focal_loss(s, params) - expected).abs() < 1e-15);
    }

    #[test]
    fn focal_downweights_easy_examples() {
        let params = FocalParams::new(1.0, 2.0).unwrap();
        let mut prev_ratio = f64::MAX;
        for &p in &[0.9, 0.99, 0.999, 0.9999] {
            let s = BinarySample::new(1, p).unwrap();
            let ratio = focal_loss(s, params) / cross_entropy(s);
            assert!(ratio < prev_ratio);
            prev_ratio = ratio;
        }
        assert!(prev_ratio < 1e-6);
    }

    #[test]
    fn focal_grad_matches_finite_differences() {
        let grid_p = [0.05, 0.2, 0.5, 0.8, 0.95];
        let grid_g = [0.0, 0.5, 1.0, 2.0, 5.0];
        let grid_a = [0.25, 0.75, 1.0];
        for &y in &[1i8, -1] {
            for &p in &grid_p {
                for &g in &grid_g {
                    for &a in &grid_a {
                        let s = BinarySample::new(y, p).unwrap();
                        let params = FocalParams::new(a, g).unwrap();
                        let analytic = focal_grad(s, params);
                        let numeric = fd_focal(s, params, 1e-6);
                        let denom = analytic.abs().max(1e-9);
                        assert!(
                            ((analytic - numeric) / denom).abs() <= 1e-6,
                            "y={y} p={p} g={g} a={a}: {analytic} vs {numeric}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn focal_grad_ce_case_and_sign() {
        let s = BinarySample::new(1, 0.4).unwrap();
        let g = focal_grad(s, FocalParams::plain());
        assert!((g - (-1.0 / 0.4)).abs() < 1e-12);
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let s = BinarySample::new(1, p).unwrap();
            let params = FocalParams::new(0.5, 2.0).unwrap();
            assert!(focal_grad(s, params) <= 0.0, "loss must not increase in p for y=+1");
        }
    }

    #[test]
    fn focal_bounded_by_alpha_ce() {
        for &y in &[1i8, -1] {
            for i in 1..200 {
                let p = i as f64 / 200.0;
                let s = BinarySample::new(y, p).unwrap();
                for &g in &[0.0, 1.0, 3.0] {
                    for &a in &[0.25, 1.0] {
                        let params = FocalParams::new(a, g).unwrap();
                        assert!(focal_loss(s, params) <= a * cross_entropy(s) + 1e-12);
                        assert!(focal_loss(s, params) >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn multiclass_ce_reference_points() {
        let mut one_hot = vec![0.0; 10];
        one_hot[3] = 1.0;
        assert!(multiclass_ce(&one_hot, 3).unwrap() < 1e-11);
        let uniform = vec![0.1; 10];
        assert!((multiclass_ce(&uniform, 7).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert!(multiclass_ce(&uniform, 10).is_err());
    }

    #[test]
    fn multiclass_matches_binary_on_two_classes() {
        // class 0 plays the role of y = +1
        for &p in &[0.1, 0.5, 0.9] {
            let dist = [p, 1.0 - p];
            let s = BinarySample::new(1, p).unwrap();
            assert!((multiclass_ce(&dist, 0).unwrap() - cross_entropy(s)).abs() < 1e-12);
            let s = BinarySample::new(-1, p).unwrap();
            assert!((multiclass_ce(&dist, 1).unwrap() - cross_entropy(s)).abs() < 1e-12);
        }
    }
}
