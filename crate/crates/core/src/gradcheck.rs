//! Central finite-difference validation of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{predict_scores, score_and_input_gradient, Model, ScoreKind};
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, floor)`; 0 when both are exactly zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of `f` at the coordinates in `indices`, each divided by
/// the step actually taken in f32.
pub fn central_differences<F>(mut f: F, x: &[f32], epsilon: f32, indices: &[usize]) -> Result<Vec<f64>>
where
    F: FnMut(&[f32]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = *probe
            .get(i)
            .ok_or_else(|| Error::dim(format!("coordinate {i} outside a point of length {}", x.len())))?;
        probe[i] = orig + epsilon;
        let up = f(&probe)?;
        probe[i] = orig - epsilon;
        let down = f(&probe)?;
        probe[i] = orig;
        let step = ((orig + epsilon) as f64) - ((orig - epsilon) as f64);
        out.push((up - down) / step);
    }
    Ok(out)
}

/// `||a - n|| / max(||a||, ||n||)` over paired components; 0 when both vanish.
pub fn vector_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    if diff == 0.0 {
        return 0.0;
    }
    diff / norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()))
}

/// Compare `analytic` against central differences of `f` at the coordinates in
/// `indices`, returning the worst relative error.
///
/// Components whose magnitude is far below the largest analytic component are
/// dominated by 32-bit rounding in the difference quotient, so the
/// denominator is floored at `1e-3` of the gradient's infinity norm.
pub fn check_coordinates<F>(f: F, x: &[f32], analytic: &[f32], epsilon: f32, indices: &[usize]) -> Result<f64>
where
    F: FnMut(&[f32]) -> Result<f64>,
{
    if analytic.len() != x.len() {
        return Err(Error::dim("analytic gradient and point differ in length"));
    }
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs() as f64));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    let numeric = central_differences(f, x, epsilon, indices)?;
    Ok(indices
        .iter()
        .zip(numeric)
        .map(|(&i, n)| relative_error(analytic[i] as f64, n, floor))
        .fold(0.0, f64::max))
}

/// Worst relative error between the analytic input gradient of `class` and
/// central differences on `sample_count` randomly chosen pixels.
pub fn finite_difference_check<M: Model + ?Sized>(
    model: &M,
    input: &Tensor,
    class: usize,
    score: ScoreKind,
    epsilon: f32,
    sample_count: usize,
    seed: u64,
) -> Result<f64> {
    if !(1e-4..=1e-2).contains(&epsilon) {
        return Err(Error::config(format!("epsilon must lie in [1e-4, 1e-2], got {epsilon}")));
    }
    if input.batch() != 1 {
        return Err(Error::dim("finite-difference check takes a single image"));
    }
    let p = input.numel();
    if sample_count > p {
        return Err(Error::config(format!("{sample_count} samples requested from {p} pixels")));
    }
    let (_, grad) = score_and_input_gradient(model, input, class, score)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = rand::seq::index::sample(&mut rng, p, sample_count).into_vec();
    let shape = input.shape().to_vec();
    check_coordinates(
        |x| {
            let t = Tensor::new(shape.clone(), x.to_vec())?;
            Ok(predict_scores(model, &t, class, score)?[0] as f64)
        },
        input.data(),
        grad.data(),
        epsilon,
        &indices,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Head, LinearModel};

    #[test]
    fn linear_model_is_exact() {
        let m = LinearModel::new(2, 2, vec![vec![1.0, -2.0, 3.0, 0.5]], vec![0.2], Head::Identity).unwrap();
        let x = Tensor::new(vec![1, 1, 2, 2], vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        // Power-of-two steps keep every probe exactly representable in f32.
        for eps in [2f32.powi(-13), 2f32.powi(-10), 2f32.powi(-7)] {
            let err = finite_difference_check(&m, &x, 0, ScoreKind::Logit, eps, 4, 1).unwrap();
            assert!(err < 1e-6, "eps {eps}: {err}");
        }
    }

    #[test]
    fn constant_model_reports_zero() {
        let m = LinearModel::constant(3, 3, &[0.4, 0.6]).unwrap();
        let x = Tensor::full(&[1, 1, 3, 3], 0.5);
        let err = finite_difference_check(&m, &x, 1, ScoreKind::Probability, 1e-3, 9, 0).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn vector_error_of_scaled_copy() {
        assert_eq!(vector_relative_error(&[3.0, 4.0], &[3.0, 4.0]), 0.0);
        assert_eq!(vector_relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        // ||(0.3, 0.4)|| / ||(3, 4)||
        assert!((vector_relative_error(&[3.0, 4.0], &[2.7, 3.6]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn epsilon_out_of_range_is_rejected() {
        let m = LinearModel::constant(2, 2, &[0.5, 0.5]).unwrap();
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(finite_difference_check(&m, &x, 0, ScoreKind::Logit, 0.1, 1, 0).is_err());
        assert!(finite_difference_check(&m, &x, 0, ScoreKind::Logit, 1e-3, 5, 0).is_err());
    }
}
