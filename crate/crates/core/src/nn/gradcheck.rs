//! Central finite-difference verification of analytic gradients.

use crate::map::CellOMap;
use crate::nn::focal::{focal_logit_grad, focal_loss, FocalLossParams};
use crate::nn::model::{ClassifierModel, ClassifierError};

/// Central finite differences of `eval` at `params`, one coordinate at a time.
pub fn finite_difference_grads(
    params: &[f64],
    mut eval: impl FnMut(&[f64]) -> f64,
    epsilon: f64,
) -> Vec<f64> {
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let original = work[i];
        work[i] = original + epsilon;
        let up = eval(&work);
        work[i] = original - epsilon;
        let down = eval(&work);
        work[i] = original;
        grads.push((up - down) / (2.0 * epsilon));
    }
    grads
}

/// Worst relative disagreement between two gradient vectors.
///
/// Coordinates where both magnitudes sit below 1e-6 are compared absolutely,
/// so dead activations do not manufacture spurious relative error.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale < 1e-6 {
                (a - n).abs()
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Checks every parameter gradient of the focal loss through the classifier
/// against central finite differences; returns the max relative error.
pub fn gradient_check(
    model: &ClassifierModel,
    tile: &CellOMap,
    true_class: usize,
    epsilon: f64,
    loss_params: &FocalLossParams,
) -> Result<f64, ClassifierError> {
    assert!(
        (1e-7..=1e-4).contains(&epsilon),
        "epsilon must lie in [1e-7, 1e-4]"
    );
    let front = model.front_input(tile)?;
    let (probs, cache) = model.forward_from_front(&front);
    let dlogits = ndarray::Array1::from_vec(focal_logit_grad(
        probs.as_slice().unwrap(),
        true_class,
        loss_params,
    ));
    let analytic = model.backward(&cache, &dlogits).flat();

    let params = model.params_flat();
    let mut probe = model.clone();
    let numeric = finite_difference_grads(
        &params,
        |theta| {
            probe.set_params_flat(theta);
            let (p, _) = probe.forward_from_front(&front);
            focal_loss(p.as_slice().unwrap(), true_class, loss_params).value
        },
        epsilon,
    );
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{CellOMap, ChannelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tile(seed: u64, side: u32) -> CellOMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = CellOMap::zeroed("s", "p", 2.0, side, side, ChannelSpec::default());
        for plane in &mut map.planes {
            for y in 0..side {
                for x in 0..side {
                    if rng.random_bool(0.15) {
                        plane.set(x, y, true);
                    }
                }
            }
        }
        map
    }

    /// Breaks the zero-head symmetry so gradients reach every layer.
    fn randomize_head(model: &mut ClassifierModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in model.head_weight.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        for v in model.head_bias.iter_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }

    #[test]
    fn head_only_model_is_tight() {
        let mut model = ClassifierModel::new_linear_head(8, 3, 21).unwrap();
        randomize_head(&mut model, 22);
        let tile = random_tile(1, 8);
        let err = gradient_check(&model, &tile, 2, 1e-5, &FocalLossParams::default()).unwrap();
        assert!(err < 1e-6, "head-only gradient error {err}");
    }

    #[test]
    fn full_stack_passes_loose_bound() {
        let mut model = ClassifierModel::new_seeded(8, 3, 31).unwrap();
        randomize_head(&mut model, 32);
        let tile = random_tile(2, 8);
        let err = gradient_check(&model, &tile, 4, 1e-5, &FocalLossParams::default()).unwrap();
        assert!(err < 1e-4, "full-stack gradient error {err}");
    }

    #[test]
    fn gamma_zero_matches_ce_gradients_tightly() {
        let mut model = ClassifierModel::new_linear_head(8, 3, 41).unwrap();
        randomize_head(&mut model, 42);
        let tile = random_tile(3, 8);
        let front = model.front_input(&tile).unwrap();
        let (probs, cache) = model.forward_from_front(&front);
        let params = FocalLossParams::cross_entropy(6);
        let focal_grads = model
            .backward(
                &cache,
                &ndarray::Array1::from_vec(focal_logit_grad(
                    probs.as_slice().unwrap(),
                    1,
                    &params,
                )),
            )
            .flat();
        // independent CE logit gradient: p_j - delta_tj
        let ce_dlogits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, p)| p - if j == 1 { 1.0 } else { 0.0 })
            .collect();
        let ce_grads = model
            .backward(&cache, &ndarray::Array1::from_vec(ce_dlogits))
            .flat();
        for (a, b) in focal_grads.iter().zip(&ce_grads) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
