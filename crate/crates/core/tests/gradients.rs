use cumolos_core::mae_model::{masked_mse_grad, MaeModel, ModelConfig};
use cumolos_core::patching::{sample_mask, tokenize_array, MaskRealization, TokenGrid};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_config() -> ModelConfig {
    ModelConfig {
        encoder_layers: 1,
        decoder_layers: 1,
        encoder_dim: 8,
        decoder_dim: 8,
        encoder_heads: 2,
        decoder_heads: 2,
        mlp_ratio: 2.0,
        ..ModelConfig::default()
    }
}

fn random_grid(h: usize, w: usize, rng: &mut ChaCha8Rng) -> TokenGrid<f64> {
    tokenize_array(&Array2::from_shape_fn((h, w), |_| rng.gen_range(-1.0..1.0))).unwrap()
}

/// Model with every parameter jittered so that no gradient is structurally
/// zero by symmetry (zero biases, unit gains).
fn jittered_model(seed: u64) -> MaeModel<f64> {
    let mut model = MaeModel::<f64>::new(check_config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    model
        .params_mut()
        .iter_mut()
        .for_each(|p| *p += rng.gen_range(-0.1..0.1));
    model
}

/// Largest relative deviation between analytic and central-difference
/// gradients, with the parameter name where it occurs.
fn worst_relative_error(size: usize, seed: u64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = random_grid(size, size, &mut rng);
    let mut validity = Array2::from_elem(grid.tokens.dim(), true);
    validity[[grid.len() - 1, 1]] = false;
    let mask = sample_mask(grid.len(), 0.5, seed + 7).unwrap();
    let model = jittered_model(seed + 3);
    let (_, grad) = model.loss_and_grad(&grid, &mask, &validity).unwrap();

    let h = 1e-5;
    let floor = 1e-6;
    let mut worst = (0.0f64, 0usize);
    let mut probe = model.clone();
    for i in 0..model.num_parameters() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let up = probe.loss(&grid, &mask, &validity).unwrap();
        probe.params_mut()[i] = orig - h;
        let down = probe.loss(&grid, &mask, &validity).unwrap();
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(floor);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    let name = model
        .layout()
        .entries
        .iter()
        .find(|e| e.slot.range().contains(&worst.1))
        .map(|e| e.name.clone())
        .unwrap();
    (worst.0, name)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for (size, seed) in [(4, 1), (8, 2)] {
        let (err, name) = worst_relative_error(size, seed);
        assert!(err <= 1e-4, "{size}x{size}: max relative error {err} at {name}");
    }
}

#[test]
fn every_parameter_group_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = random_grid(8, 8, &mut rng);
    let validity = Array2::from_elem(grid.tokens.dim(), true);
    let mask = sample_mask(grid.len(), 0.5, 1).unwrap();
    let model = jittered_model(4);
    let (_, grad) = model.loss_and_grad(&grid, &mask, &validity).unwrap();
    for entry in model.layout().entries {
        let norm: f64 = grad[entry.slot.range()].iter().map(|g| g * g).sum();
        assert!(norm > 0.0, "{} has zero gradient", entry.name);
    }
}

#[test]
fn loss_ignores_visible_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = random_grid(8, 8, &mut rng);
    let validity = Array2::from_elem(grid.tokens.dim(), true);
    let mask = sample_mask(grid.len(), 0.5, 2).unwrap();
    let model = jittered_model(5);
    let out = model.forward(&grid, &mask).unwrap();
    let dpred = masked_mse_grad(&out, &grid, &validity);
    for k in mask.visible_indices() {
        assert!(dpred.row(k).iter().all(|&g| g == 0.0));
    }
    let all_visible = MaskRealization::from_visible(vec![true; grid.len()], 0);
    let (loss, grad) = model.loss_and_grad(&grid, &all_visible, &validity).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}
