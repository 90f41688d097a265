//! Ensemble statistics checked against an independent per-pixel
//! recomputation over the stored member reconstructions.

use cumolos_core::field_io::{extract_patches, generate_synthetic, preprocess, PreprocessConfig, SyntheticSpec};
use cumolos_core::mae_model::ModelConfig;
use cumolos_core::mc_inference::{aggregate, ensemble, ensemble_members, member_seeds, InferenceConfig};
use cumolos_core::patching::CurriculumSchedule;
use cumolos_core::training::{TrainConfig, Trainer};

#[test]
fn fifty_member_statistics_match_streaming_recomputation() {
    let spec = SyntheticSpec {
        time_steps: 128,
        ..SyntheticSpec::default()
    };
    let field = generate_synthetic::<f32>(&spec, 11).unwrap();
    let field = preprocess(&field, &PreprocessConfig::default()).unwrap();
    let patches = extract_patches(&field, 32, 32, 32).unwrap();
    let train: Vec<_> = patches.iter().take(8).cloned().collect();
    let config = TrainConfig {
        epochs: 3,
        batch_size: 4,
        warmup_epochs: 1,
        base_lr: 0.25,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&train, ModelConfig::tiny(), config, CurriculumSchedule::default()).unwrap();
    trainer.run(|_| Ok(())).unwrap();
    let model = trainer.model.cast::<f64>();

    let patch = patches.last().unwrap().clone();
    let patch = cumolos_core::field_io::PatchSample {
        values: patch.values.mapv(f64::from),
        validity: patch.validity,
        t_origin: patch.t_origin,
        g_origin: patch.g_origin,
    };
    let inference = InferenceConfig {
        members: 50,
        base_seed: 100,
        ..InferenceConfig::default()
    };
    let seeds = member_seeds(inference.base_seed, inference.members);
    let members = ensemble_members(&patch, &model, &seeds, &inference).unwrap();
    let result = aggregate(&members, seeds.clone()).unwrap();
    assert_eq!(result, ensemble(&patch, &model, &inference).unwrap());
    assert_eq!(result.member_seeds, (100..150).collect::<Vec<u64>>());

    let mut spread = 0.0f64;
    for ((i, j), &mean) in result.mean.indexed_iter() {
        // Welford accumulation, a different summation path from the library
        let (mut n, mut m, mut m2) = (0.0f64, 0.0f64, 0.0f64);
        for member in &members {
            let x = member[[i, j]];
            n += 1.0;
            let d = x - m;
            m += d / n;
            m2 += d * (x - m);
        }
        let sigma = (m2 / n).sqrt();
        assert!((mean - m).abs() <= 1e-6, "mean at ({i}, {j}): {mean} vs {m}");
        assert!((result.sigma[[i, j]] - sigma).abs() <= 1e-6, "sigma at ({i}, {j})");
        spread = spread.max(sigma);
    }
    // a degenerate ensemble would make the comparison vacuous
    assert!(spread > 1e-3, "max sigma {spread}");
}
