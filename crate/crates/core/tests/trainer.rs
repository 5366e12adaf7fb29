use diconstruct::data::{synth_generate, SynthOutput, SynthSpec};
use diconstruct::persist::model_to_string;
use diconstruct::scm::Variant;
use diconstruct::trainer::{fit, random_search, SearchSpace, TrainConfig};

fn toy() -> SynthOutput {
    synth_generate(&SynthSpec {
        n_concepts: 2,
        n_train: 500,
        n_validation: 200,
        n_test: 200,
        identity_features: true,
        feature_noise: 0.0,
        nuisance_scale: 0.0,
        modulation: 0.0,
        seed: 12,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn small(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 5,
        batch_size: 32,
        common_layers: vec![8],
        concept_layers: vec![4],
        disc_layers: vec![8],
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_gamma_matches_no_discriminator() {
    let out = toy();
    for variant in [Variant::Global, Variant::Local] {
        let with = fit(
            &out.splits,
            &out.dag,
            &TrainConfig {
                gamma: 0.0,
                independence: true,
                variant,
                ..small(3)
            },
        )
        .unwrap();
        let without = fit(
            &out.splits,
            &out.dag,
            &TrainConfig {
                gamma: 0.0,
                independence: false,
                variant,
                ..small(3)
            },
        )
        .unwrap();
        assert!(with.model.discriminator.is_some());
        assert!(without.model.discriminator.is_none());
        assert_eq!(with.model.exogenous, without.model.exogenous);
        assert_eq!(with.model.scm, without.model.scm);
        for (a, b) in with.trace.iter().zip(&without.trace) {
            assert_eq!(a.loss.distill, b.loss.distill);
            assert_eq!(a.loss.concept, b.loss.concept);
            assert_eq!(a.loss.total, b.loss.total);
            assert_eq!(a.val_fidelity, b.val_fidelity);
        }
    }
}

#[test]
fn same_seed_bit_identical_artifact() {
    let out = toy();
    let cfg = TrainConfig {
        dropout: 0.2,
        batch_norm: true,
        variant: Variant::Local,
        ..small(9)
    };
    let a = fit(&out.splits, &out.dag, &cfg).unwrap();
    let b = fit(&out.splits, &out.dag, &cfg).unwrap();
    assert_eq!(model_to_string(&a.model), model_to_string(&b.model));
    assert_eq!(a.trace, b.trace);
    let c = fit(&out.splits, &out.dag, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(model_to_string(&a.model), model_to_string(&c.model));
}

#[test]
fn distillation_loss_decreases_on_toy_set() {
    let out = toy();
    for variant in [Variant::Global, Variant::Local] {
        let run = fit(&out.splits, &out.dag, &TrainConfig { variant, ..small(1) }).unwrap();
        let ld: Vec<f64> = run.trace.iter().map(|r| r.loss.distill).collect();
        assert_eq!(ld.len(), 5);
        assert!(ld.windows(2).all(|w| w[1] < w[0]), "{variant:?}: {ld:?}");
    }
}

#[test]
fn selection_score_is_best_validation_sum() {
    let out = toy();
    let run = fit(&out.splits, &out.dag, &small(2)).unwrap();
    let best = run.trace.iter().map(|r| r.val_fidelity + r.val_concept_accuracy).fold(f64::MIN, f64::max);
    assert_eq!(run.selection_score, best);
    assert_eq!(run.selection_score, run.validation.fidelity + run.validation.concept_accuracy);
    assert!(run.model.interventions.is_some());
}

#[test]
fn single_iteration_search_equals_fit() {
    let out = toy();
    let space = SearchSpace::from_toml_str(
        "seed = 6\nepochs = 3\ncommon_layers = [[8]]\nconcept_layers = [[4]]\nlr = [0.01, 0.1]\nvariant = [\"global\", \"local\"]\n",
    )
    .unwrap();
    let runs = random_search(&space, 1, &out.splits, &out.dag).unwrap();
    assert_eq!(runs.len(), 1);
    let cfg = space.sample_configs(1).unwrap().remove(0);
    let direct = fit(&out.splits, &out.dag, &cfg).unwrap();
    assert_eq!(model_to_string(&runs[0].model), model_to_string(&direct.model));
    assert_eq!(runs[0].trace, direct.trace);
}

#[test]
fn search_returns_requested_count() {
    let out = toy();
    let space = SearchSpace::from_toml_str("seed = 1\nepochs = 1\ncommon_layers = [[4]]\nconcept_layers = [[2]]\nbatch_size = [16, 128]\n").unwrap();
    assert_eq!(random_search(&space, 4, &out.splits, &out.dag).unwrap().len(), 4);
    assert!(random_search(&space, 0, &out.splits, &out.dag).is_err());
}
