use cfodds_core::cevae::{
    sample_counterfactual_bundles, train_cevae, Bandwidth, Cevae, CevaeArchitecture, CevaeSpec,
    CevaeTrainConfig, CounterfactualBundle, CounterfactualSample, GaussianPosterior, LossWeights,
};
use cfodds_core::data::{generate_sem_dataset, split_dataset, LabeledSample, SemRecipe};
use cfodds_core::diffnet::gradcheck::{max_relative_error, numerical_gradient};
use cfodds_core::diffnet::{softmax_cross_entropy, Mode, ParamStore};
use cfodds_core::fair::{
    batch_fair_loss, clp_term, fair_loss, fair_loss_and_gradients, load_predictor, save_predictor,
    score_bundles, select_models, train_baseline, train_fair_predictor, BaselineConfig,
    BaselineSearchSpace, FairCandidate, FairTrainConfig, FairWeights, GridPoint, HiddenLayers,
    LatentChoice, PredictorHandle, PredictorInput, PredictorSpec, ValidationScores,
};
use cfodds_core::{rng, Error};
use proptest::prelude::*;
use rand::Rng;

fn hidden(dropout_prob: f64, layer_norm: bool) -> HiddenLayers {
    HiddenLayers {
        hidden_dim: 5,
        num_hidden_layers: 1,
        dropout_prob,
        layer_norm,
    }
}

fn latent_predictor(seed: u64, k: usize, dropout: f64, ln: bool) -> PredictorHandle {
    let spec = PredictorSpec::latent(3, k, 2, &hidden(dropout, ln)).unwrap();
    let mut p = PredictorHandle::new(spec, seed).unwrap();
    let mut r = rng::seeded(seed ^ 0xabc);
    for (_, t) in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += r.gen_range(-0.5..0.5);
        }
    }
    p
}

fn random_bundle(id: u64, k: usize, seed: u64) -> CounterfactualBundle {
    let mut r = rng::seeded(seed);
    let a = r.gen_range(0..k);
    let y = r.gen_range(0..2);
    let mu: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
    let sigma = vec![0.5; 3];
    let u: Vec<f64> = mu.iter().map(|m| m + r.gen_range(-0.5..0.5)).collect();
    let counterfactuals = (0..k)
        .filter(|&b| b != a)
        .map(|b| CounterfactualSample {
            a: b,
            x_cf: Some(vec![0, 2]),
            y_cf: if r.gen_bool(0.7) { y } else { 1 - y },
            p_y_cf: 0.5,
        })
        .collect();
    CounterfactualBundle {
        sample: LabeledSample {
            id,
            a,
            y,
            x: vec![1],
        },
        posterior: GaussianPosterior { mu, sigma },
        u,
        counterfactuals,
    }
}

#[test]
fn clp_term_hand_cases() {
    assert_eq!(clp_term([0.3, -1.0], [0.3, -1.0], 1, 1), 0.0);
    assert_eq!(clp_term([5.0, -3.0], [0.0, 9.0], 1, 0), 0.0);
    assert_eq!(clp_term([1.0, 0.0], [0.0, 1.0], 0, 0), 1.0);
}

proptest! {
    #[test]
    fn clp_term_is_nonnegative_and_symmetric(
        a in proptest::array::uniform2(-50.0f64..50.0),
        b in proptest::array::uniform2(-50.0f64..50.0),
        y in 0u8..2,
        y_cf in 0u8..2,
    ) {
        let v = clp_term(a, b, y, y_cf);
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v, clp_term(b, a, y, y_cf));
    }

    #[test]
    fn fair_loss_is_linear_in_lambda_clp(seed in 0u64..1000, c in 0.01f64..20.0, lambda_cf in 0.0f64..5.0) {
        let p = latent_predictor(seed, 3, 0.0, false);
        let b = random_bundle(1, 3, seed);
        let w = |l: f64| FairWeights { lambda_cf, lambda_clp: l, cf_gradients: true };
        let single = fair_loss(&p, &b, w(c), LatentChoice::Draw).unwrap();
        let double = fair_loss(&p, &b, w(2.0 * c), LatentChoice::Draw).unwrap();
        let diff = double.total - single.total;
        prop_assert!((diff - c * single.clp).abs() <= 1e-12 * double.total.abs().max(1.0));
    }
}

#[test]
fn loss_weights_select_components() {
    let p = latent_predictor(3, 2, 0.0, false);
    for s in 0..10 {
        let b = random_bundle(s, 2, 50 + s);
        let zero = FairWeights {
            lambda_cf: 0.0,
            lambda_clp: 0.0,
            cf_gradients: true,
        };
        let l = fair_loss(&p, &b, zero, LatentChoice::Draw).unwrap();
        assert_eq!(l.total, l.factual_ce);
        let cf_only = FairWeights {
            lambda_cf: 1.0,
            ..zero
        };
        let l = fair_loss(&p, &b, cf_only, LatentChoice::Draw).unwrap();
        assert_eq!(l.total, l.factual_ce + l.cf_ce);

        // components against direct evaluation of the logits
        let rows = [
            (PredictorInput::Latent(&b.u), b.sample.a),
            (PredictorInput::Latent(&b.u), b.counterfactuals[0].a),
        ];
        let logits = p.logits(&rows).unwrap();
        let lf = [logits[[0, 0]], logits[[0, 1]]];
        let lc = [logits[[1, 0]], logits[[1, 1]]];
        let c = &b.counterfactuals[0];
        assert!((l.factual_ce - softmax_cross_entropy(&lf, b.sample.y as usize)).abs() < 1e-12);
        assert!((l.cf_ce - softmax_cross_entropy(&lc, c.y_cf as usize)).abs() < 1e-12);
        assert!((l.clp - clp_term(lf, lc, b.sample.y, c.y_cf)).abs() < 1e-12);
    }
}

#[test]
fn missing_counterfactual_is_reported() {
    let p = latent_predictor(3, 3, 0.0, false);
    let mut b = random_bundle(1, 3, 2);
    let dropped = b.counterfactuals.pop().unwrap().a;
    let w = FairWeights {
        lambda_cf: 1.0,
        lambda_clp: 1.0,
        cf_gradients: true,
    };
    match fair_loss(&p, &b, w, LatentChoice::Draw) {
        Err(Error::MissingCounterfactual(a)) => assert_eq!(a, dropped),
        other => panic!("expected a missing counterfactual, got {other:?}"),
    }
}

/// Loss with every logit recomputed at `probe` except the counterfactual
/// logits inside the pairing term, which stay at their values under `frozen`.
fn frozen_pairing_loss(
    probe: &PredictorHandle,
    frozen: &PredictorHandle,
    bundles: &[&CounterfactualBundle],
    w: FairWeights,
    mode: Mode,
) -> f64 {
    let rows: Vec<(PredictorInput<'_>, usize)> = bundles
        .iter()
        .flat_map(|b| {
            std::iter::once((PredictorInput::Latent(&b.u[..]), b.sample.a)).chain(
                b.counterfactuals
                    .iter()
                    .map(|c| (PredictorInput::Latent(&b.u[..]), c.a)),
            )
        })
        .collect();
    let live = probe.forward(&rows, mode).unwrap().0;
    let fixed = frozen.forward(&rows, mode).unwrap().0;
    let mut total = 0.0;
    let mut r = 0;
    for b in bundles {
        let lf = [live[[r, 0]], live[[r, 1]]];
        let mut t = softmax_cross_entropy(&lf, b.sample.y as usize);
        for (i, c) in b.counterfactuals.iter().enumerate() {
            let row = r + 1 + i;
            let lc = [live[[row, 0]], live[[row, 1]]];
            let lc_frozen = [fixed[[row, 0]], fixed[[row, 1]]];
            t += w.lambda_cf * softmax_cross_entropy(&lc, c.y_cf as usize);
            t += w.lambda_clp * clp_term(lf, lc_frozen, b.sample.y, c.y_cf);
        }
        total += t / bundles.len() as f64;
        r += 1 + b.counterfactuals.len();
    }
    total
}

#[test]
fn fair_loss_gradients_match_finite_differences() {
    for seed in 0..20u64 {
        let k = 2 + (seed % 2) as usize;
        let p = latent_predictor(
            seed,
            k,
            if seed % 3 == 0 { 0.0 } else { 0.3 },
            seed % 2 == 0,
        );
        let owned: Vec<CounterfactualBundle> = (0..5)
            .map(|i| random_bundle(i, k, 1000 * seed + i))
            .collect();
        let bundles: Vec<&CounterfactualBundle> = owned.iter().collect();
        let mode = Mode::Train { seed: 7 + seed };
        for cf_gradients in [true, false] {
            let w = FairWeights {
                lambda_cf: 0.7,
                lambda_clp: 2.5,
                cf_gradients,
            };
            let (_, grads) =
                fair_loss_and_gradients(&p, &bundles, w, LatentChoice::Draw, mode).unwrap();
            let numeric = if cf_gradients {
                numerical_gradient(&p, 1e-5, |q: &PredictorHandle| {
                    batch_fair_loss(q, &bundles, w, LatentChoice::Draw, mode)
                        .unwrap()
                        .total
                })
            } else {
                numerical_gradient(&p, 1e-5, |q: &PredictorHandle| {
                    frozen_pairing_loss(q, &p, &bundles, w, mode)
                })
            };
            let err = max_relative_error(&grads, &numeric);
            assert!(
                err < 1e-4,
                "seed {seed}, cf_gradients {cf_gradients}: {err}"
            );
        }
    }
}

#[test]
fn stop_gradient_blocks_the_counterfactual_branch() {
    // Only counterfactual rows read the embedding row of the counterfactual
    // group, so with lambda_cf = 0 its gradient comes from the pairing term
    // alone.
    let p = latent_predictor(11, 2, 0.0, false);
    let mut b = random_bundle(0, 2, 5);
    b.sample.a = 0;
    b.counterfactuals[0].a = 1;
    b.counterfactuals[0].y_cf = b.sample.y;
    let bundles = [&b];
    let row = |g: &cfodds_core::fair::PredictorGradients| g.embedding.row(1).to_vec();
    let w = |cf_gradients| FairWeights {
        lambda_cf: 0.0,
        lambda_clp: 1.0,
        cf_gradients,
    };

    let (_, frozen) =
        fair_loss_and_gradients(&p, &bundles, w(false), LatentChoice::Draw, Mode::Eval).unwrap();
    assert!(row(&frozen).iter().all(|&g| g == 0.0));
    let probe = numerical_gradient(&p, 1e-5, |q: &PredictorHandle| {
        frozen_pairing_loss(q, &p, &bundles, w(false), Mode::Eval)
    });
    assert!(
        probe[0][2..4].iter().all(|&g| g == 0.0),
        "{:?}",
        &probe[0][2..4]
    );

    let (_, live) =
        fair_loss_and_gradients(&p, &bundles, w(true), LatentChoice::Draw, Mode::Eval).unwrap();
    let live_row = row(&live);
    assert!(live_row.iter().any(|&g| g.abs() > 1e-6));
    let numeric = numerical_gradient(&p, 1e-5, |q: &PredictorHandle| {
        batch_fair_loss(q, &bundles, w(true), LatentChoice::Draw, Mode::Eval)
            .unwrap()
            .total
    });
    for (a, n) in live_row.iter().zip(&numeric[0][2..4]) {
        assert!((a - n).abs() < 1e-6 * a.abs().max(1.0));
    }
}

fn candidate(
    index: usize,
    lambda_clp: f64,
    clp: Option<f64>,
    p: &PredictorHandle,
) -> FairCandidate {
    FairCandidate {
        index,
        point: GridPoint {
            lambda_clp,
            lambda_cf: 0.0,
            cf_gradients: true,
            learning_rate: 1e-3,
        },
        predictor: clp.map(|_| p.clone()),
        validation: clp.map(|clp| ValidationScores {
            clp,
            ce: 0.5,
            total: 1.0,
        }),
        epochs_run: 1,
        best_epoch: 1,
        failure: clp.is_none().then(|| "diverged".to_string()),
    }
}

#[test]
fn selection_by_validation_clp() {
    let p = latent_predictor(1, 2, 0.0, false);
    let cands = vec![
        candidate(0, 0.1, Some(0.5), &p),
        candidate(1, 0.1, Some(0.2), &p),
        candidate(2, 1.0, Some(0.3), &p),
        candidate(3, 1.0, Some(0.3), &p),
        candidate(4, 1.0, None, &p),
        candidate(5, 10.0, None, &p),
        candidate(6, 10.0, Some(0.9), &p),
    ];
    let chosen = select_models(&cands).unwrap();
    let picked: Vec<usize> = chosen.iter().map(|c| c.index).collect();
    assert_eq!(picked, vec![1, 2, 6]);
    let again = select_models(&chosen).unwrap();
    assert_eq!(again.iter().map(|c| c.index).collect::<Vec<_>>(), picked);

    assert!(select_models(&[]).is_err());
    assert!(select_models(&[candidate(0, 0.0, None, &p)]).is_err());
}

fn trained_setup() -> (
    Cevae,
    Vec<LabeledSample>,
    Vec<LabeledSample>,
    Vec<LabeledSample>,
) {
    let mut recipe = SemRecipe::desk_default(3);
    recipe.feature_dim = 20;
    recipe.latent_dim = 4;
    recipe.a_to_y = vec![0.0, 2.5];
    let (data, _) = generate_sem_dataset(&recipe.build().unwrap(), 2500).unwrap();
    let split = split_dataset(&data.samples, [0.8, 0.1, 0.1], 1).unwrap();
    let arch = CevaeArchitecture {
        latent_dim: 4,
        group_embedding_dim: 4,
        hidden_dim: 24,
        num_hidden_layers: 1,
        dropout_prob: 0.0,
        layer_norm: false,
    };
    let spec = CevaeSpec::new(20, 2, &arch, LossWeights::default(), Bandwidth::Median).unwrap();
    let train = data.subset(&split.train).unwrap();
    let val = data.subset(&split.validation).unwrap();
    let test = data.subset(&split.test).unwrap();
    let config = CevaeTrainConfig {
        epochs: 4,
        learning_rate: 1e-3,
        batch_size: 128,
    };
    let vae = train_cevae(&spec, &train, &val, &config, 2).unwrap().model;
    (vae, train, val, test)
}

fn small_fair_config(lambda_clp_grid: Vec<f64>) -> FairTrainConfig {
    FairTrainConfig {
        lambda_clp_grid,
        lambda_cf_grid: vec![0.0],
        cf_gradients_grid: vec![true],
        learning_rate_grid: vec![1e-2],
        epochs: 8,
        batch_size: 128,
        patience: 10,
        ..FairTrainConfig::default()
    }
}

#[test]
fn fair_training_grid_determinism_and_pairing_pressure() {
    let (vae, train, val, test) = trained_setup();

    let one = train_fair_predictor(&small_fair_config(vec![0.0]), &vae, &train, &val, 9).unwrap();
    assert_eq!(one.len(), 1);

    let config = small_fair_config(vec![0.0, 10.0]);
    let cands = train_fair_predictor(&config, &vae, &train, &val, 9).unwrap();
    let again = train_fair_predictor(&config, &vae, &train, &val, 9).unwrap();
    for (a, b) in cands.iter().zip(&again) {
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.predictor, b.predictor);
    }
    assert_eq!(
        cands[0].predictor, one[0].predictor,
        "candidates train independently of the grid"
    );
    let clp = |c: &FairCandidate| c.validation.unwrap().clp;
    assert!(
        clp(&cands[1]) < clp(&cands[0]),
        "{} vs {}",
        clp(&cands[1]),
        clp(&cands[0])
    );

    let selected = select_models(&cands).unwrap();
    assert_eq!(selected.len(), 2);
    let refs: Vec<&LabeledSample> = test.iter().collect();
    let bundles = sample_counterfactual_bundles(&vae, &refs, 4, true).unwrap();
    let scored = score_bundles(selected[1].predictor.as_ref().unwrap(), &bundles).unwrap();
    assert_eq!(scored.len(), test.len());
    assert!(scored.iter().all(|s| (0.0..=1.0).contains(&s.p_f)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fair.json");
    let model = selected[1].predictor.as_ref().unwrap();
    save_predictor(model, &path, 9, 1).unwrap();
    assert_eq!(&load_predictor(&path).unwrap(), model);
}

fn separable(n: usize, seed: u64) -> Vec<LabeledSample> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|i| {
            let y = r.gen_range(0..2u8);
            let mut x: Vec<usize> = (1..6).filter(|_| r.gen_bool(0.5)).collect();
            if y == 1 {
                x.insert(0, 0);
            }
            LabeledSample {
                id: i as u64,
                a: r.gen_range(0..2),
                y,
                x,
            }
        })
        .collect()
}

fn single_space(learning_rate: Vec<f64>) -> BaselineSearchSpace {
    BaselineSearchSpace {
        num_hidden_layers: vec![1],
        hidden_dim: vec![8],
        dropout_prob: vec![0.0],
        layer_norm: vec![false],
        learning_rate,
    }
}

#[test]
fn baseline_learns_a_separable_problem() {
    let train = separable(400, 1);
    let val = separable(100, 2);
    let config = BaselineConfig {
        space: single_space(vec![1e-2]),
        iterations: 5,
        epochs: 40,
        batch_size: 32,
        patience: 10,
    };
    let out = train_baseline(&config, 6, 2, &train, &val, 3).unwrap();
    assert_eq!(out.candidates.len(), 1);
    let rows: Vec<(PredictorInput<'_>, usize)> = val
        .iter()
        .map(|s| (PredictorInput::Features(&s.x), s.a))
        .collect();
    let logits = out.predictor.logits(&rows).unwrap();
    let correct = val
        .iter()
        .enumerate()
        .filter(|(i, s)| u8::from(logits[[*i, 1]] > logits[[*i, 0]]) == s.y)
        .count();
    assert_eq!(correct, val.len());
}

#[test]
fn baseline_prefers_the_trained_candidate() {
    let train = separable(300, 4);
    let val = separable(100, 5);
    let config = BaselineConfig {
        space: single_space(vec![0.0, 1e-2]),
        iterations: 20,
        epochs: 10,
        batch_size: 32,
        patience: 10,
    };
    let out = train_baseline(&config, 6, 2, &train, &val, 3).unwrap();
    assert_eq!(out.candidates.len(), 2);
    assert_eq!(out.candidates[out.selected].learning_rate, 1e-2);
    let frozen = &out.candidates[0];
    assert_eq!(frozen.learning_rate, 0.0);
    assert!(frozen.val_ce.unwrap() > out.candidates[out.selected].val_ce.unwrap());
}

#[test]
fn baseline_random_search_samples_distinct_configurations() {
    let space = BaselineSearchSpace::default();
    assert_eq!(space.size(), 288);
    let train = separable(60, 6);
    let val = separable(20, 7);
    let config = BaselineConfig {
        space,
        iterations: 3,
        epochs: 1,
        batch_size: 32,
        patience: 1,
    };
    let out = train_baseline(&config, 6, 2, &train, &val, 8).unwrap();
    let picks: Vec<usize> = out.candidates.iter().map(|c| c.configuration).collect();
    assert_eq!(picks.len(), 3);
    assert!(picks.windows(2).all(|w| w[0] < w[1]));
    let again = train_baseline(&config, 6, 2, &train, &val, 8).unwrap();
    assert_eq!(again.candidates, out.candidates);
}
