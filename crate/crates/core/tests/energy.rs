use proptest::prelude::*;
use rand::Rng;
use thoughtcal::energy::{logits_to_energies, partition_function, residual_reweight};
use thoughtcal::gradcheck::{central_difference, rel_error, FD_STEP};
use thoughtcal::rng::{stream_rng, Stream};
use thoughtcal::{Context, EnergyConfig, EnergyFunction, EnergyModel, Tensor, ThoughtBlock};

fn random_setup(index: u64) -> (EnergyModel, Context, ThoughtBlock) {
    let mut rng = stream_rng(21, Stream::Init, index);
    let cfg = EnergyConfig {
        context_dim: rng.gen_range(1..=4),
        latent_dim: rng.gen_range(1..=5),
        position_dim: 3,
        hidden: vec![rng.gen_range(2..=7), rng.gen_range(2..=7)],
        max_thoughts: 4,
        temperature: 1.0,
    };
    let mut model = EnergyModel::new(cfg.clone(), &mut rng).unwrap();
    let names: Vec<String> = model.params().names().cloned().collect();
    for name in names {
        let shape = model.params().get(&name).unwrap().shape().to_vec();
        *model.params_mut().get_mut(&name).unwrap() = Tensor::randn(&shape, 0.6, &mut rng);
    }
    let ctx = Context::from_pooled(Tensor::randn(&[cfg.context_dim], 1.0, &mut rng));
    let n = rng.gen_range(1..=4);
    let block = ThoughtBlock::new(Tensor::randn(&[n, cfg.latent_dim], 1.0, &mut rng)).unwrap();
    (model, ctx, block)
}

/// Straight-line forward pass written without the tape.
fn reference_energy(model: &EnergyModel, ctx: &Context, block: &ThoughtBlock) -> f64 {
    let p = model.params();
    let cfg = model.config();
    let pos = p.get("energy.pos_emb").unwrap();
    let mut total = 0.0;
    for i in 0..block.n_thoughts() {
        let mut x: Vec<f64> = ctx.pooled().data().to_vec();
        x.extend_from_slice(block.tensor().row(i));
        x.extend_from_slice(pos.row(i));
        for layer in 0..cfg.hidden.len() {
            let w = p.get(&format!("energy.layer{layer}.weight")).unwrap();
            let b = p.get(&format!("energy.layer{layer}.bias")).unwrap();
            x = (0..w.cols())
                .map(|j| (b.data()[j] + (0..w.rows()).map(|k| x[k] * w.row(k)[j]).sum::<f64>()).tanh())
                .collect();
        }
        let w = p.get("energy.out.weight").unwrap();
        let b = p.get("energy.out.bias").unwrap().data()[0];
        total += b + x.iter().enumerate().map(|(k, v)| v * w.row(k)[0]).sum::<f64>();
    }
    total
}

#[test]
fn forward_matches_straight_line_reference() {
    for index in 0..16 {
        let (model, ctx, block) = random_setup(index);
        let tape = model.energy(&ctx, &block).unwrap();
        let reference = reference_energy(&model, &ctx, &block);
        assert!((tape - reference).abs() <= 1e-12 * (1.0 + reference.abs()), "case {index}");
    }
}

#[test]
fn latent_gradient_matches_finite_differences() {
    for index in 0..16 {
        let (model, ctx, block) = random_setup(index);
        let analytic = model.grad_latent(&ctx, &block).unwrap();
        let shape = block.tensor().shape().to_vec();
        let numeric = central_difference(
            |x| model.energy(&ctx, &ThoughtBlock::new(Tensor::new(shape.clone(), x.to_vec())?)?),
            block.tensor().data(),
            FD_STEP,
        )
        .unwrap();
        let err = rel_error(analytic.data(), &numeric);
        assert!(err <= 1e-6, "case {index}: rel error {err}");
    }
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    for index in 0..16 {
        let (model, ctx, block) = random_setup(index);
        let analytic = model.grad_params(&ctx, &block).unwrap().flatten();
        let mut probe = model.clone();
        let numeric = central_difference(
            |x| {
                probe.params_mut().assign_flat(x)?;
                probe.energy(&ctx, &block)
            },
            &model.params().flatten(),
            FD_STEP,
        )
        .unwrap();
        let err = rel_error(&analytic, &numeric);
        assert!(err <= 1e-6, "case {index}: rel error {err}");
    }
}

#[test]
fn latent_vjp_matches_finite_differences() {
    for index in 0..8 {
        let (model, ctx, block) = random_setup(index);
        let mut rng = stream_rng(22, Stream::Init, index);
        let u = Tensor::randn(block.tensor().shape(), 1.0, &mut rng);
        let analytic = model.grad_latent_vjp(&ctx, &block, &u).unwrap().flatten();
        let mut probe = model.clone();
        let numeric = central_difference(
            |x| {
                probe.params_mut().assign_flat(x)?;
                probe.grad_latent(&ctx, &block)?.dot(&u)
            },
            &model.params().flatten(),
            FD_STEP,
        )
        .unwrap();
        let err = rel_error(&analytic, &numeric);
        assert!(err <= 1e-6, "case {index}: rel error {err}");
    }
}

#[test]
fn reweight_examples() {
    let p = residual_reweight(&[0.5, 0.5], &[0.0, 2f64.ln()], 1.0).unwrap();
    assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
    let hot = residual_reweight(&[0.5, 0.5], &[0.0, 1.0], 1e6).unwrap();
    let tv: f64 = 0.5 * hot.iter().map(|q| (q - 0.5).abs()).sum::<f64>();
    assert!(tv < 1e-4);
    assert_eq!(logits_to_energies(&[2.0, 0.5]).unwrap(), vec![-2.0, -0.5]);
    assert!(residual_reweight(&[0.5, 0.5], &[0.0, 0.0], 0.0).is_err());
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

fn probs_and_energies() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|n| (distribution(n), prop::collection::vec(-20.0f64..20.0, n)))
}

proptest! {
    #[test]
    fn reweight_is_a_distribution((base, energies) in probs_and_energies(), t in 0.05f64..100.0) {
        let p = residual_reweight(&base, &energies, t).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&q| q >= 0.0));
    }

    #[test]
    fn reweight_matches_partition_function((base, energies) in probs_and_energies(), t in 0.5f64..10.0) {
        let p = residual_reweight(&base, &energies, t).unwrap();
        let z = partition_function(&base, &energies, t).unwrap();
        for i in 0..p.len() {
            let direct = base[i] * (-energies[i] / t).exp() / z;
            prop_assert!((p[i] - direct).abs() <= 1e-12 * (1.0 + direct));
        }
    }

    #[test]
    fn boltzmann_of_negated_logits_is_softmax(logits in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let n = logits.len();
        let energies = logits_to_energies(&logits).unwrap();
        let uniform = vec![1.0 / n as f64; n];
        let boltzmann = residual_reweight(&uniform, &energies, 1.0).unwrap();
        let softmax = Tensor::vector(logits).softmax_last();
        for (a, b) in boltzmann.iter().zip(softmax.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_is_a_sum_over_rows(index in 0u64..64, perm_seed in any::<u64>()) {
        let (model, ctx, block) = random_setup(index);
        let n = block.n_thoughts();
        let mut positions: Vec<usize> = (0..n).collect();
        let mut rng = stream_rng(perm_seed, Stream::Shuffle, 0);
        use rand::seq::SliceRandom;
        positions.shuffle(&mut rng);
        let rows: Vec<f64> = positions.iter().flat_map(|&p| block.tensor().row(p).to_vec()).collect();
        let permuted = ThoughtBlock::new(Tensor::new(block.tensor().shape().to_vec(), rows).unwrap()).unwrap();
        let a = model.energy(&ctx, &block).unwrap();
        let b = model.energy_at(&ctx, &permuted, &positions).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}
