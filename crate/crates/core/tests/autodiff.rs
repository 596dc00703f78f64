use proptest::prelude::*;
use rand::Rng;
use thoughtcal::gradcheck::{central_difference, dense_hessian, mat_vec, rel_error, FD_STEP};
use thoughtcal::hvp::hvp_latent;
use thoughtcal::rng::{stream_rng, Stream};
use thoughtcal::{Gradients, ParamSet, Sgd, Tape, Tensor};

/// `sum(tanh(tanh(x W1 + b1) W2 + b2))` for a row vector `x`.
fn two_layer(tape: &mut Tape, x: &Tensor, params: &ParamSet) -> (thoughtcal::Var, thoughtcal::ParamVars) {
    let vars = params.register(tape, true).unwrap();
    let x = tape.constant(x.clone()).unwrap();
    let z = tape.matmul(x, vars.get("w1").unwrap()).unwrap();
    let z = tape.add_row(z, vars.get("b1").unwrap()).unwrap();
    let h = tape.tanh(z).unwrap();
    let z = tape.matmul(h, vars.get("w2").unwrap()).unwrap();
    let z = tape.add_row(z, vars.get("b2").unwrap()).unwrap();
    let y = tape.tanh(z).unwrap();
    let out = tape.sum(y).unwrap();
    (out, vars)
}

fn random_net(index: u64) -> (Tensor, ParamSet) {
    let mut rng = stream_rng(11, Stream::Init, index);
    let d_in = rng.gen_range(1..=8);
    let d_h = rng.gen_range(1..=8);
    let d_out = rng.gen_range(1..=8);
    let mut p = ParamSet::new();
    p.insert("w1", Tensor::randn(&[d_in, d_h], 0.8, &mut rng));
    p.insert("b1", Tensor::randn(&[d_h], 0.3, &mut rng));
    p.insert("w2", Tensor::randn(&[d_h, d_out], 0.8, &mut rng));
    p.insert("b2", Tensor::randn(&[d_out], 0.3, &mut rng));
    (Tensor::randn(&[1, d_in], 1.0, &mut rng), p)
}

#[test]
fn tape_matches_finite_differences_on_random_tanh_nets() {
    for index in 0..40 {
        let (x, params) = random_net(index);
        let mut tape = Tape::new();
        let (out, vars) = two_layer(&mut tape, &x, &params);
        let analytic = vars.gradients(&mut tape, out).unwrap().flatten();
        let mut probe = params.clone();
        let numeric = central_difference(
            |flat| {
                probe.assign_flat(flat)?;
                let mut t = Tape::new();
                let (o, _) = two_layer(&mut t, &x, &probe);
                t.value(o).item()
            },
            &params.flatten(),
            FD_STEP,
        )
        .unwrap();
        let err = rel_error(&analytic, &numeric);
        assert!(err <= 1e-5, "net {index}: rel error {err}");
    }
}

#[test]
fn matmul_and_softmax_examples() {
    let a = Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let b = Tensor::matrix(&[vec![1.0], vec![1.0]]).unwrap();
    assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
    let s = Tensor::zeros(&[3]).softmax_last();
    for &p in s.data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn frozen_parameter_gets_gradient_but_no_update() {
    let mut p = ParamSet::new();
    p.insert("a", Tensor::vector(vec![1.0, 2.0]));
    p.insert("b", Tensor::vector(vec![3.0]));
    p.set_frozen("a", true).unwrap();
    let mut tape = Tape::new();
    let vars = p.register(&mut tape, true).unwrap();
    let a2 = tape.sq_norm(vars.get("a").unwrap()).unwrap();
    let b2 = tape.sq_norm(vars.get("b").unwrap()).unwrap();
    let loss = tape.add(a2, b2).unwrap();
    let g = vars.gradients(&mut tape, loss).unwrap();
    assert_eq!(g.get("a").unwrap().data(), &[2.0, 4.0]);
    let before = p.get("a").unwrap().clone();
    Sgd::new(0.1).step(&mut p, &g).unwrap();
    assert_eq!(p.get("a").unwrap(), &before);
    assert_eq!(p.get("b").unwrap().data(), &[3.0 - 0.1 * 6.0]);
}

/// Small tanh energy on a 4-dim latent, built on the tape.
fn tanh_energy_grad(w: &Tensor, v: &Tensor, l: &Tensor) -> thoughtcal::Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.leaf(l.reshape(&[1, 4])?)?;
    let w = tape.constant(w.clone())?;
    let v = tape.constant(v.clone())?;
    let z = tape.matmul(x, w)?;
    let h = tape.tanh(z)?;
    let e = tape.matmul(h, v)?;
    let e = tape.sum(e)?;
    let g = tape.gradients(e, &[x])?;
    g[0].reshape(&[4])
}

#[test]
fn hvp_matches_dense_hessian_on_tanh_energy() {
    for index in 0..8 {
        let mut rng = stream_rng(5, Stream::Init, index);
        let w = Tensor::randn(&[4, 6], 0.7, &mut rng);
        let v_out = Tensor::randn(&[6, 1], 0.7, &mut rng);
        let l = Tensor::randn(&[4], 1.0, &mut rng);
        let dir = Tensor::randn(&[4], 1.0, &mut rng);
        let hv = hvp_latent(|x| tanh_energy_grad(&w, &v_out, x), &l, &dir).unwrap();
        let h = dense_hessian(|x| tanh_energy_grad(&w, &v_out, x), &l, 1e-5).unwrap();
        let dense = mat_vec(&h, dir.data());
        let err = rel_error(hv.data(), &dense);
        assert!(err <= 1e-3, "case {index}: rel error {err}");
    }
}

#[test]
fn hvp_examples() {
    let l = Tensor::vector(vec![0.3, -1.2]);
    let v = Tensor::vector(vec![1.0, 1.0]);
    let identity = hvp_latent(|x| Ok(x.clone()), &l, &v).unwrap();
    assert!(rel_error(identity.data(), &[1.0, 1.0]) < 1e-9);
    let d = Tensor::vector(vec![1.0, 3.0]);
    let diag = hvp_latent(|x| x.mul(&d), &l, &v).unwrap();
    assert!(rel_error(diag.data(), &[1.0, 3.0]) < 1e-9);
}

fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-50.0f64..50.0, r * c)))
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one((r, c, data) in matrix_strategy()) {
        let t = Tensor::new(vec![r, c], data).unwrap();
        let s = t.softmax_last();
        for i in 0..r {
            let sum: f64 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn sgd_never_moves_frozen_entries(
        a in prop::collection::vec(-5.0f64..5.0, 1..6),
        g in prop::collection::vec(-5.0f64..5.0, 1..6),
        lr in 1e-4f64..1.0,
    ) {
        let n = a.len().min(g.len());
        let mut p = ParamSet::new();
        p.insert("frozen", Tensor::vector(a[..n].to_vec()));
        p.insert("live", Tensor::vector(a[..n].to_vec()));
        p.set_frozen("frozen", true).unwrap();
        let mut grads = Gradients::zeros_like(&p);
        grads.0.insert("frozen".into(), Tensor::vector(g[..n].to_vec()));
        grads.0.insert("live".into(), Tensor::vector(g[..n].to_vec()));
        let before = p.get("frozen").unwrap().to_owned();
        Sgd::new(lr).step(&mut p, &grads).unwrap();
        prop_assert_eq!(p.get("frozen").unwrap(), &before);
    }

    #[test]
    fn matmul_is_associative_with_vectors(
        a in prop::collection::vec(-3.0f64..3.0, 6),
        b in prop::collection::vec(-3.0f64..3.0, 6),
        v in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let a = Tensor::new(vec![2, 3], a).unwrap();
        let b = Tensor::new(vec![3, 2], b).unwrap();
        let v = Tensor::new(vec![2, 1], v).unwrap();
        let left = a.matmul(&b).unwrap().matmul(&v).unwrap();
        let right = a.matmul(&b.matmul(&v).unwrap()).unwrap();
        prop_assert!(rel_error(left.data(), right.data()) < 1e-12);
    }
}
