use decloss::toy::{toy_forward, ToyModelParams};
use decloss::{
    decloss, finite_diff_check, standard_suite, ContrastConfig, EnhanceConfig, Tape, Tensor,
};
use decloss_testkit::SplitMix;

#[test]
fn decloss_gradient_over_five_seeds() {
    let ccfg = ContrastConfig {
        patch_size: 4,
        ..Default::default()
    };
    let ecfg = EnhanceConfig::default();
    for seed in 1..=5 {
        let mut rng = SplitMix(seed);
        let sr = Tensor::new(vec![2, 3, 8, 8], rng.fill(384)).unwrap();
        let hr = Tensor::new(vec![2, 3, 8, 8], rng.fill(384)).unwrap();
        let r = finite_diff_check(
            |v| decloss(v, v.tape().constant(hr.clone()), &ecfg, &ccfg),
            &sr,
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {:e}", r.max_rel_error);
        assert!(r.analytic.iter().any(|g| g.abs() > 1e-6));
    }
}

#[test]
fn hr_side_receives_no_gradient() {
    let tape = Tape::new();
    let mut rng = SplitMix(8);
    let sr = tape.var(Tensor::new(vec![1, 1, 8, 8], rng.fill(64)).unwrap());
    let hr = tape.var(Tensor::new(vec![1, 1, 8, 8], rng.fill(64)).unwrap());
    let ccfg = ContrastConfig {
        patch_size: 4,
        ..Default::default()
    };
    let l = decloss(sr, hr, &EnhanceConfig::default(), &ccfg).unwrap();
    tape.backward(l).unwrap();
    assert!(sr.grad().is_some());
    assert!(hr.grad().is_none_or(|g| g.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn toy_model_input_gradient() {
    let params = ToyModelParams::init(3, 4).unwrap();
    let mut rng = SplitMix(12);
    let lr = Tensor::new(vec![1, 3, 3, 4], rng.fill(36)).unwrap();
    let r = finite_diff_check(
        |v| {
            let vars = params.on_tape(v.tape(), false);
            let out = toy_forward(&vars, v)?;
            Ok(out.mul(out)?.sum())
        },
        &lr,
        1e-4,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{:e}", r.max_rel_error);
}

#[test]
fn full_suite_over_five_seeds() {
    let reports = standard_suite(&[1, 2, 3, 4, 5]).unwrap();
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed).collect();
    assert!(failed.is_empty(), "{failed:?}");
}
