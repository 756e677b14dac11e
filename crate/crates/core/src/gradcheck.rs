//! Central-difference verification of taped gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::contrast::{decloss, ContrastConfig, TempMode};
use crate::error::{Error, Result};
use crate::fourier::{enhance, EnhanceConfig, InverseMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::toy::model::{toy_forward, ToyModelParams};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Max over coordinates of `|a - c| / (|a| + |c| + 1e-12)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn evaluate<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let out = f(tape.constant(x.clone()))?.item()?;
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::NonFinite(format!("objective returned {out}")))
    }
}

/// Compares the taped gradient of `f` at `x` against central differences
/// with step `h`, one coordinate at a time.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Contract(format!("step must be positive, got {h}")));
    }
    let tape = Tape::new();
    let leaf = tape.var(x.clone());
    let root = f(leaf)?;
    let v = root.item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective returned {v}")));
    }
    tape.backward(root)?;
    let analytic = leaf
        .grad()
        .map(Tensor::into_data)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut numeric = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let down = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * h));
    }

    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, c)| (a - c).abs() / (a.abs() + c.abs() + 1e-12))
        .enumerate()
        .fold(
            (0, 0.0),
            |best, (i, e)| if e > best.1 { (i, e) } else { best },
        );

    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

/// Outcome of one case of [`standard_suite`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Step and tolerance used by [`standard_suite`].
pub const SUITE_STEP: f64 = 1e-4;
pub const SUITE_TOLERANCE: f64 = 1e-4;

/// Uniform values in `[lo, hi)` with a random sign, so kinks at zero stay
/// well outside the probe step.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(lo..hi);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Contracts a non-scalar output with fixed random weights.
fn project<'t>(y: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    Ok(y.mul(y.tape().constant(w.clone()))?.sum())
}

type Case = Box<dyn Fn(u64) -> Result<GradCheck>>;

fn elementwise(name: &'static str) -> Case {
    Box::new(move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = match name {
            "log" | "sqrt" => uniform(&mut rng, &[3, 4], 0.2, 2.0),
            _ => signed(&mut rng, &[3, 4], 0.05, 1.5),
        };
        let other = signed(&mut rng, &[3, 4], 0.5, 1.5);
        let w = uniform(&mut rng, &[3, 4], -1.0, 1.0);
        finite_diff_check(
            |v| {
                let o = v.tape().constant(other.clone());
                let y = match name {
                    "add" => v.add(o)?,
                    "sub" => o.sub(v)?,
                    "mul" => v.mul(v)?.mul(o)?,
                    "div" => o.div(v)?,
                    "exp" => v.exp(),
                    "log" => v.log()?,
                    "sqrt" => v.sqrt()?,
                    "abs" => v.abs(),
                    "relu" => v.relu(),
                    _ => v.clamp_min(0.0).offset(1.0),
                };
                project(y, &w)
            },
            &x,
            SUITE_STEP,
        )
    })
}

fn structural(name: &'static str) -> Case {
    Box::new(move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, &[2, 3, 4], -1.0, 1.0);
        let m = uniform(&mut rng, &[4, 5], -1.0, 1.0);
        let w_perm = uniform(&mut rng, &[4, 2, 3], -1.0, 1.0);
        let w_sum = uniform(&mut rng, &[2, 4], -1.0, 1.0);
        let w_mm = uniform(&mut rng, &[2, 3, 5], -1.0, 1.0);
        let w_bc = uniform(&mut rng, &[3, 2, 3, 4], -1.0, 1.0);
        finite_diff_check(
            |v| match name {
                "matmul" => {
                    let y = v.reshape(&[6, 4])?.matmul(v.tape().constant(m.clone()))?;
                    project(y.reshape(&[2, 3, 5])?, &w_mm)
                }
                "sum_axes" => project(v.mul(v)?.sum_axes(&[1])?, &w_sum),
                "permute" => project(v.permute(&[2, 0, 1])?, &w_perm),
                _ => project(v.broadcast_to(&[3, 2, 3, 4])?, &w_bc),
            },
            &x,
            SUITE_STEP,
        )
    })
}

fn enhance_case(inverse: InverseMode) -> Case {
    Box::new(move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, &[1, 2, 6, 4], 0.0, 1.0);
        let w = uniform(&mut rng, &[1, 2, 6, 4], -1.0, 1.0);
        let cfg = EnhanceConfig {
            alpha: 0.8,
            mu: Some(1.5),
            inverse,
        };
        finite_diff_check(|v| project(enhance(v, &cfg)?, &w), &x, SUITE_STEP)
    })
}

fn decloss_case(temp_mode: TempMode) -> Case {
    Box::new(move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sr = uniform(&mut rng, &[2, 3, 8, 8], 0.0, 1.0);
        let hr = uniform(&mut rng, &[2, 3, 8, 8], 0.0, 1.0);
        let ccfg = ContrastConfig {
            patch_size: 4,
            temp_mode,
            ..Default::default()
        };
        finite_diff_check(
            |v| {
                decloss(
                    v,
                    v.tape().constant(hr.clone()),
                    &EnhanceConfig::default(),
                    &ccfg,
                )
            },
            &sr,
            SUITE_STEP,
        )
    })
}

fn toy_case(part: usize) -> Case {
    Box::new(move |seed| {
        let params = ToyModelParams::init(2, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let lr = uniform(&mut rng, &[1, 3, 3, 3], 0.0, 1.0);
        let hr = uniform(&mut rng, &[1, 3, 6, 6], 0.0, 1.0);
        let w = uniform(&mut rng, &[1, 3, 6, 6], -1.0, 1.0);
        let x = params.tensors()[part].clone();
        finite_diff_check(
            |v| {
                let tape = v.tape();
                let mut vars = params.on_tape(tape, false);
                match part {
                    0 => vars.conv1_weight = v,
                    1 => vars.conv1_bias = v,
                    2 => vars.conv2_weight = v,
                    _ => vars.conv2_bias = v,
                }
                let sr = toy_forward(&vars, tape.constant(lr.clone()))?;
                let fit = sr.sub(tape.constant(hr.clone()))?;
                project(fit.mul(fit)?, &w)
            },
            &x,
            SUITE_STEP,
        )
    })
}

fn cases() -> Vec<(String, Case)> {
    let mut out: Vec<(String, Case)> = Vec::new();
    for name in [
        "add",
        "sub",
        "mul",
        "div",
        "exp",
        "log",
        "sqrt",
        "abs",
        "relu",
        "clamp_min",
    ] {
        out.push((name.to_string(), elementwise(name)));
    }
    for name in ["matmul", "sum_axes", "permute", "broadcast_to"] {
        out.push((name.to_string(), structural(name)));
    }
    out.push(("enhance/exact".into(), enhance_case(InverseMode::Exact)));
    out.push((
        "enhance/paper_literal".into(),
        enhance_case(InverseMode::PaperLiteral),
    ));
    out.push((
        "decloss/inside_exp".into(),
        decloss_case(TempMode::InsideExp),
    ));
    out.push((
        "decloss/paper_literal".into(),
        decloss_case(TempMode::PaperLiteral),
    ));
    for (i, name) in ToyModelParams::NAMES.iter().enumerate() {
        out.push((format!("toy/{name}"), toy_case(i)));
    }
    out
}

/// Runs every taped operation used by the loss and the toy model through
/// [`finite_diff_check`] once per seed.
pub fn standard_suite(seeds: &[u64]) -> Result<Vec<CaseReport>> {
    let mut reports = Vec::new();
    for (name, case) in cases() {
        for &seed in seeds {
            let r = case(seed)?;
            reports.push(CaseReport {
                name: name.clone(),
                seed,
                max_rel_error: r.max_rel_error,
                passed: r.passes(SUITE_TOLERANCE),
            });
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.5, 0.01]).unwrap();
        let r = finite_diff_check(|v| Ok(v.mul(v)?.sum()), &x, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-9, "{}", r.max_rel_error);
    }

    #[test]
    fn flipped_adjoint_is_detected() {
        let x = Tensor::new(vec![3], vec![0.2, 0.7, -0.4]).unwrap();
        let r =
            finite_diff_check(|v| Ok(v.map_with(f64::sin, |t| -t.cos()).sum()), &x, 1e-4).unwrap();
        assert!(r.max_rel_error > 1e-2);
        let r = finite_diff_check(|v| Ok(v.map_with(f64::sin, f64::cos).sum()), &x, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-7);
    }

    #[test]
    fn rejects_bad_step_and_nonfinite() {
        let x = Tensor::scalar(1.0);
        assert!(finite_diff_check(|v| Ok(v.sum()), &x, 0.0).is_err());
        let r = finite_diff_check(|v| Ok(v.scale(f64::INFINITY).sum()), &x, 1e-3);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn suite_passes_on_one_seed() {
        let reports = standard_suite(&[11]).unwrap();
        assert_eq!(reports.len(), 22);
        for r in &reports {
            assert!(
                r.passed,
                "{} seed {}: {:e}",
                r.name, r.seed, r.max_rel_error
            );
        }
    }
}
