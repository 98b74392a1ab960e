//! Finite-difference checks for every differentiable operation (64-bit).

use adamatte_tensor::gradcheck::{check_gradients, GradCheckReport};
use adamatte_tensor::{AttentionMask, Conv2dParams, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OP_TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum so that every output element gets a distinct upstream gradient.
fn project(t: &Tensor<f64>) -> Result<Tensor<f64>> {
    let w: Vec<f64> = (0..t.numel())
        .map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4)
        .collect();
    t.mul(&Tensor::from_vec(t.shape(), w)?)?.sum()
}

fn assert_pass(name: &str, report: GradCheckReport, tol: f64) {
    assert!(
        report.passes(tol),
        "{name}: max rel err {:.3e} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn matmul_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])];
    let r = check_gradients(|x| x[0].matmul(&x[1])?.sum(), &inputs, 1e-3).unwrap();
    assert_pass("matmul", r, OP_TOL);
}

#[test]
fn conv2d_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = [
        random(&mut rng, &[2, 5, 5]),
        random(&mut rng, &[3, 2, 3, 3]),
        random(&mut rng, &[3]),
    ];
    for params in [
        Conv2dParams::new(1, 1, 1),
        Conv2dParams::new(2, 1, 1),
        Conv2dParams::new(1, 2, 2),
        Conv2dParams::new(1, 0, 1),
    ] {
        let r = check_gradients(
            |x| project(&x[0].conv2d(&x[1], Some(&x[2]), params)?),
            &inputs,
            1e-3,
        )
        .unwrap();
        assert_pass("conv2d", r, OP_TOL);
    }
}

#[test]
fn softmax_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = check_gradients(
        |x| project(&x[0].softmax(0)?),
        &[random(&mut rng, &[4])],
        1e-5,
    )
    .unwrap();
    assert_pass("softmax 1-D", r, OP_TOL);
    let r = check_gradients(
        |x| project(&x[0].softmax(1)?),
        &[random(&mut rng, &[2, 3, 4])],
        1e-5,
    )
    .unwrap();
    assert_pass("softmax middle axis", r, OP_TOL);
}

#[test]
fn norms_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ln_inputs = [
        random(&mut rng, &[3, 5]),
        random(&mut rng, &[5]),
        random(&mut rng, &[5]),
    ];
    let r = check_gradients(
        |x| project(&x[0].layer_norm(&x[1], &x[2], 1e-5)?),
        &ln_inputs,
        1e-5,
    )
    .unwrap();
    assert_pass("layer_norm", r, OP_TOL);

    let bn_inputs = [
        random(&mut rng, &[2, 3, 3]),
        random(&mut rng, &[2]),
        random(&mut rng, &[2]),
    ];
    let r = check_gradients(
        |x| project(&x[0].batch_norm_train(&x[1], &x[2], 1e-5)?.0),
        &bn_inputs,
        1e-5,
    )
    .unwrap();
    assert_pass("batch_norm train", r, OP_TOL);
    let r = check_gradients(
        |x| project(&x[0].batch_norm_eval(&x[1], &x[2], &[0.1, -0.2], &[0.5, 2.0], 1e-5)?),
        &bn_inputs,
        1e-5,
    )
    .unwrap();
    assert_pass("batch_norm eval", r, OP_TOL);
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, &[2, 3]);
    let b = random(&mut rng, &[2, 3]);
    let row = random(&mut rng, &[3]);
    type Case = (&'static str, fn(&[Tensor<f64>]) -> Result<Tensor<f64>>);
    let binary: [Case; 4] = [
        ("add", |x| project(&x[0].add(&x[1])?)),
        ("sub", |x| project(&x[0].sub(&x[1])?)),
        ("mul", |x| project(&x[0].mul(&x[1])?)),
        ("add_row", |x| {
            project(&x[0].add_row(&x[1].narrow(0, 0, 1)?.reshape(&[3])?)?)
        }),
    ];
    for (name, f) in binary {
        let r = check_gradients(f, &[a.clone(), b.clone()], 1e-5).unwrap();
        assert_pass(name, r, OP_TOL);
    }
    let unary: [Case; 12] = [
        ("relu", |x| project(&x[0].relu()?)),
        ("gelu", |x| project(&x[0].gelu()?)),
        ("sigmoid", |x| project(&x[0].sigmoid()?)),
        ("exp", |x| project(&x[0].exp()?)),
        ("ln", |x| project(&x[0].square()?.add_scalar(0.5)?.ln()?)),
        ("abs", |x| project(&x[0].abs()?)),
        ("square", |x| project(&x[0].square()?)),
        ("clamp", |x| project(&x[0].clamp(-0.5, 0.5)?)),
        ("scale", |x| project(&x[0].scale(-2.5)?)),
        ("one_minus", |x| project(&x[0].one_minus()?)),
        ("mean", |x| x[0].square()?.mean()),
        ("transpose", |x| project(&x[0].transpose()?)),
    ];
    for (name, f) in unary {
        let r = check_gradients(f, &[a.clone()], 1e-5).unwrap();
        assert_pass(name, r, OP_TOL);
    }
    let r = check_gradients(|x| project(&x[0].add_row(&x[1])?), &[a, row], 1e-5).unwrap();
    assert_pass("add_row bias", r, OP_TOL);
}

#[test]
fn shape_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, &[2, 4, 4]);
    let y = random(&mut rng, &[3, 4, 4]);
    let r = check_gradients(
        |t| project(&Tensor::concat(&[&t[0], &t[1]], 0)?),
        &[x.clone(), y],
        1e-5,
    )
    .unwrap();
    assert_pass("concat", r, OP_TOL);
    type Case = (&'static str, fn(&[Tensor<f64>]) -> Result<Tensor<f64>>);
    let cases: [Case; 6] = [
        ("narrow", |t| project(&t[0].narrow(2, 1, 2)?)),
        ("reshape", |t| project(&t[0].reshape(&[8, 4])?)),
        ("pad_replicate", |t| project(&t[0].pad_replicate(2)?)),
        ("avg_pool", |t| project(&t[0].avg_pool(2)?)),
        ("bilinear up", |t| project(&t[0].bilinear_resize(8, 7)?)),
        ("bilinear down", |t| project(&t[0].bilinear_resize(3, 2)?)),
    ];
    for (name, f) in cases {
        let r = check_gradients(f, &[x.clone()], 1e-5).unwrap();
        assert_pass(name, r, OP_TOL);
    }
}

#[test]
fn attention_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = [
        random(&mut rng, &[4, 8]),
        random(&mut rng, &[6, 8]),
        random(&mut rng, &[6, 8]),
    ];
    let r = check_gradients(
        |x| project(&Tensor::attention(&x[0], &x[1], &x[2], 2, None)?),
        &inputs,
        1e-5,
    )
    .unwrap();
    assert_pass("attention dense", r, OP_TOL);
    let mask = AttentionMask::from_fn(4, 6, |i, j| (i + j) % 3 != 0);
    let r = check_gradients(
        |x| project(&Tensor::attention(&x[0], &x[1], &x[2], 2, Some(&mask))?),
        &inputs,
        1e-5,
    )
    .unwrap();
    assert_pass("attention masked", r, OP_TOL);
}

#[test]
fn composite_block_matches_finite_differences() {
    // conv -> batch norm -> relu -> bilinear -> sigmoid -> L1 against a target
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = [
        random(&mut rng, &[2, 4, 4]),
        random(&mut rng, &[3, 2, 3, 3]),
        random(&mut rng, &[3]),
        random(&mut rng, &[3]),
    ];
    let target = random(&mut rng, &[3, 8, 8]);
    let r = check_gradients(
        |x| {
            let h = x[0].conv2d(&x[1], None, Conv2dParams::same(3, 1))?;
            let (h, _) = h.batch_norm_train(&x[2], &x[3], 1e-5)?;
            let h = h.gelu()?.bilinear_resize(8, 8)?.sigmoid()?;
            h.sub(&target)?.abs()?.mean()
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert_pass("composite", r, 1e-3);
}
