//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion does.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use adamatte_core::fgbg::{
    embed_fgbg, long_term_attention, project_qkv, short_term_attention, QkvWeights,
};
use adamatte_core::io::{decode_pnm, encode_pnm, read_f32, write_f32};
use adamatte_core::losses::*;
use adamatte_core::metrics::*;
use adamatte_core::pipeline::checkpoint;
use adamatte_core::pipeline::eval::{evaluate, heldout_sequences, mean_mad};
use adamatte_core::pipeline::train::{
    smoothed_endpoints, train_stage, BatchKind, TraceRecord, TrainConfig,
};
use adamatte_core::synth::{generate_sequence, Corruption, SceneMode, SceneSpec};
use adamatte_core::{
    run_sequence, Ablation, AdaMatte, AttentionMode, DecoderOutputs, InitialMask, MemoryConfig,
    Mode, Session, UpdateMode,
};
use adamatte_tensor::gradcheck::check_gradients;
use adamatte_tensor::{AttentionMask, Conv2dParams, Tensor};
use common::oracles::{conn_oracle, grad_oracle, reference_pyramid};
use common::*;
use rand::Rng;
use serde::Deserialize;

const OP_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-2;
const ORACLE_TOL: f64 = 1e-5;
/// Relative drift allowed between a retrained run and the pinned values.
const PIN_TOL: f64 = 0.02;

#[derive(Deserialize)]
struct Pinned {
    training: PinnedTraining,
    ablation: PinnedAblation,
    robustness: PinnedRobustness,
}

#[derive(Deserialize)]
struct PinnedTraining {
    seconds: f64,
    random_init_mad: f64,
    trained_mad: f64,
    stage2_smoothed: (f64, f64),
}

#[derive(Deserialize)]
struct PinnedAblation {
    full: f64,
    update_none: f64,
    update_alpha: f64,
    short_only: f64,
    long_only: f64,
}

#[derive(Deserialize)]
struct PinnedRobustness {
    oracle: f64,
    dilate2: f64,
}

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets")
}

fn pinned() -> Pinned {
    serde_json::from_slice(&std::fs::read(assets().join("pinned.json")).unwrap()).unwrap()
}

fn toy_model() -> AdaMatte {
    checkpoint::load(&assets().join("toy.ckpt")).unwrap()
}

fn near_pin(name: &str, got: f64, pin: f64) {
    assert!(
        (got - pin).abs() <= PIN_TOL * pin.abs(),
        "{name} {got:.4} drifted from pinned {pin:.4}"
    );
}

/// Weighted sum so that every output element gets a distinct upstream gradient.
fn project(t: &Tensor<f64>) -> adamatte_tensor::Result<Tensor<f64>> {
    let w: Vec<f64> = (0..t.numel())
        .map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4)
        .collect();
    t.mul(&Tensor::from_vec(t.shape(), w)?)?.sum()
}

fn lift<T>(r: adamatte_core::Result<T>) -> adamatte_tensor::Result<T> {
    r.map_err(|e| match e {
        adamatte_core::Error::Tensor(t) => t,
        other => panic!("{other}"),
    })
}

type OpFn = Box<dyn Fn(&[Tensor<f64>]) -> adamatte_tensor::Result<Tensor<f64>>>;

fn gradient_suite() -> String {
    let start = Instant::now();
    let mut r = rng(1);
    let mut x = |shape: &[usize]| random(&mut r, shape, 1.0);
    let (a, b, c3) = (x(&[2, 3]), x(&[2, 3]), x(&[3]));
    let img = x(&[2, 4, 4]);
    let conv = [x(&[2, 5, 5]), x(&[3, 2, 3, 3]), x(&[3])];
    let attn = [x(&[4, 8]), x(&[6, 8]), x(&[6, 8])];
    let norm = [x(&[2, 3, 3]), x(&[2]), x(&[2])];
    let ln = [x(&[3, 5]), x(&[5]), x(&[5])];
    let qkv: Vec<Tensor<f64>> = [&[4, 3][..], &[3, 3], &[3], &[3, 3], &[3], &[3, 3], &[3]]
        .iter()
        .map(|s| x(s))
        .collect();
    let embed = [
        x(&[4, 3]),
        uniform01(&mut rng(2), &[1, 2, 2]),
        x(&[3]),
        x(&[3]),
    ];
    let mask = AttentionMask::from_fn(4, 6, |i, j| (i + j) % 3 != 0);

    let mut cases: Vec<(&str, Vec<Tensor<f64>>, f64, OpFn)> = vec![
        (
            "matmul",
            vec![x(&[3, 4]), x(&[4, 2])],
            1e-3,
            Box::new(|t| t[0].matmul(&t[1])?.sum()),
        ),
        (
            "softmax",
            vec![x(&[2, 3, 4])],
            1e-5,
            Box::new(|t| project(&t[0].softmax(1)?)),
        ),
        (
            "layer_norm",
            ln.to_vec(),
            1e-5,
            Box::new(|t| project(&t[0].layer_norm(&t[1], &t[2], 1e-5)?)),
        ),
        (
            "batch_norm_train",
            norm.to_vec(),
            1e-5,
            Box::new(|t| project(&t[0].batch_norm_train(&t[1], &t[2], 1e-5)?.0)),
        ),
        (
            "batch_norm_eval",
            norm.to_vec(),
            1e-5,
            Box::new(|t| {
                project(&t[0].batch_norm_eval(&t[1], &t[2], &[0.1, -0.2], &[0.5, 2.0], 1e-5)?)
            }),
        ),
        (
            "add",
            vec![a.clone(), b.clone()],
            1e-5,
            Box::new(|t| project(&t[0].add(&t[1])?)),
        ),
        (
            "sub",
            vec![a.clone(), b.clone()],
            1e-5,
            Box::new(|t| project(&t[0].sub(&t[1])?)),
        ),
        (
            "mul",
            vec![a.clone(), b.clone()],
            1e-5,
            Box::new(|t| project(&t[0].mul(&t[1])?)),
        ),
        (
            "add_row",
            vec![a.clone(), c3],
            1e-5,
            Box::new(|t| project(&t[0].add_row(&t[1])?)),
        ),
        (
            "relu",
            vec![a.clone()],
            1e-5,
            Box::new(|t| project(&t[0].relu()?)),
        ),
        (
            "gelu",
            vec![a.clone()],
            1e-5,
            Box::new(|t| project(&t[0].gelu()?)),
        ),
        (
            "sigmoid",
            vec![a.clone()],
            1e-5,
            Box::new(|t| project(&t[0].sigmoid()?)),
        ),
        (
            "exp",
            vec![a.clone()],
            1e-5,
            Box::new(|t| project(&t[0].exp()?)),
        ),
        (
            "ln",
            vec![a.clone()],
            1e-5,
            Box::new(|t| project(&t[0].square()?.add_scalar(0.5)?.ln()?)),
        ),
        (
            "abs",
            vec![a.clone()],
            1e-5,
            Box::new(|t| project(&t[0].abs()?)),
        ),
        (
            "clamp",
            vec![a.clone()],
            1e-5,
            Box::new(|t| project(&t[0].clamp(-0.5, 0.5)?)),
        ),
        (
            "scale",
            vec![a.clone()],
            1e-5,
            Box::new(|t| project(&t[0].scale(-2.5)?)),
        ),
        (
            "one_minus",
            vec![a.clone()],
            1e-5,
            Box::new(|t| project(&t[0].one_minus()?)),
        ),
        (
            "mean",
            vec![a.clone()],
            1e-5,
            Box::new(|t| t[0].square()?.mean()),
        ),
        (
            "transpose",
            vec![a],
            1e-5,
            Box::new(|t| project(&t[0].transpose()?)),
        ),
        (
            "concat",
            vec![img.clone(), x(&[3, 4, 4])],
            1e-5,
            Box::new(|t| project(&Tensor::concat(&[&t[0], &t[1]], 0)?)),
        ),
        (
            "narrow",
            vec![img.clone()],
            1e-5,
            Box::new(|t| project(&t[0].narrow(2, 1, 2)?)),
        ),
        (
            "reshape",
            vec![img.clone()],
            1e-5,
            Box::new(|t| project(&t[0].reshape(&[8, 4])?)),
        ),
        (
            "pad_replicate",
            vec![img.clone()],
            1e-5,
            Box::new(|t| project(&t[0].pad_replicate(2)?)),
        ),
        (
            "avg_pool",
            vec![img.clone()],
            1e-5,
            Box::new(|t| project(&t[0].avg_pool(2)?)),
        ),
        (
            "bilinear up",
            vec![img.clone()],
            1e-5,
            Box::new(|t| project(&t[0].bilinear_resize(8, 7)?)),
        ),
        (
            "bilinear down",
            vec![img],
            1e-5,
            Box::new(|t| project(&t[0].bilinear_resize(3, 2)?)),
        ),
        (
            "attention",
            attn.to_vec(),
            1e-5,
            Box::new(|t| project(&Tensor::attention(&t[0], &t[1], &t[2], 2, None)?)),
        ),
        (
            "attention masked",
            attn.to_vec(),
            1e-5,
            Box::new(move |t| project(&Tensor::attention(&t[0], &t[1], &t[2], 2, Some(&mask))?)),
        ),
        (
            "embed_fgbg",
            embed.to_vec(),
            1e-5,
            Box::new(|t| project(&lift(embed_fgbg(&t[0], &t[1], &t[2], &t[3]))?)),
        ),
        (
            "project_qkv",
            qkv,
            1e-5,
            Box::new(|t| {
                let w = QkvWeights {
                    wq: &t[1],
                    bq: &t[2],
                    wk: &t[3],
                    bk: &t[4],
                    wv: &t[5],
                    bv: &t[6],
                };
                let o = lift(project_qkv(&t[0], &w))?;
                project(&o.q.add(&o.k)?.mul(&o.v)?)
            }),
        ),
    ];
    for params in [
        Conv2dParams::new(1, 1, 1),
        Conv2dParams::new(2, 1, 1),
        Conv2dParams::new(1, 2, 2),
    ] {
        cases.push((
            "conv2d",
            conv.to_vec(),
            1e-3,
            Box::new(move |t| project(&t[0].conv2d(&t[1], Some(&t[2]), params)?)),
        ));
    }
    let mut worst_op = (0.0, "");
    for (name, inputs, h, f) in &cases {
        let report = check_gradients(f, inputs, *h).unwrap();
        assert!(report.passes(OP_TOL), "{name}: {report:?}");
        if report.max_rel_err > worst_op.0 {
            worst_op = (report.max_rel_err, name);
        }
    }
    let (worst_model, at) = common::model_grad::full_model_gradient_error();
    assert!(
        worst_model < MODEL_TOL,
        "full model {worst_model:.2e} at {at}"
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "took {secs:.1}s");
    format!(
        "{} op checks, worst {:.1e} ({}); full model worst {:.1e} over 20 entries; {secs:.1}s",
        cases.len(),
        worst_op.0,
        worst_op.1,
        worst_model
    )
}

fn tube(i: usize, frames: usize, omega: usize) -> Vec<usize> {
    (0..frames)
        .flat_map(|f| {
            window_positions(i, 4, 4, omega)
                .into_iter()
                .map(move |p| f * 16 + p)
        })
        .collect()
}

fn attention_oracles() -> String {
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let mut r = rng(1000 + trial);
        let heads = [1, 2][r.gen_range(0..2)];
        let c = 2 * heads * r.gen_range(1..=3);
        let omega = [1, 3, 5][r.gen_range(0..3)];
        let cfg = MemoryConfig {
            long_capacity: 3,
            long_stride: 1,
            short_capacity: 3,
            window: omega,
            ..MemoryConfig::default()
        };
        let bank = random_bank(&mut r, cfg, 3, (4, 4), c);
        let q = random(&mut r, &[16, c], 2.0);
        let (k, v) = stacked(&bank.long().iter().collect::<Vec<_>>());
        let long = long_term_attention(&q, &bank, 0, heads).unwrap();
        let dense = brute_attention(&q, &k, &v, heads, |_| (0..48).collect());
        let (ks, vs) = stacked(&bank.short().iter().collect::<Vec<_>>());
        let short = short_term_attention(&q, &bank, 0, heads, omega, 3).unwrap();
        let masked = brute_attention(&q, &ks, &vs, heads, |i| tube(i, 3, omega));
        let full = short_term_attention(&q, &bank, 0, heads, 7, 3).unwrap();
        let e = [
            max_abs_diff(long.data(), &dense),
            max_abs_diff(short.data(), &masked),
            max_abs_diff(full.data(), long.data()),
        ];
        for (name, err) in ["long vs dense", "short vs masked", "full window vs long"]
            .iter()
            .zip(e)
        {
            assert!(err < ORACLE_TOL, "trial {trial} {name}: {err:.2e}");
            worst = worst.max(err);
        }
    }
    format!("100 trials (4×4 grid, 3 frames), worst deviation {worst:.1e}")
}

fn memory_semantics() -> String {
    let model = AdaMatte::<f32>::new(small_config(), 3).unwrap();
    let mem = &model.config().memory;
    assert_eq!(
        (mem.long_stride, mem.long_capacity, mem.short_capacity),
        (10, 10, 1)
    );
    let f = frame(1, 16, 16);
    let init = Tensor::from_vec(
        &[1, 16, 16],
        (0..256)
            .map(|i| if (i / 16 + i % 16) < 16 { 1.0 } else { 0.0 })
            .collect(),
    )
    .unwrap();
    let mut s = Session::init(&model, &f, &init, Ablation::default(), Mode::Eval).unwrap();
    let mut peak = 0;
    adamatte_tensor::no_grad(|| {
        for t in 0..200 {
            s.step_frame(&f).unwrap();
            let (l, sh) = (s.bank().long().len(), s.bank().short().len());
            assert!(l <= 10 && sh <= 1, "frame {t}: {l} long, {sh} short");
            peak = peak.max(l);
        }
    });
    let long = s.bank().long_frames();
    assert_eq!(long, (10..20).map(|k| 10 * k).collect::<Vec<_>>());
    format!(
        "after 200 frames long = {:?}..={:?} step 10, peak occupancy {peak}",
        long[0], long[9]
    )
}

fn affinity() -> String {
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let mut r = rng(2000 + case);
        let lambda: f64 = r.gen_range(0.0..=1.0);
        let v = random(&mut r, &[6, 4], 2.0);
        let (e_f, e_b) = (random(&mut r, &[4], 1.0), random(&mut r, &[4], 1.0));
        let (m1, m2) = (uniform01(&mut r, &[6]), uniform01(&mut r, &[6]));
        let blend: Vec<f64> = m1
            .data()
            .iter()
            .zip(m2.data())
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        let lhs = embed_fgbg(&v, &Tensor::from_vec(&[6], blend).unwrap(), &e_f, &e_b).unwrap();
        let (y1, y2) = (
            embed_fgbg(&v, &m1, &e_f, &e_b).unwrap(),
            embed_fgbg(&v, &m2, &e_f, &e_b).unwrap(),
        );
        let rhs: Vec<f64> = y1
            .data()
            .iter()
            .zip(y2.data())
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        let err = max_abs_diff(lhs.data(), &rhs);
        assert!(err < 1e-6, "case {case}: {err:.2e}");
        worst = worst.max(err);

        let plus = |e: &Tensor<f64>| -> Vec<f64> {
            v.data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + e.data()[i % 4])
                .collect()
        };
        let fg = embed_fgbg(&v, &Tensor::ones(&[6]), &e_f, &e_b).unwrap();
        let bg = embed_fgbg(&v, &Tensor::zeros(&[6]), &e_f, &e_b).unwrap();
        assert_eq!(fg.to_vec(), plus(&e_f), "case {case}: m = 1");
        assert_eq!(bg.to_vec(), plus(&e_b), "case {case}: m = 0");
    }
    format!("100 λ-blend cases, worst deviation {worst:.1e}; endpoints exact")
}

fn loss_suite() -> String {
    let mut r = rng(31);
    // BCE against a scalar loop.
    let p: Vec<f64> = (0..64).map(|_| r.gen_range(0.01..0.99)).collect();
    let m: Vec<f64> = (0..64).map(|_| f64::from(r.gen_bool(0.4) as u8)).collect();
    let mut logits = vec![0.0; 64];
    logits.extend(p.iter().map(|&q| (q / (1.0 - q)).ln()));
    let bce = mask_bce(
        &Tensor::from_vec(&[2, 8, 8], logits).unwrap(),
        &Tensor::from_vec(&[1, 8, 8], m.clone()).unwrap(),
    )
    .unwrap()
    .item()
    .unwrap();
    let bce_ref = p
        .iter()
        .zip(&m)
        .map(|(p, m)| -(m * p.ln() + (1.0 - m) * (1.0 - p).ln()))
        .sum::<f64>()
        / 64.0;
    let e_bce = (bce - bce_ref).abs();
    // L1 against a scalar loop.
    let (a, b) = (
        uniform01(&mut r, &[1, 32, 32]),
        uniform01(&mut r, &[1, 32, 32]),
    );
    let l1 = alpha_l1(&a, &b).unwrap().item().unwrap();
    let l1_ref = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / 1024.0;
    let e_l1 = (l1 - l1_ref).abs();
    // Laplacian pyramid loss against the scalar reference pyramid.
    let lap = laplacian_pyramid_loss(&a, &b).unwrap().item().unwrap();
    let (ra, rb) = (
        reference_pyramid(a.data(), 32, 5),
        reference_pyramid(b.data(), 32, 5),
    );
    let lap_ref: f64 = (0..5)
        .map(|s| {
            let l1 = ra[s]
                .iter()
                .zip(&rb[s])
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / ra[s].len() as f64;
            [0.2, 0.4, 0.8, 1.6, 3.2][s] * l1
        })
        .sum();
    let e_lap = (lap - lap_ref).abs();
    for (name, e) in [("bce", e_bce), ("l1", e_l1), ("laplacian", e_lap)] {
        assert!(e < 1e-6, "{name}: {e:.2e}");
    }

    // Linearity of the total in the weights, starting from the defaults.
    let out = DecoderOutputs {
        mask_logits: random(&mut r, &[2, 8, 8], 3.0),
        alpha_coarse: uniform01(&mut r, &[1, 8, 8]),
        alpha_fine: uniform01(&mut r, &[1, 32, 32]),
    };
    let targets = FrameTargets::new(&b, 0.5).unwrap();
    let w = LossWeights::default();
    assert_eq!((w.mask, w.coarse, w.fine), (0.5, 0.5, 1.0));
    let base = total_loss(&out, &targets, &w).unwrap();
    let (coarse, fine) = (
        base.coarse_l1 + base.coarse_lap,
        base.fine_l1 + base.fine_lap,
    );
    let mut e_lin: f64 = 0.0;
    for (wm, wc, wf) in [
        (0.5, 0.5, 1.0),
        (1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0),
        (0.0, 0.0, 1.0),
        (2.0, 3.0, 0.25),
    ] {
        let got = total_loss(
            &out,
            &targets,
            &LossWeights {
                mask: wm,
                coarse: wc,
                fine: wf,
            },
        )
        .unwrap();
        let want = wm * base.mask_bce + wc * coarse + wf * fine;
        e_lin = e_lin.max((got.total.item().unwrap() - want).abs());
    }
    assert!(e_lin < 1e-12, "linearity {e_lin:.2e}");
    format!("bce {e_bce:.1e}, l1 {e_l1:.1e}, laplacian {e_lap:.1e}; linearity exact to {e_lin:.1e}")
}

fn matte(h: usize, w: usize, data: Vec<f64>) -> Matte {
    Matte::new(h, w, data).unwrap()
}

fn metric_suite() -> String {
    let mut r = rng(41);
    let seq: Vec<Matte> = (0..3)
        .map(|_| matte(8, 8, (0..64).map(|_| r.gen_range(0.0..1.0)).collect()))
        .collect();
    let same = MetricReport::compute(&seq, &seq, true).unwrap();
    assert_eq!(
        (same.mad, same.mse, same.grad, same.dtssd),
        (0.0, 0.0, 0.0, Some(0.0))
    );
    assert_eq!(
        conn_error(
            &Matte::filled(4, 4, 1.0),
            &Matte::filled(4, 4, 1.0),
            CONN_STEP
        )
        .unwrap(),
        Some(0.0)
    );

    let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    let (gt, pred) = (
        vec![Matte::filled(4, 5, 0.3); 2],
        vec![Matte::filled(4, 5, 0.4); 2],
    );
    close(mad(&pred, &gt).unwrap(), 100.0);
    close(mse(&pred, &gt).unwrap(), 10.0);
    let mut one = Matte::filled(4, 5, 0.0);
    one.data[7] = 1.0;
    close(
        mad(&[one.clone()], &[Matte::filled(4, 5, 0.0)]).unwrap(),
        50.0,
    );
    close(mse(&[one], &[Matte::filled(4, 5, 0.0)]).unwrap(), 50.0);
    let flicker: Vec<Matte> = (0..6)
        .map(|t| Matte::filled(3, 3, if t % 2 == 0 { 0.6 } else { 0.4 }))
        .collect();
    close(
        dtssd(&flicker, &vec![Matte::filled(3, 3, 0.5); 6])
            .unwrap()
            .unwrap(),
        20.0,
    );

    let mut conn_cases = 0;
    let mut check_conn = |pred: &Matte, gt: &Matte| {
        let (got, want) = (
            conn_error(pred, gt, CONN_STEP).unwrap(),
            conn_oracle(pred, gt),
        );
        match (got, want) {
            (Some(a), Some(b)) => {
                assert!((a - b).abs() < 1e-9, "conn {a} vs {b} for {:?}", pred.data)
            }
            (a, b) => assert_eq!(a, b, "conn for {:?}", pred.data),
        }
        conn_cases += 1;
    };
    let gts = [
        matte(4, 4, vec![1.0; 16]),
        matte(
            4,
            4,
            (0..16).map(|i| if i % 4 < 2 { 1.0 } else { 0.0 }).collect(),
        ),
        matte(
            4,
            4,
            vec![
                1.0, 1.0, 0.5, 0.0, 1.0, 0.5, 0.0, 0.5, 0.5, 0.0, 1.0, 1.0, 0.0, 0.5, 1.0, 1.0,
            ],
        ),
    ];
    for gt in &gts {
        for bits in 0u32..1 << 16 {
            check_conn(
                &matte(4, 4, (0..16).map(|i| f64::from((bits >> i) & 1)).collect()),
                gt,
            );
        }
    }
    let ternary = matte(3, 3, vec![1.0, 1.0, 0.5, 1.0, 0.5, 0.0, 0.5, 0.0, 1.0]);
    for code in 0..3usize.pow(9) {
        check_conn(
            &matte(
                3,
                3,
                (0..9)
                    .map(|i| ((code / 3usize.pow(i)) % 3) as f64 / 2.0)
                    .collect(),
            ),
            &ternary,
        );
    }

    let mut worst_grad: f64 = 0.0;
    let edge = |at: usize| {
        matte(
            16,
            16,
            (0..256)
                .map(|i| if i % 16 >= at { 1.0 } else { 0.0 })
                .collect(),
        )
    };
    let mut pairs = vec![(edge(7), edge(9))];
    for _ in 0..3 {
        let mut noise = || matte(12, 9, (0..108).map(|_| r.gen_range(0.0..1.0)).collect());
        pairs.push((noise(), noise()));
    }
    for (p, g) in &pairs {
        let e = (grad_error(&[p.clone()], &[g.clone()]).unwrap() - grad_oracle(p, g, 1.4)).abs();
        assert!(e < 1e-6, "grad {e:.2e}");
        worst_grad = worst_grad.max(e);
    }
    format!("analytic cases exact; Conn = flood-fill oracle on {conn_cases} enumerated pairs; Grad worst {worst_grad:.1e}")
}

/// Full default schedule from scratch; returns the trained model.
fn training_smoke(pin: &PinnedTraining) -> String {
    let cfg = TrainConfig::default();
    let held = heldout_sequences(&cfg).unwrap();
    let mut model = AdaMatte::new(cfg.model.clone(), cfg.seed).unwrap();
    let random_mad = mean_mad(
        &evaluate(
            &model,
            &held,
            &InitialMask::Oracle,
            Ablation::default(),
            false,
            false,
        )
        .unwrap(),
    );
    let start = Instant::now();
    let mut stage2: Vec<TraceRecord> = Vec::new();
    for stage in 1..=3 {
        let trace = train_stage(&mut model, &cfg, stage, |_| {}).unwrap();
        if stage == 2 {
            stage2 = trace;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let (first, last) = smoothed_endpoints(&stage2, BatchKind::Matting, 50).unwrap();
    let trained_mad = mean_mad(
        &evaluate(
            &model,
            &held,
            &InitialMask::Oracle,
            Ablation::default(),
            false,
            false,
        )
        .unwrap(),
    );
    let same_ckpt =
        checkpoint::to_bytes(&model).unwrap() == std::fs::read(assets().join("toy.ckpt")).unwrap();
    println!(
        "      training: {secs:.0}s (pinned {:.0}s); stage-2 loss {first:.3} -> {last:.3}; held-out MAD random {random_mad:.1} trained {trained_mad:.1}; checkpoint {} the pinned one",
        pin.seconds,
        if same_ckpt { "matches" } else { "differs from" }
    );
    assert!(secs < 1800.0, "took {secs:.0}s");
    assert!(
        last < 0.5 * first,
        "stage-2 smoothed loss {first:.3} -> {last:.3}"
    );
    assert!(
        random_mad >= 5.0 * trained_mad,
        "random {random_mad:.1} vs trained {trained_mad:.1}"
    );
    near_pin("random-init MAD", random_mad, pin.random_init_mad);
    near_pin("trained MAD", trained_mad, pin.trained_mad);
    near_pin("stage-2 initial loss", first, pin.stage2_smoothed.0);
    near_pin("stage-2 final loss", last, pin.stage2_smoothed.1);
    format!(
        "{secs:.0}s < 1800s; stage-2 loss ratio {:.3} < 0.5; held-out MAD {trained_mad:.1} vs random {random_mad:.1} ({:.1}×)",
        last / first,
        random_mad / trained_mad
    )
}

fn heldout_mad(model: &AdaMatte, init: &InitialMask, ablation: Ablation) -> f64 {
    let held = heldout_sequences(&TrainConfig::default()).unwrap();
    mean_mad(&evaluate(model, &held, init, ablation, false, false).unwrap())
}

fn ablation_directions(pin: &PinnedAblation) -> String {
    let model = toy_model();
    let d = Ablation::default();
    let run = |attention, update| {
        heldout_mad(&model, &InitialMask::Oracle, Ablation { attention, update })
    };
    let full = run(d.attention, d.update);
    let none = run(AttentionMode::Both, UpdateMode::None);
    let alpha = run(AttentionMode::Both, UpdateMode::Alpha);
    let short = run(AttentionMode::ShortOnly, UpdateMode::Mask);
    let long = run(AttentionMode::LongOnly, UpdateMode::Mask);
    println!(
        "      held-out MAD: full {full:.2} (pinned {:.2}), update none {none:.2} ({:.2}), update alpha {alpha:.2} ({:.2}), short only {short:.2} ({:.2}), long only {long:.2} ({:.2})",
        pin.full, pin.update_none, pin.update_alpha, pin.short_only, pin.long_only
    );
    let mut wrong = Vec::new();
    for (name, v) in [
        ("update=none", none),
        ("update=alpha", alpha),
        ("short-only", short),
        ("long-only", long),
    ] {
        if full >= v {
            wrong.push(format!("{name} {v:.2} ≤ full {full:.2}"));
        }
    }
    assert!(wrong.is_empty(), "{}", wrong.join("; "));
    format!(
        "margins: none +{:.2}, alpha +{:.2}, short-only +{:.2}, long-only +{:.2}",
        none - full,
        alpha - full,
        short - full,
        long - full
    )
}

fn determinism() -> String {
    let spec = SceneSpec::random(99, 6, (32, 32), SceneMode::DynamicBg, (0.5, 2.0));
    let (s1, s2) = (
        generate_sequence(&spec).unwrap(),
        generate_sequence(&spec).unwrap(),
    );
    assert!(s1.identical(&s2), "synth");

    let model = toy_model();
    let mask = pseudo_mask(&s1.alpha[0], 0.5).unwrap();
    let frames: Vec<Tensor> = s1.frames.clone();
    let a = run_sequence(&model, &frames, &mask, Ablation::default()).unwrap();
    let b = run_sequence(&model, &frames, &mask, Ablation::default()).unwrap();
    for (x, y) in a.alphas.iter().zip(&b.alphas) {
        assert!(
            x.data()
                .iter()
                .zip(y.data())
                .all(|(p, q)| p.to_bits() == q.to_bits()),
            "inference"
        );
    }

    let mut cfg = TrainConfig {
        sequences: 2,
        frames: 8,
        size: (32, 32),
        model: small_config(),
        ..TrainConfig::default()
    };
    for (stage, steps) in [
        (&mut cfg.stage1, 3),
        (&mut cfg.stage2, 4),
        (&mut cfg.stage3, 2),
    ] {
        stage.steps = steps;
        stage.warmup_steps = 1;
    }
    let train = || {
        let mut m = AdaMatte::new(cfg.model.clone(), cfg.seed).unwrap();
        let mut trace = Vec::new();
        for stage in 1..=3 {
            trace.extend(train_stage(&mut m, &cfg, stage, |_| {}).unwrap());
        }
        (
            serde_json::to_string(&trace).unwrap(),
            checkpoint::to_bytes(&m).unwrap(),
        )
    };
    let (t1, c1) = train();
    let (t2, c2) = train();
    assert!(t1 == t2 && c1 == c2, "training trace or checkpoint");

    let bytes = std::fs::read(assets().join("toy.ckpt")).unwrap();
    let mut back = AdaMatte::new(model.config().clone(), 0).unwrap();
    checkpoint::load_into_bytes(&mut back, &bytes).unwrap();
    assert_eq!(
        checkpoint::to_bytes(&back).unwrap(),
        bytes,
        "checkpoint round trip"
    );

    let dir = tempfile::tempdir().unwrap();
    for (i, img) in [&s1.frames[0], &s1.alpha[3]].into_iter().enumerate() {
        let encoded = encode_pnm(img).unwrap();
        let decoded = decode_pnm(&encoded, &dir.path().join("x")).unwrap();
        assert_eq!(encode_pnm(&decoded).unwrap(), encoded, "pnm {i}");
        assert_eq!(
            decode_pnm(&encode_pnm(&decoded).unwrap(), &dir.path().join("x"))
                .unwrap()
                .data(),
            decoded.data()
        );
    }
    let raw = dir.path().join("a.f32");
    write_f32(&raw, &s1.alpha[2]).unwrap();
    assert_eq!(
        read_f32(&raw).unwrap().data(),
        s1.alpha[2].data(),
        "f32 matte"
    );
    format!(
        "synth, inference ({} frames), training trace ({} bytes) and checkpoint bitwise repeatable; codecs round-trip",
        a.alphas.len(),
        t1.len()
    )
}

fn robustness(pin: &PinnedRobustness) -> String {
    let model = toy_model();
    let d = Ablation::default();
    let oracle = heldout_mad(&model, &InitialMask::Oracle, d);
    let corrupted = |kind, magnitude| InitialMask::Corrupted {
        kind,
        magnitude,
        seed: 5,
    };
    let dilated = heldout_mad(&model, &corrupted(Corruption::Dilate, 2), d);
    for (kind, magnitude) in [(Corruption::Erode, 2), (Corruption::FlipRegion, 8)] {
        assert!(heldout_mad(&model, &corrupted(kind, magnitude), d).is_finite());
    }
    let ratio = dilated / oracle;
    println!(
        "      held-out MAD oracle {oracle:.2} (pinned {:.2}), dilate r=2 {dilated:.2} (pinned {:.2})",
        pin.oracle, pin.dilate2
    );
    assert!(ratio < 3.0, "degradation {ratio:.2}×");
    format!("dilate r=2 degrades MAD {ratio:.3}× < 3×; erode and flip-region inits run")
}

#[test]
fn acceptance() {
    let pin = pinned();
    let criteria: Vec<(&str, Box<dyn Fn() -> String + '_>)> = vec![
        ("gradient suite", Box::new(gradient_suite)),
        ("attention oracles", Box::new(attention_oracles)),
        ("memory semantics", Box::new(memory_semantics)),
        ("Fg/Bg affinity", Box::new(affinity)),
        ("loss suite", Box::new(loss_suite)),
        ("metric suite", Box::new(metric_suite)),
        ("training smoke", Box::new(|| training_smoke(&pin.training))),
        (
            "ablation directions",
            Box::new(|| ablation_directions(&pin.ablation)),
        ),
        ("determinism and round trips", Box::new(determinism)),
        (
            "initial-mask robustness",
            Box::new(|| robustness(&pin.robustness)),
        ),
    ];
    // The FAIL line carries the panic message; skip the default report.
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    println!();
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {:>2} {name}: {msg}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    std::panic::set_hook(hook);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
