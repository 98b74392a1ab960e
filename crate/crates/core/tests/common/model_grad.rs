use adamatte_core::losses::{total_loss, FrameTargets, LossWeights};
use adamatte_core::{Ablation, AdaMatte, Mode, ModelConfig, Session};
use adamatte_tensor::gradcheck::relative_error;
use adamatte_tensor::Tensor;
use rand::Rng;

use super::{frame, rng};

/// Total loss of a two-frame sequence after initialization, with batch
/// statistics in the encoder and decoder.
pub fn sequence_loss(
    model: &AdaMatte<f64>,
    frames: &[Tensor<f64>],
    alphas: &[Tensor<f64>],
) -> Tensor<f64> {
    let init = adamatte_core::losses::pseudo_mask(&alphas[0], 0.5).unwrap();
    let mut s = Session::init(model, &frames[0], &init, Ablation::default(), Mode::Train).unwrap();
    let mut total: Option<Tensor<f64>> = None;
    for (f, a) in frames.iter().zip(alphas) {
        let out = s.step_frame(f).unwrap();
        let l = total_loss(
            &out,
            &FrameTargets::new(a, 0.5).unwrap(),
            &LossWeights::default(),
        )
        .unwrap()
        .total;
        total = Some(match total {
            Some(t) => t.add(&l).unwrap(),
            None => l,
        });
    }
    total.unwrap()
}

/// Worst relative error between backpropagated and central-difference
/// gradients of the full default model, over 20 parameter entries spread
/// across the network, with the entry it occurred at.
pub fn full_model_gradient_error() -> (f64, String) {
    let mut model = AdaMatte::<f64>::new(ModelConfig::default(), 17).unwrap();
    let frames: Vec<Tensor<f64>> = (0..2).map(|i| frame(40 + i, 32, 32)).collect();
    let mut r = rng(2);
    let alphas: Vec<Tensor<f64>> = (0..2)
        .map(|_| {
            let (cy, cx) = (r.gen_range(10.0..22.0), r.gen_range(10.0..22.0));
            let data = (0..1024)
                .map(|i| {
                    let d = ((i / 32) as f64 - cy).hypot((i % 32) as f64 - cx) - 8.0;
                    (0.5 - d / 3.0).clamp(0.0, 1.0)
                })
                .collect();
            Tensor::from_vec(&[1, 32, 32], data).unwrap()
        })
        .collect();

    let loss = sequence_loss(&model, &frames, &alphas);
    loss.backward().unwrap();
    let n_params = model.store.params().len();
    // 20 parameter tensors spread over the whole network, one element each.
    let picks: Vec<(usize, usize)> = (0..20)
        .map(|k| {
            let p = k * (n_params - 1) / 19;
            (p, r.gen_range(0..model.store.params()[p].tensor.numel()))
        })
        .collect();
    let analytic: Vec<f64> = picks
        .iter()
        .map(|&(p, i)| model.store.params()[p].tensor.grad().map_or(0.0, |g| g[i]))
        .collect();
    model.store.zero_grad();

    // Larger steps cross ReLU kinks in the encoder.
    let h = 1e-6;
    let mut worst = (0.0, String::new());
    for (&(p, i), &a) in picks.iter().zip(&analytic) {
        let original = model.store.params()[p].tensor.to_vec();
        let mut at = |delta: f64| {
            let mut d = original.clone();
            d[i] += delta;
            model.store.set_param_data(p, d).unwrap();
            let v = adamatte_tensor::no_grad(|| sequence_loss(&model, &frames, &alphas))
                .item()
                .unwrap();
            model.store.set_param_data(p, original.clone()).unwrap();
            v
        };
        let numeric = (at(h) - at(-h)) / (2.0 * h);
        let rel = relative_error(a, numeric, 1e-3);
        if rel > worst.0 {
            worst = (
                rel,
                format!("{}[{i}]: {a} vs {numeric}", model.store.params()[p].name),
            );
        }
    }
    worst
}
