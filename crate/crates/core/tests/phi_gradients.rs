use lsvd_core::phi::{PhiDims, PhiModel, SHARED_LAYERS};
use lsvd_core::Rng;

fn contraction(model: &PhiModel, x: &[f64], a: &[f64], b: &[f64]) -> (f64, Vec<bool>) {
    let (s, d, cache) = model.forward(x).unwrap();
    let value = s.iter().zip(a).map(|(p, q)| p * q).sum::<f64>() + d.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let pattern = (0..SHARED_LAYERS).flat_map(|l| cache.hidden(l).iter().map(|v| *v > 0.0)).collect();
    (value, pattern)
}

#[test]
fn backward_matches_central_differences() {
    let dims = PhiDims { input: 6, hidden: 5, output: 3 };
    let model = PhiModel::init(dims, 17).unwrap();
    let mut rng = Rng::new(4);
    let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
    let a: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let b: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let (_, _, cache) = model.forward(&x).unwrap();
    let grads = model.backward(&cache, &a, &b).unwrap();

    let h = 1e-4f32;
    let mut checked = 0;
    for idx in 0..model.param_count() {
        let p = model.param(idx);
        let (mut plus, mut minus) = (model.clone(), model.clone());
        plus.set_param(idx, p + h);
        minus.set_param(idx, p - h);
        let (fp, pat_p) = contraction(&plus, &x, &a, &b);
        let (fm, pat_m) = contraction(&minus, &x, &a, &b);
        if pat_p != pat_m {
            continue;
        }
        let step = (plus.param(idx) - minus.param(idx)) as f64;
        let fd = (fp - fm) / step;
        let g = grads.get(idx);
        let scale = g.abs().max(fd.abs());
        assert!(scale < 1e-12 || (g - fd).abs() / scale <= 1e-3, "param {idx}: {g} vs {fd}");
        checked += 1;
    }
    assert!(checked as f64 >= 0.9 * model.param_count() as f64);
}

#[test]
fn forward_is_pure() {
    let model = PhiModel::init(PhiDims { input: 16, hidden: 8, output: 4 }, 3).unwrap();
    let x: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
    let (s1, d1, _) = model.forward(&x).unwrap();
    let (s2, d2, _) = model.forward(&x).unwrap();
    assert_eq!((s1, d1), (s2, d2));
}

#[test]
fn he_init_statistics_at_full_width() {
    let model = PhiModel::init(PhiDims::for_channel(64, 64), 0).unwrap();
    let w = &model.layers()[1].weight;
    let n = w.len() as f64;
    let mean = w.iter().map(|v| *v as f64).sum::<f64>() / n;
    let std = (w.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let target = (2.0f64 / 4096.0).sqrt();
    assert!((std - target).abs() <= 0.1 * target, "{std} vs {target}");
    assert!(model.layers().iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
}
