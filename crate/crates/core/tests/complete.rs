use hyposde::complete::{
    asymptotic_precision, contrast, contrast_gradient, contrast_variant, estimate_complete, infeasible,
};
use hyposde::density::MeanVariant;
use hyposde::model::builtin_model;
use hyposde::optim::OptimConfig;
use hyposde::stochastics::{project_observed, simulate_subsampled, NoiseStream, ObservationSet, Scheme};
use hyposde::Error;

fn complete_path(model: &str, n: usize, seed: u64) -> ObservationSet<f64> {
    complete_path_with(model, n, seed, 10)
}

fn complete_path_with(model: &str, n: usize, seed: u64, stride: usize) -> ObservationSet<f64> {
    let p = builtin_model::<f64>(model).unwrap();
    let d = p.model.dims().n;
    let mut ns = NoiseStream::new(seed, 0, d - 2);
    let path = simulate_subsampled(p.model.as_ref(), &p.theta_true, &p.x0, 1e-4, stride, n, 0, Scheme::Lg2, &mut ns, 1)
        .unwrap();
    project_observed(&path, &(0..d).collect::<Vec<_>>()).unwrap()
}

#[test]
fn contrast_of_one_transition_matches_hand_value() {
    // toy model at sigma = 1: Lambda = [[720,-360,60],[-360,192,-36],[60,-36,9]]
    // and log det Sigma(1) = -log 8640
    let p = builtin_model::<f64>("toy3").unwrap();
    let th = p.theta_true.with_values(&[1.5, 1.0]).unwrap();
    let dl: f64 = 0.01;
    let x = [0.2, -0.1, 0.4];
    let (q, pp, s) = (x[0], x[1], x[2]);
    let mean = [
        q + pp * dl + s * dl * dl / 2.0 - 1.5 * s * dl.powi(3) / 6.0,
        pp + s * dl - 1.5 * s * dl * dl / 2.0,
        s - 1.5 * s * dl,
    ];
    let m = [0.3, -0.8, 1.1];
    let y = [mean[0] + m[0] * dl.powf(2.5), mean[1] + m[1] * dl.powf(1.5), mean[2] + m[2] * dl.sqrt()];
    let lam = [[720.0, -360.0, 60.0], [-360.0, 192.0, -36.0], [60.0, -36.0, 9.0]];
    let quad: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| m[i] * lam[i][j] * m[j]).sum();
    let want = quad - 8640f64.ln();
    let data = ObservationSet { t0: 0.0, delta: dl, full_dim: 3, mask: vec![0, 1, 2], values: [x, y].concat() };
    let got = contrast(p.model.as_ref(), &data, &th).unwrap();
    assert!((got - want).abs() < 1e-8 * want.abs(), "{got} vs {want}");
}

#[test]
fn contrast_is_additive_over_transitions() {
    let data = complete_path("qgle_dw", 20_000, 4);
    let p = builtin_model::<f64>("qgle_dw").unwrap();
    let whole = contrast(p.model.as_ref(), &data, &p.theta_true).unwrap();
    let split = 12_345;
    let head = ObservationSet { values: data.values[..3 * (split + 1)].to_vec(), ..data.clone() };
    let tail = ObservationSet { values: data.values[3 * split..].to_vec(), ..data.clone() };
    let parts = contrast(p.model.as_ref(), &head, &p.theta_true).unwrap()
        + contrast(p.model.as_ref(), &tail, &p.theta_true).unwrap();
    assert!((whole - parts).abs() < 1e-10 * whole.abs());
}

#[test]
fn contrast_is_minimal_near_the_truth() {
    let data = complete_path("qgle_ho", 20_000, 8);
    let p = builtin_model::<f64>("qgle_ho").unwrap();
    let at = contrast(p.model.as_ref(), &data, &p.theta_true).unwrap();
    // alpha is only identified at rate sqrt(n delta), hence the wider offset
    for (k, factor) in [1.5, 1.5, 3.0, 1.5].into_iter().enumerate() {
        let mut v = p.theta_true.values().to_vec();
        v[k] *= factor;
        let off = contrast(p.model.as_ref(), &data, &p.theta_true.with_values(&v).unwrap()).unwrap();
        assert!(off > at, "parameter {k}");
    }
    let nocorr = contrast_variant(p.model.as_ref(), &data, &p.theta_true, MeanVariant::NoCorrection).unwrap();
    assert!(nocorr > at);
}

#[test]
fn complete_estimate_recovers_qgle() {
    let data = complete_path("qgle_ho", 50_000, 21);
    let p = builtin_model::<f64>("qgle_ho").unwrap();
    let r = estimate_complete(p.model.as_ref(), &data, &p.theta_init, &OptimConfig::default()).unwrap();
    assert!(r.converged);
    let est = r.theta_hat.values();
    let se = asymptotic_precision(p.model.as_ref(), &data, &r.theta_hat).unwrap().standard_errors();
    for k in 0..4 {
        let z = (est[k] - p.theta_true.values()[k]) / se[k];
        assert!(z.abs() < 4.5, "parameter {k}: estimate {} se {} z {z}", est[k], se[k]);
    }
}

#[test]
fn toy_precision_matches_closed_form() {
    // For the toy chain: Gamma_sigma = 6 / sigma^2 (rate sqrt n) and
    // Gamma_beta = mean(s^2) / sigma^2 (rate sqrt(n delta)).
    let data = complete_path("toy3", 5_000, 2);
    let p = builtin_model::<f64>("toy3").unwrap();
    let sigma = 4.0;
    let prec = asymptotic_precision(p.model.as_ref(), &data, &p.theta_true).unwrap();
    assert!(!prec.pseudo_inverse);
    let n = data.n_steps() as f64;
    let ms2: f64 = (0..data.n_steps()).map(|i| data.row(i)[2].powi(2)).sum::<f64>() / n;
    let g_beta = prec.gamma_blocks[2][(0, 0)];
    let g_sigma = prec.gamma_blocks[3][(0, 0)];
    assert!((g_beta / (ms2 / (sigma * sigma)) - 1.0).abs() < 1e-8, "{g_beta}");
    assert!((g_sigma / (6.0 / (sigma * sigma)) - 1.0).abs() < 1e-8, "{g_sigma}");
    let se = prec.standard_errors();
    assert!((se[1] - sigma / (6.0 * n).sqrt()).abs() < 1e-8 * se[1]);
    assert!((se[0] - (sigma * sigma / ms2 / (n * data.delta)).sqrt()).abs() < 1e-6 * se[0]);
}

#[test]
fn gradient_matches_five_point_stencil() {
    let data = complete_path("toy3", 10_000, 5);
    let p = builtin_model::<f64>("toy3").unwrap();
    let f = |v: &[f64]| contrast(p.model.as_ref(), &data, &p.theta_true.with_values(v).unwrap()).unwrap();
    for th in [[1.0, 3.0], [2.5, 4.5], [0.7, 6.0]] {
        let g = contrast_gradient(p.model.as_ref(), &data, &p.theta_true.with_values(&th).unwrap()).unwrap();
        for k in 0..2 {
            let h = 1e-3 * th[k];
            let at = |t: f64| {
                let mut v = th.to_vec();
                v[k] += t * h;
                f(&v)
            };
            let five = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h);
            assert!((g[k] - five).abs() <= 1e-4 * five.abs(), "k={k}: {} vs {five}", g[k]);
        }
    }
}

#[test]
fn f32_contrast_tracks_f64() {
    // At small steps the smooth residual falls below f32 resolution.
    let data = complete_path_with("toy3", 2_000, 3, 1000);
    let p = builtin_model::<f64>("toy3").unwrap();
    let p32 = builtin_model::<f32>("toy3").unwrap();
    let d32 = ObservationSet {
        t0: 0.0f32,
        delta: data.delta as f32,
        full_dim: 3,
        mask: data.mask.clone(),
        values: data.values.iter().map(|v| *v as f32).collect(),
    };
    let a = contrast(p.model.as_ref(), &data, &p.theta_true).unwrap();
    let b = contrast(p32.model.as_ref(), &d32, &p32.theta_true).unwrap();
    assert!(b.is_finite() && b < infeasible::<f32>());
    assert!(((b as f64) - a).abs() < 1e-3 * a.abs(), "{b} vs {a}");
}

#[test]
fn rejects_partial_data() {
    let p = builtin_model::<f64>("toy3").unwrap();
    let d = ObservationSet { t0: 0.0, delta: 0.1, full_dim: 3, mask: vec![0], values: vec![0.0; 4] };
    assert!(matches!(contrast(p.model.as_ref(), &d, &p.theta_true), Err(Error::Argument(_))));
}
