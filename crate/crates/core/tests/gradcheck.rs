use fcvp_core::neural::{Activation, MlpModel, ModelSpec, PointFeature, POINT_DIM};
use fcvp_core::rng::rng_for;
use rand::Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;

fn random_spec<R: Rng>(rng: &mut R, draw: usize) -> ModelSpec {
    let widths = |rng: &mut R, n: usize| (0..n).map(|_| rng.random_range(2..7)).collect::<Vec<_>>();
    let n_enc = rng.random_range(0..3);
    let n_head = rng.random_range(0..3);
    ModelSpec {
        encoder: widths(rng, n_enc),
        head_hidden: widths(rng, n_head),
        output_dim: rng.random_range(1..4),
        extra_dim: rng.random_range(if n_enc == 0 { 1 } else { 0 }..5),
        hidden_activation: [Activation::Tanh, Activation::Relu][draw % 2],
        output_activation: [Activation::Identity, Activation::Tanh][draw % 2],
    }
}

/// `sum_i w_i * out_i`, whose gradient with respect to the output is `w`.
fn weighted_output(model: &MlpModel, points: &[PointFeature], extras: &[f64], w: &[f64]) -> f64 {
    let out = model.predict(points, extras).unwrap();
    out.iter().zip(w).map(|(o, w)| o * w).sum()
}

#[test]
fn analytic_gradients_match_central_differences() {
    for draw in 0..10 {
        let mut rng = rng_for(2024, &[draw as u64]);
        let spec = random_spec(&mut rng, draw);
        let mut model = MlpModel::from_spec(&spec, draw as u64).unwrap();
        let n_points = if spec.encoder.is_empty() { 0 } else { rng.random_range(1..9) };
        let points: Vec<PointFeature> = (0..n_points)
            .map(|_| {
                let mut p = [0.0; POINT_DIM];
                for v in p.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                p
            })
            .collect();
        let extras: Vec<f64> = (0..spec.extra_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..spec.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();

        let cache = model.forward(&points, &extras).unwrap();
        let analytic = model.backward(&cache, &w);
        let params = model.params();
        assert_eq!(analytic.len(), params.len());

        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] = params[i] + EPS;
            model.set_params(&p).unwrap();
            let up = weighted_output(&model, &points, &extras, &w);
            p[i] = params[i] - EPS;
            model.set_params(&p).unwrap();
            let down = weighted_output(&model, &points, &extras, &w);
            let numeric = (up - down) / (2.0 * EPS);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(err);
        }
        model.set_params(&params).unwrap();
        assert!(worst < TOL, "draw {draw} ({spec:?}): worst relative error {worst}");
    }
}
