use ndarray::{Array1, Array2};
use steinlearn::diffnet::{Activation, MlpNet};
use steinlearn::discrepancy::{
    gaussian_sd_oracle, lsd_estimate, regularizer, stein_terms_exact, stein_terms_hutchinson, DiscrepancyEstimate,
};
use steinlearn::procedures::{fit_critic_lsd_with, Selection, SplitData, TrainConfig};
use steinlearn::rng::{normal_matrix, rng_from_seed};
use steinlearn::samplers::{gbrbm_exact, ica_sample};
use steinlearn::scorezoo::{DeepEbmModel, GaussianModel, GbrbmModel, IcaModel, ScoreModel};

/// Tanh hidden layers keep the critic bounded.
fn bounded_critic(d: usize, seed: u64) -> MlpNet<f64> {
    MlpNet::init(&[d, 16, d], Activation::Tanh, seed).unwrap()
}

fn null_z<M: ScoreModel<f64>>(model: &M, x: &Array2<f64>, seed: u64) -> f64 {
    let critic = bounded_critic(model.dim(), seed);
    let est = lsd_estimate(&stein_terms_exact(&critic, model, x.view()).unwrap()).unwrap();
    est.mean / est.standard_error()
}

#[test]
fn stein_identity_holds_on_self_samples() {
    let n = 10_000;
    let gaussian = GaussianModel::diagonal(Array1::from(vec![0.5, -1.0, 2.0]), Array1::from(vec![0.5, 1.0, 3.0])).unwrap();
    let std_normal = normal_matrix::<f64, _>(&mut rng_from_seed(1), n, 3);
    let gx = &std_normal * &gaussian.variances().mapv(f64::sqrt) + gaussian.mean();

    let rbm = GbrbmModel::<f64>::random(4, 3, 2).unwrap();
    let rx = gbrbm_exact(&rbm, n, 3).unwrap();

    let ica = IcaModel::<f64>::random(3, 4).unwrap();
    let ix = ica_sample(&ica, n, 5).unwrap();

    // A zero energy leaves the standard-normal envelope.
    let ebm = DeepEbmModel::with_standard_envelope(MlpNet::zeros(&[2, 4, 1], Activation::Swish).unwrap()).unwrap();
    let ex = normal_matrix::<f64, _>(&mut rng_from_seed(6), n, 2);

    for seed in 0..3 {
        let zs = [
            ("gaussian", null_z(&gaussian, &gx, seed)),
            ("gbrbm", null_z(&rbm, &rx, seed)),
            ("ica", null_z(&ica, &ix, seed)),
            ("deep ebm", null_z(&ebm, &ex, seed)),
        ];
        for (name, z) in zs {
            assert!(z.abs() < 4.0, "{name} critic {seed}: mean is {z:.2} SE from zero");
        }
    }
}

#[test]
fn hutchinson_and_exact_trace_agree() {
    let model = GaussianModel::isotropic(Array1::from_elem(4, 0.7), 1.0).unwrap();
    let x = normal_matrix::<f64, _>(&mut rng_from_seed(7), 5000, 4);
    for seed in 0..4 {
        let critic = MlpNet::<f64>::init(&[4, 12, 12, 4], Activation::Swish, 20 + seed).unwrap();
        let exact = lsd_estimate(&stein_terms_exact(&critic, &model, x.view()).unwrap()).unwrap();
        let hutch = lsd_estimate(&stein_terms_hutchinson(&critic, &model, x.view(), 30 + seed).unwrap()).unwrap();
        let combined = exact.standard_error().hypot(hutch.standard_error());
        assert!(
            (exact.mean - hutch.mean).abs() < 4.0 * combined,
            "exact {} vs hutchinson {} (se {combined})",
            exact.mean,
            hutch.mean
        );
    }
}

/// Regularized test value `mean(s) − λ mean‖f‖²` with its per-row spread.
fn regularized_test(critic: &MlpNet<f64>, model: &GaussianModel<f64>, x: &Array2<f64>, lambda: f64) -> DiscrepancyEstimate<f64> {
    let terms = stein_terms_exact(critic, model, x.view()).unwrap();
    let f = critic.forward_batch(x.view()).unwrap();
    let rows: Vec<f64> = terms
        .values()
        .iter()
        .zip(f.rows())
        .map(|(s, fr)| s - lambda * fr.dot(&fr))
        .collect();
    let est = DiscrepancyEstimate::from_values(&rows).unwrap();
    let r = regularizer(critic, x.view(), lambda).unwrap();
    assert!((est.mean - (terms.mean() - r)).abs() < 1e-9);
    est
}

#[test]
fn variance_aware_selection_stays_below_the_oracle() {
    // Few training points make the critic easy to overfit.
    let d = 5;
    let p = GaussianModel::<f64>::standard(d);
    let q = GaussianModel::isotropic(Array1::from_elem(d, 0.5), 1.0).unwrap();
    let lambda = 0.5;
    let oracle = gaussian_sd_oracle(&p, &q, lambda).unwrap();
    let mut rng = rng_from_seed(11);
    let data = SplitData::new(
        normal_matrix(&mut rng, 100, d),
        normal_matrix(&mut rng, 100, d),
        normal_matrix(&mut rng, 4000, d),
    )
    .unwrap();
    let cfg = TrainConfig {
        lambda,
        iterations: 600,
        batch_size: 50,
        val_every: 10,
        critic_hidden: vec![64, 64],
        seed: 12,
        ..TrainConfig::default()
    };
    let fit = fit_critic_lsd_with(&q, &data, &cfg, Selection::MeanMinusStd).unwrap();
    let test = regularized_test(&fit.critic, &q, &data.test, lambda);
    assert!(
        test.mean <= oracle + 2.0 * test.standard_error(),
        "selected test value {} vs oracle {oracle} (se {})",
        test.mean,
        test.standard_error()
    );
}
