//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! the raw stderr handle (visible without `--nocapture`) and then asserts.
//!
//! Run alone with `cargo test --release -p steinlab --test acceptance`.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use steinlab::calibration::calibration_report;
use steinlab::config::{ExperimentConfig, ExperimentKind, SYNTHETIC_IMAGES};
use steinlab::data::resolve_data_path;
use steinlab::experiments::{
    ebm_image_run, gauss_oracle_run, ica_run, rbm_eval_run, rbm_gof_run, toy2d_run, GofRun, IcaSeedRun,
};
use steinlearn::diffnet::{Activation, MlpNet};
use steinlearn::discrepancy::{ksd_linear_from_scores, ksd_quadratic_from_scores, RbfKernel};
use steinlearn::rng::{normal_matrix, permutation, rng_from_seed};
use steinlearn::scorezoo::{
    DeepEbmModel, GaussianModel, IcaModel, LogDensity, ScoreModel, SlicedScoreMatching, TrainableModel,
};

fn verdict(id: u32, title: &str, pass: bool, detail: String) {
    let line = format!("[{}] criterion {id:>2} {title}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- 1

#[test]
fn c01_gaussian_oracle_attainment() {
    let started = Instant::now();
    let mut cfg = ExperimentConfig::preset(ExperimentKind::GaussOracle);
    cfg.samples = 10_000;
    cfg.train.critic_hidden = vec![128, 128];
    cfg.train.iterations = 2000;
    let (run, _) = gauss_oracle_run(&cfg, 100, 0).unwrap();
    let ratio = run.regularized / run.oracle;
    verdict(
        1,
        "gaussian oracle attainment",
        ratio >= 0.85 && run.cosine >= 0.95,
        format!(
            "regularized LSD {:.3} / oracle {:.3} = {:.3} (need >= 0.85), cosine to optimal critic {:.4} (need >= 0.95), {:.0?}",
            run.regularized,
            run.oracle,
            ratio,
            run.cosine,
            started.elapsed()
        ),
    );
}

// ---------------------------------------------------------- 2, 3, 4

fn gof_config(repeats: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::RbmGof);
    cfg.repeats = repeats;
    cfg.train.critic_hidden = vec![32, 32];
    cfg.train.iterations = 150;
    cfg.train.critic_lr = 3e-3;
    cfg.train.val_every = 25;
    cfg
}

fn gof_runs(cfg: &ExperimentConfig, sigma: f64) -> Vec<GofRun> {
    cfg.run_seeds()
        .into_iter()
        .map(|(_, _, seed)| rbm_gof_run(cfg, 50, sigma, seed).unwrap())
        .collect()
}

fn null_runs() -> &'static [GofRun] {
    static RUNS: OnceLock<Vec<GofRun>> = OnceLock::new();
    RUNS.get_or_init(|| gof_runs(&gof_config(200), 0.0))
}

fn rejection_rate(runs: &[GofRun]) -> f64 {
    runs.iter().filter(|r| r.result.reject).count() as f64 / runs.len() as f64
}

#[test]
fn c02_gof_calibration() {
    let runs = null_runs();
    let rate = rejection_rate(runs);
    verdict(
        2,
        "gof calibration",
        (0.01..=0.10).contains(&rate),
        format!("rejection rate {rate:.3} over {} null repeats (need in [0.01, 0.10])", runs.len()),
    );
}

#[test]
fn c03_gof_power() {
    let started = Instant::now();
    let runs = gof_runs(&gof_config(50), 0.06);
    let rate = rejection_rate(&runs);
    verdict(
        3,
        "gof power",
        rate >= 0.8,
        format!(
            "rejection rate {rate:.3} over {} repeats at perturbation 0.06 (need >= 0.8), {:.0?}",
            runs.len(),
            started.elapsed()
        ),
    );
}

#[test]
fn c04_statistic_normality() {
    let stats: Vec<f64> = null_runs().iter().map(|r| r.result.t).collect();
    let report = calibration_report(&stats).unwrap();
    let deviation = report.max_central_deviation(0.9);
    verdict(
        4,
        "statistic normality",
        report.ks_p_value > 0.01 && deviation < 0.25,
        format!(
            "KS p-value {:.3} (need > 0.01), max central-90% QQ deviation {deviation:.3} (need < 0.25), {} statistics",
            report.ks_p_value,
            stats.len()
        ),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn c05_rbm_evaluation_monotonicity() {
    let started = Instant::now();
    let mut cfg = ExperimentConfig::preset(ExperimentKind::RbmEval);
    cfg.train.critic_hidden = vec![64, 64];
    cfg.train.iterations = 500;
    let mut lsd = Vec::new();
    let mut lsd_se = Vec::new();
    let mut ksd = Vec::new();
    let mut ksd_se = Vec::new();
    for &sigma in &cfg.grid {
        let runs: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| rbm_eval_run(&cfg, 50, sigma, seed).unwrap())
            .collect();
        lsd.push(mean(&runs.iter().map(|r| r.lsd.mean).collect::<Vec<_>>()));
        lsd_se.push(mean(&runs.iter().map(|r| r.lsd.standard_error()).collect::<Vec<_>>()));
        ksd.push(mean(&runs.iter().map(|r| r.ksd.mean).collect::<Vec<_>>()));
        ksd_se.push(mean(&runs.iter().map(|r| r.ksd.standard_error()).collect::<Vec<_>>()));
    }
    let increasing = lsd.windows(2).all(|w| w[1] > w[0]);
    let null_ok = lsd[0].abs() <= 2.0 * lsd_se[0];
    let tighter = lsd_se.iter().zip(&ksd_se).all(|(l, k)| l < k);
    let rel = |m: &[f64], se: &[f64]| -> Vec<String> {
        m.iter().zip(se).map(|(m, s)| format!("{:.2}", s / m.abs())).collect()
    };
    verdict(
        5,
        "rbm evaluation monotonicity",
        increasing && null_ok && tighter,
        format!(
            "grid {:?}: LSD {:.4?} (strictly increasing: {increasing}), LSD at 0 within 2 SE: {null_ok}; \
             SE LSD {:.4?} vs KSD {:.4?} (LSD smaller everywhere: {tighter}); \
             relative SE LSD {:?} KSD {:?}; KSD means {:.4?}, {:.0?}",
            cfg.grid,
            lsd,
            lsd_se,
            ksd_se,
            rel(&lsd[1..], &lsd_se[1..]),
            rel(&ksd[1..], &ksd_se[1..]),
            ksd,
            started.elapsed()
        ),
    );
}

// ---------------------------------------------------------------- 6

fn ica_config(methods: &[&str], learning_rates: &[f64]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::IcaBench);
    cfg.ica.methods = methods.iter().map(|m| m.to_string()).collect();
    cfg.ica.learning_rates = learning_rates.to_vec();
    cfg.ica.kink_bandwidth = Some(0.1);
    cfg.train.critic_hidden = vec![64, 64];
    cfg.train.iterations = 30_000;
    cfg
}

fn best_test_ll(run: &IcaSeedRun, method: &str) -> f64 {
    run.best
        .iter()
        .find(|r| r.method == method)
        .map_or(f64::NAN, |r| r.test_log_likelihood)
}

#[test]
fn c06_ica_benchmark() {
    let started = Instant::now();
    let ml_cfg = ica_config(&["ml"], &[1e-3, 1e-4, 1e-5]);
    let lsd_cfg = ica_config(&["lsd"], &[1e-3]);
    let mut pass = true;
    let mut parts = Vec::new();
    for (d, tol) in [(10usize, 0.3), (20, 0.6)] {
        let (mut ml, mut lsd, mut truth) = (Vec::new(), Vec::new(), Vec::new());
        for &seed in &ml_cfg.seeds {
            let ml_run = ica_run(&ml_cfg, d, seed).unwrap();
            let lsd_run = ica_run(&lsd_cfg, d, seed).unwrap();
            ml.push(best_test_ll(&ml_run, "ml"));
            lsd.push(best_test_ll(&lsd_run, "lsd"));
            truth.push(ml_run.truth_test_log_likelihood);
        }
        let gap = (mean(&ml) - mean(&lsd)).abs();
        let ok = gap <= tol;
        pass &= ok;
        parts.push(format!(
            "D={d}: LSD {:.3} vs ML {:.3} (truth {:.3}), |gap| {gap:.3} (need <= {tol}) {}",
            mean(&lsd),
            mean(&ml),
            mean(&truth),
            if ok { "ok" } else { "MISSED" }
        ));
    }
    verdict(
        6,
        "ica benchmark",
        pass,
        format!("{}; 5-seed means, {:.0?}", parts.join("; "), started.elapsed()),
    );
}

// ---------------------------------------------------------------- 7

/// Written-out RBF Stein kernel `u(x, y)` for one pair.
fn stein_pair(sx: &[f64], sy: &[f64], x: &[f64], y: &[f64], h: f64) -> f64 {
    let d = x.len();
    let h2 = h * h;
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let k = (-r2 / (2.0 * h2)).exp();
    let mut total = k * (d as f64 / h2 - r2 / (h2 * h2));
    for i in 0..d {
        let diff = x[i] - y[i];
        total += k * sx[i] * sy[i];
        total += sx[i] * k * diff / h2;
        total -= sy[i] * k * diff / h2;
    }
    total
}

#[test]
fn c07_ksd_correctness() {
    let model = GaussianModel::isotropic(Array1::from_elem(3, 0.4), 1.3).unwrap();
    let h = 1.1;
    let kernel = RbfKernel::new(h).unwrap();

    let mut worst = 0.0f64;
    for (n, seed) in [(2usize, 1u64), (7, 2), (20, 3)] {
        let x = normal_matrix::<f64, _>(&mut rng_from_seed(seed), n, 3);
        let scores = model.score_batch(x.view()).unwrap();
        let mut brute = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let row = |m: &Array2<f64>, k: usize| m.row(k).to_vec();
                    brute += stein_pair(&row(&scores, i), &row(&scores, j), &row(&x, i), &row(&x, j), h);
                }
            }
        }
        brute /= (n * (n - 1)) as f64;
        let quad = ksd_quadratic_from_scores(scores.view(), x.view(), &kernel).unwrap().mean;
        worst = worst.max((quad - brute).abs());
    }

    let pool = normal_matrix::<f64, _>(&mut rng_from_seed(9), 200, 3);
    let scores = model.score_batch(pool.view()).unwrap();
    let quad = ksd_quadratic_from_scores(scores.view(), pool.view(), &kernel).unwrap().mean;
    let mut rng = rng_from_seed(10);
    let linear: Vec<f64> = (0..200)
        .map(|_| {
            let order = permutation(&mut rng, pool.nrows());
            let xs = pool.select(Axis(0), &order);
            let ss = scores.select(Axis(0), &order);
            ksd_linear_from_scores(ss.view(), xs.view(), &kernel).unwrap().mean
        })
        .collect();
    let lin_mean = mean(&linear);
    let sd = (linear.iter().map(|v| (v - lin_mean).powi(2)).sum::<f64>() / (linear.len() - 1) as f64).sqrt();
    let se = sd / (linear.len() as f64).sqrt();
    let z = (lin_mean - quad).abs() / se;
    verdict(
        7,
        "ksd correctness",
        worst < 1e-12 && z < 4.0,
        format!(
            "max |quadratic - double loop| {worst:.2e} for n in {{2, 7, 20}} (need < 1e-12); \
             linear mean over 200 resamples {lin_mean:.5} vs quadratic {quad:.5}, {z:.2} SE (need < 4)"
        ),
    );
}

// ---------------------------------------------------------------- 8

fn central_difference(theta: &Array1<f64>, f: impl Fn(&Array1<f64>) -> f64) -> Array1<f64> {
    let step = 1e-5;
    Array1::from_shape_fn(theta.len(), |i| {
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[i] += step;
        down[i] -= step;
        (f(&up) - f(&down)) / (2.0 * step)
    })
}

fn rel_err(analytic: &Array1<f64>, numeric: &Array1<f64>) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

fn critic_lsde_error() -> (usize, f64) {
    let dims = [3, 5, 3];
    let critic = MlpNet::<f64>::init(&dims, Activation::Swish, 21).unwrap();
    let mut rng = rng_from_seed(22);
    let x = normal_matrix::<f64, _>(&mut rng, 6, 3);
    let g = normal_matrix::<f64, _>(&mut rng, 6, 3);
    let eps = normal_matrix::<f64, _>(&mut rng, 6, 3);
    let lambda = 0.5;
    let w = Array1::from_elem(6, 1.0 / 6.0);
    let batch = critic.lsde_batch(x.view(), g.view(), eps.view(), lambda, w.view(), w.view(), None).unwrap();
    // Objective mean(gᵀf + εᵀJε − λ‖f‖²) evaluated with forward-mode products.
    let objective = |theta: &Array1<f64>| {
        let net = MlpNet::from_params(&dims, Activation::Swish, &steinlearn::diffnet::ParamVector(theta.clone())).unwrap();
        let (f, jeps) = net.jvp_batch(x.view(), eps.view()).unwrap();
        ((&g * &f).sum() + (&eps * &jeps).sum() - lambda * (&f * &f).sum()) / 6.0
    };
    let theta = critic.to_params().into_inner();
    (theta.len(), rel_err(&batch.param_grad.into_inner(), &central_difference(&theta, objective)))
}

fn energy_pairing_error() -> (usize, f64) {
    let energy = MlpNet::<f64>::init(&[2, 4, 1], Activation::Swish, 31).unwrap();
    let model = DeepEbmModel::with_standard_envelope(energy).unwrap();
    let mut rng = rng_from_seed(32);
    let x = normal_matrix::<f64, _>(&mut rng, 5, 2);
    let coef = normal_matrix::<f64, _>(&mut rng, 5, 2);
    let (_, grad) = model.score_pairing_grad(x.view(), coef.view()).unwrap();
    let objective = |theta: &Array1<f64>| {
        let mut m = model.clone();
        m.set_params(theta.view()).unwrap();
        (&m.score_batch(x.view()).unwrap() * &coef).sum() / 5.0
    };
    let theta = model.params();
    (theta.len(), rel_err(&grad, &central_difference(&theta, objective)))
}

fn ica_fixture() -> (IcaModel<f64>, Array2<f64>) {
    let model = IcaModel::<f64>::random(4, 41).unwrap();
    let x = normal_matrix::<f64, _>(&mut rng_from_seed(42), 30, 4);
    (model, x)
}

fn ica_ml_error() -> (usize, f64) {
    let (model, x) = ica_fixture();
    let (_, grad) = model.log_likelihood_grad(x.view()).unwrap();
    let objective = |theta: &Array1<f64>| {
        let mut m = model.clone();
        m.set_params(theta.view()).unwrap();
        m.mean_log_density(x.view()).unwrap()
    };
    let theta = model.params();
    let flat = grad.into_shape_with_order(theta.len()).unwrap();
    (theta.len(), rel_err(&flat, &central_difference(&theta, objective)))
}

fn sliced_sm_error<M>(model: &M, x: &Array2<f64>) -> (usize, f64)
where
    M: SlicedScoreMatching<f64> + TrainableModel<f64>,
{
    let probes = normal_matrix::<f64, _>(&mut rng_from_seed(52), x.nrows(), x.ncols());
    let (_, grad) = model.sliced_sm_grad(x.view(), probes.view()).unwrap();
    let objective = |theta: &Array1<f64>| {
        let mut m = model.clone();
        m.set_params(theta.view()).unwrap();
        m.sliced_sm_terms(x.view(), probes.view()).unwrap().mean().unwrap()
    };
    let theta = model.params();
    (theta.len(), rel_err(&grad, &central_difference(&theta, objective)))
}

#[test]
fn c08_differentiation_core() {
    let (ica, x) = ica_fixture();
    let gaussian = GaussianModel::diagonal(Array1::from(vec![0.3, -0.2, 0.1]), Array1::from(vec![0.7, 1.4, 2.0])).unwrap();
    let gx = normal_matrix::<f64, _>(&mut rng_from_seed(53), 25, 3);
    let checks = [
        ("critic LSDE with Hutchinson term", critic_lsde_error()),
        ("energy mixed gradient", energy_pairing_error()),
        ("ICA ML gradient", ica_ml_error()),
        ("ICA sliced-SM gradient", sliced_sm_error(&ica, &x)),
        ("Gaussian sliced-SM gradient", sliced_sm_error(&gaussian, &gx)),
    ];
    let pass = checks.iter().all(|(_, (p, e))| *p <= 50 && *e < 1e-4);
    let detail = checks
        .iter()
        .map(|(name, (p, e))| format!("{name} {p} params rel err {e:.1e}"))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(8, "differentiation core", pass, format!("{detail} (need < 1e-4, <= 50 params)"));
}

// ---------------------------------------------------------------- 9

#[test]
fn c09_toy2d_training() {
    let started = Instant::now();
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Toy2dTrain);
    cfg.samples = 2000;
    cfg.train.iterations = 2000;
    cfg.train.val_every = 500;
    cfg.train.critic_hidden = vec![64, 64];
    cfg.ebm.energy_hidden = vec![64, 64];
    cfg.ebm.eval_iterations = 500;
    let runs: Vec<_> = cfg
        .seeds
        .iter()
        .map(|&seed| toy2d_run(&cfg, "two_moons", seed).unwrap().0)
        .collect();
    let pass = runs.iter().all(|r| r.ratio() <= 0.2);
    let detail = runs
        .iter()
        .map(|r| format!("seed {}: {:.3} -> {:.3} (ratio {:.3})", r.seed, r.initial_lsd.mean, r.final_lsd.mean, r.ratio()))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(
        9,
        "toy-2d training",
        pass,
        format!("two_moons {detail} (need every ratio <= 0.2), {:.0?}", started.elapsed()),
    );
}

// ---------------------------------------------------------------- 10

#[test]
fn c10_image_ebm_smoke() {
    let started = Instant::now();
    let mut cfg = ExperimentConfig::preset(ExperimentKind::EbmImageTrain);
    let real = cfg.ebm.images.clone().map(|p| resolve_data_path(&p)).filter(|p| p.is_file());
    if real.is_none() {
        cfg.ebm.images = Some(SYNTHETIC_IMAGES.into());
    }
    cfg.ebm.max_images = 2000;
    cfg.samples = 2000;
    cfg.train.iterations = 500;
    cfg.train.val_every = 100;
    cfg.train.critic_hidden = vec![128, 128];
    cfg.ebm.energy_hidden = vec![128, 128];
    cfg.ebm.sgld_samples = 16;
    cfg.ebm.sgld.steps = 100;
    let run = ebm_image_run(&cfg, 0).unwrap();
    let finite = run.samples.iter().all(|v| v.is_finite());
    let meta = &run.sample_manifest;
    let metadata = meta.model_hash.is_some()
        && meta.rows == run.samples.nrows()
        && meta.cols == 784
        && ["step_size", "noise_scale", "steps", "init"]
            .iter()
            .all(|k| meta.sampler.get(k).is_some());
    let params_finite = run.model.params().iter().all(|v| v.is_finite());
    verdict(
        10,
        "image ebm smoke test",
        run.iterations == 500 && finite && params_finite && metadata,
        format!(
            "source {} ({} images), {} training iterations, model finite: {params_finite}, \
             {}x{} SGLD samples finite: {finite}, sampler metadata complete: {metadata}, {:.0?}",
            run.source,
            run.images,
            run.iterations,
            run.samples.nrows(),
            run.samples.ncols(),
            started.elapsed()
        ),
    );
}
