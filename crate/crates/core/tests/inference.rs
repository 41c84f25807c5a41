mod common;

use common::{diagram, enumeration_oracle, prior, task};
use freeop::inference::{
    elbo, fit_variational, log_likelihood, posterior_samples, snis_evidence, EnumConfig, FitConfig, HyperSource, Model,
    VariationalParams,
};
use freeop::prior::Hyperparams;
use statrs::function::gamma::{digamma, ln_gamma};

fn single_log_lik() -> f64 {
    let p = prior("single.json");
    let t = task(&p, "single.json");
    let inc = freeop::Term::gen(p.graph().signature().generator("inc").unwrap().clone());
    log_likelihood(&t, &inc).unwrap()
}

/// KL(Gamma(a, b) || Gamma(1, 1)), rate parameterisation.
fn kl_gamma_to_exp1(a: f64, b: f64) -> f64 {
    (a - 1.0) * digamma(a) - ln_gamma(a) + b.ln() + a * (1.0 - b) / b
}

#[test]
fn single_morphism_evidence_is_exact() {
    let p = prior("single.json");
    let d = diagram("single.json");
    let t = task(&p, "single.json");
    let model = Model::new(&p, &d, &t).unwrap();
    let r = snis_evidence(&model, HyperSource::Prior, 100, 5).unwrap();
    assert_eq!(r.log_z_hat, single_log_lik());
    assert_eq!(r.n_failed, 0);
    assert_eq!(r.log_z_stderr, 0.0);
}

#[test]
fn elbo_with_prior_q_is_log_likelihood_on_single() {
    let p = prior("single.json");
    let d = diagram("single.json");
    let t = task(&p, "single.json");
    let model = Model::new(&p, &d, &t).unwrap();
    let e = elbo(&model, &VariationalParams::prior(p.graph().weight_len()), 200, 1).unwrap();
    assert!((e.value - single_log_lik()).abs() < 1e-12);
    assert_eq!(e.n_used, 200);
}

#[test]
fn elbo_matches_closed_form_kl_on_single() {
    let p = prior("single.json");
    let d = diagram("single.json");
    let t = task(&p, "single.json");
    let model = Model::new(&p, &d, &t).unwrap();
    for (a, b) in [(2.0, 3.0), (0.7, 0.5), (5.0, 1.0)] {
        let q = VariationalParams { gamma_shape: a, gamma_rate: b, dirichlet_conc: vec![1.0; p.graph().weight_len()] };
        let e = elbo(&model, &q, 40_000, 11).unwrap();
        let exact = single_log_lik() - kl_gamma_to_exp1(a, b);
        assert!((e.value - exact).abs() < 4.0 * e.stderr, "({a}, {b}): {} vs {exact} +- {}", e.value, e.stderr);
    }
}

#[test]
fn zero_steps_returns_init() {
    let p = prior("arith_small.json");
    let d = diagram("linear.json");
    let t = task(&p, "linear.json");
    let model = Model::new(&p, &d, &t).unwrap();
    let init = VariationalParams { gamma_shape: 2.0, gamma_rate: 0.5, dirichlet_conc: vec![0.5; p.graph().weight_len()] };
    let fit = fit_variational(&model, &init, &FitConfig { steps: 0, step_size: 0.1, n_samples: 16, seed: 0 }).unwrap();
    assert_eq!(fit.params, init);
    assert!(fit.trajectory.is_empty());
}

#[test]
fn fitting_improves_the_elbo() {
    let p = prior("arith_small.json");
    let d = diagram("linear.json");
    let t = task(&p, "linear_flat.json");
    // a flat likelihood makes the optimum q = prior, so start away from it
    let model = Model::new(&p, &d, &t).unwrap();
    let init = VariationalParams { gamma_shape: 4.0, gamma_rate: 0.5, dirichlet_conc: vec![3.0; p.graph().weight_len()] };
    let cfg = FitConfig { steps: 150, step_size: 0.05, n_samples: 64, seed: 3 };
    let fit = fit_variational(&model, &init, &cfg).unwrap();
    let before = elbo(&model, &init, 20_000, 99).unwrap();
    let after = elbo(&model, &fit.params, 20_000, 99).unwrap();
    assert!(after.value > before.value + 3.0 * (before.stderr + after.stderr), "{before:?} -> {after:?}");
    // and never above log-evidence 0 by more than noise
    assert!(after.value - 3.0 * after.stderr <= 0.0);
    let early: f64 = fit.trajectory[..20].iter().map(|p| p.elbo).sum::<f64>() / 20.0;
    let late: f64 = fit.trajectory[130..].iter().map(|p| p.elbo).sum::<f64>() / 20.0;
    assert!(late > early, "{early} -> {late}");
}

#[test]
fn single_morphism_posterior_has_one_entry() {
    let p = prior("single.json");
    let d = diagram("single.json");
    let t = task(&p, "single.json");
    let model = Model::new(&p, &d, &t).unwrap();
    let post = posterior_samples(&model, &VariationalParams::prior(p.graph().weight_len()), 300, 2).unwrap();
    assert_eq!(post.len(), 1);
    assert!((post[0].weight - 1.0).abs() < 1e-12);
    assert_eq!(post[0].term.to_string(), "(gen inc)");
}

#[test]
fn flat_likelihood_posterior_is_prior_frequencies() {
    let p = prior("arith_small.json");
    let d = diagram("linear.json");
    let t = task(&p, "linear_flat.json");
    let model = Model::new(&p, &d, &t).unwrap();
    let n = 4000;
    let post = posterior_samples(&model, &VariationalParams::prior(p.graph().weight_len()), n, 6).unwrap();
    let total: f64 = post.iter().map(|e| e.weight).sum();
    assert!((total - 1.0).abs() < 1e-9);
    // equal particle weights: every entry is a whole number of particles
    let unit = post.iter().map(|e| e.weight).fold(f64::INFINITY, f64::min);
    let kept: f64 = post.iter().map(|e| (e.weight / unit).round()).sum();
    for e in &post {
        let c = e.weight / unit;
        assert!((c - c.round()).abs() < 1e-6, "{c}");
    }
    assert!(kept <= n as f64 && kept > 0.9 * n as f64, "{kept}");
    assert!((unit * kept - 1.0).abs() < 1e-9);
    assert!(post.windows(2).all(|w| w[0].weight >= w[1].weight));
}

#[test]
fn snis_covers_the_enumeration_oracle() {
    let p = prior("arith_small.json");
    let d = diagram("linear.json");
    let t = task(&p, "linear.json");
    let h = Hyperparams::uniform(1.0, p.graph().weight_len()).unwrap();
    let oracle = enumeration_oracle(&p, &d, &t, &h, EnumConfig { max_steps: 20, max_recursion_depth: 3 });
    assert!(oracle.truncated_mass < 1e-4);
    let target = oracle.evidence.ln();
    let model = Model::new(&p, &d, &t).unwrap();
    let mut inside = 0;
    for seed in 0..20 {
        let r = snis_evidence(&model, HyperSource::Fixed(&h), 4000, 100 + seed).unwrap();
        if (r.log_z_hat - target).abs() <= 2.0 * r.log_z_stderr {
            inside += 1;
        }
    }
    // 2-SE intervals should cover about 95% of the time
    assert!(inside >= 15, "{inside}/20");
}

#[test]
fn snis_rejects_bad_preconditions() {
    let p = prior("single.json");
    let d = diagram("single.json");
    let t = task(&p, "single.json");
    let model = Model::new(&p, &d, &t).unwrap();
    assert!(snis_evidence(&model, HyperSource::Prior, 1, 0).is_err());
    let q = VariationalParams::prior(p.graph().weight_len());
    assert!(snis_evidence(&model, HyperSource::Variational(&q), 10, 0).is_err());
}
