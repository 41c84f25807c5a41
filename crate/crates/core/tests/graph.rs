mod common;

use std::collections::BTreeSet;

use common::{prior, signature, SIGNATURE_FIXTURES};
use freeop::distance::DEFAULT_EXPM_TOL;
use freeop::hypergraph::EdgeLabel;
use freeop::inference::{visit_traces, EnumConfig, Visit};
use freeop::prior::Hyperparams;
use freeop::rng::stream_rng;
use freeop::{build_hypergraph, parse_signature, OperadPrior, Signature, Ty};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn names(t: &Ty) -> Vec<String> {
    t.factors().iter().map(|b| b.name().to_string()).collect()
}

/// Naive closure: repeat the site rule over every product vertex until
/// neither vertices nor edges change.
fn closure(sig: &Signature, cap: usize) -> (BTreeSet<Vec<String>>, BTreeSet<(Vec<String>, Vec<String>)>) {
    let mut vs: Vec<Vec<String>> = sig.objects().iter().map(names).collect();
    let mut es: BTreeSet<(Vec<String>, Vec<String>)> = sig.generators().iter().map(|g| (names(&g.dom), names(&g.cod))).collect();
    loop {
        let before = (vs.len(), es.len());
        for v in vs.clone() {
            if v.len() < 2 {
                continue;
            }
            let Some(parts) = partition(&v, &vs) else { continue };
            let inh: Vec<Vec<Vec<String>>> = parts
                .iter()
                .map(|c| es.iter().filter(|(_, cod)| cod == c).map(|(d, _)| d.clone()).collect::<BTreeSet<_>>().into_iter().collect())
                .collect();
            for combo in product(&inh) {
                let dom: Vec<String> = combo.concat();
                let sub = dom.is_empty() || v.windows(dom.len()).any(|w| w == dom.as_slice());
                if sub || dom.len() > cap {
                    continue;
                }
                if !vs.contains(&dom) {
                    vs.push(dom.clone());
                }
                es.insert((dom, v.clone()));
            }
        }
        if (vs.len(), es.len()) == before {
            return (vs.into_iter().collect(), es);
        }
    }
}

fn partition(v: &[String], vs: &[Vec<String>]) -> Option<Vec<Vec<String>>> {
    if v.iter().all(|f| vs.contains(&vec![f.clone()])) {
        return Some(v.iter().map(|f| vec![f.clone()]).collect());
    }
    // proper partitions, leftmost piece longest first
    fn go(v: &[String], whole: usize, vs: &[Vec<String>]) -> Option<Vec<Vec<String>>> {
        if v.is_empty() {
            return Some(vec![]);
        }
        let max = if v.len() == whole { v.len() - 1 } else { v.len() };
        (1..=max).rev().find_map(|k| {
            let head = v[..k].to_vec();
            if !vs.contains(&head) {
                return None;
            }
            go(&v[k..], whole, vs).map(|mut rest| {
                rest.insert(0, head);
                rest
            })
        })
    }
    go(v, v.len(), vs)
}

fn product(lists: &[Vec<Vec<String>>]) -> Vec<Vec<Vec<String>>> {
    lists.iter().fold(vec![vec![]], |acc, l| {
        acc.iter().flat_map(|p| l.iter().map(move |x| [p.clone(), vec![x.clone()]].concat())).collect()
    })
}

fn built(sig: &Signature, cap: usize) -> (BTreeSet<Vec<String>>, BTreeSet<(Vec<String>, Vec<String>)>) {
    let g = build_hypergraph(sig, cap).unwrap();
    (g.vertices().iter().map(names).collect(), g.edges().iter().map(|e| (names(&e.dom), names(&e.cod))).collect())
}

#[test]
fn fixtures_match_naive_closure() {
    for name in SIGNATURE_FIXTURES {
        let sig = signature(name);
        assert_eq!(built(&sig, 4), closure(&sig, 4), "{name}");
    }
}

prop_compose! {
    fn small_signature()(gens in prop::collection::vec((0usize..5, 0usize..5), 1..5)) -> String {
        let objs = [r#"["A"]"#, r#"["B"]"#, r#"["A","A"]"#, r#"["A","B"]"#, r#"["B","B"]"#];
        let gs: Vec<String> = gens
            .iter()
            .enumerate()
            .filter(|(_, (d, c))| d != c)
            .map(|(i, (d, c))| format!(r#"{{"name":"m{i}","dom":{},"cod":{}}}"#, objs[*d], objs[*c]))
            .collect();
        format!(r#"{{"base_types":["A","B"],"objects":[{}],"generators":[{}]}}"#, objs.join(","), gs.join(","))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_signatures_match_naive_closure(text in small_signature()) {
        let sig = parse_signature(&text).unwrap();
        let (cv, ce) = closure(&sig, 2);
        // only where no site grows the domain beyond the declared objects
        prop_assume!(cv.len() == sig.objects().len());
        prop_assert_eq!(built(&sig, 2), (cv, ce));
    }

    #[test]
    fn random_graph_policies_normalise(text in small_signature(), beta in prop::sample::select(vec![0.1, 1.0, 10.0])) {
        let sig = parse_signature(&text).unwrap();
        let p = OperadPrior::new(build_hypergraph(&sig, 3).unwrap(), DEFAULT_EXPM_TOL).unwrap();
        let n = p.graph().vertices().len();
        for from in 0..n {
            for to in 0..n {
                if from != to && p.distances().get(from, to).is_finite() {
                    let s: f64 = p.policy(from, to, beta).unwrap().iter().map(|x| x.1).sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn loop_policy_matches_direct_evaluation() {
    // independent of the crate: e^A for A = [[1, 1], [0, 1]] is [[e, e], [0, e]]
    let p = prior("chain_loop.json");
    let e = std::f64::consts::E;
    let (d_xy, d_yy) = (-e.ln(), -e.ln());
    let (x, y) = (p.vertex(&"[X]".parse().unwrap()).unwrap(), p.vertex(&"[Y]".parse().unwrap()).unwrap());
    assert!((p.distances().get(x, y) - d_xy).abs() < 1e-12);
    assert!((p.distances().get(y, y) - d_yy).abs() < 1e-12);
    for beta in [0.5, 1.0, 2.0] {
        let pol = p.policy(x, y, beta).unwrap();
        let wy = (-d_yy / beta).exp();
        let wx = (-d_xy / beta).exp();
        for (edge, q) in pol {
            let target = &p.graph().edges()[edge].cod;
            let want = if target == &p.graph().vertices()[y] { wy / (wx + wy) } else { wx / (wx + wy) };
            assert!((q - want).abs() < 1e-12, "beta {beta}");
        }
    }
}

#[test]
fn exact_trace_mass_and_frequencies_on_every_fixture() {
    let mut min_p: f64 = 1.0;
    for name in SIGNATURE_FIXTURES {
        let p = prior(name);
        let v = p.graph().vertices().to_vec();
        if v.len() > 5 {
            continue;
        }
        for a in 0..v.len() {
            for b in 0..v.len() {
                if a == b || !p.distances().get(a, b).is_finite() {
                    continue;
                }
                let h = Hyperparams::uniform(1.0, p.graph().weight_len()).unwrap();
                let mut probs: Vec<(String, f64)> = Vec::new();
                let cfg = EnumConfig { max_steps: 6, max_recursion_depth: 3 };
                let truncated = visit_traces(&p, &v[a], &v[b], &h, cfg, &mut |t: &Visit<'_>| {
                    let steps: Vec<usize> = t.steps().iter().map(|s| s.edge).collect();
                    probs.push((format!("{}|{steps:?}", t.term), t.log_prior.exp()));
                })
                .unwrap();
                let total: f64 = probs.iter().map(|x| x.1).sum::<f64>() + truncated;
                assert!((total - 1.0).abs() < 1e-6, "{name} {} -> {}: {total}", v[a], v[b]);

                // chi-square over traces with expected count >= 5, rest pooled
                let n = 20_000;
                let mut counts = vec![0usize; probs.len() + 1];
                for i in 0..n {
                    let t = p.sample_path(&v[a], &v[b], &h, &mut stream_rng(77, i), 256).unwrap();
                    let key = format!("{}|{:?}", t.term, t.steps.iter().map(|s| s.edge).collect::<Vec<_>>());
                    let k = probs.iter().position(|(s, _)| s == &key).unwrap_or(probs.len());
                    counts[k] += 1;
                }
                let mut stat = 0.0;
                let mut cells = 0;
                let (mut pool_obs, mut pool_exp) = (counts[probs.len()] as f64, truncated * n as f64);
                for (k, (_, q)) in probs.iter().enumerate() {
                    let exp = q * n as f64;
                    if exp >= 5.0 {
                        stat += (counts[k] as f64 - exp).powi(2) / exp;
                        cells += 1;
                    } else {
                        pool_obs += counts[k] as f64;
                        pool_exp += exp;
                    }
                }
                if pool_exp >= 5.0 {
                    stat += (pool_obs - pool_exp).powi(2) / pool_exp;
                    cells += 1;
                }
                if cells >= 2 {
                    let pval = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat);
                    min_p = min_p.min(pval);
                }
            }
        }
    }
    assert!(min_p > 0.001, "{min_p}");
}

#[test]
fn site_labels_follow_generators_in_weight_order() {
    let p = prior("arith_small.json");
    let g = p.graph();
    let n_gen = g.signature().generators().len();
    for (k, _) in g.recursion_sites().iter().enumerate() {
        assert_eq!(g.weight_index(EdgeLabel::Site(k)), n_gen + k);
    }
}
