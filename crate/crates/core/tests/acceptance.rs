//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use kgpath_core::context::{enumerate_prefixes, repack, verbalize_prefix};
use kgpath_core::eval::load_dataset;
use kgpath_core::scoring::{
    combine_scores, score_triples, structure_entity_scores, top_p_select, LexicalScorer, ScoredTriple,
};
use kgpath_core::uncertainty::{aleatoric_uncertainty, digamma, EvidenceVector};
use kgpath_core::{
    Config, ErrorClass, KnowledgeGraph, Normalization, PartialReasoningPath, Pipeline, Stage, Triple,
};

const AU_TOL: f64 = 1e-9;
const DIGAMMA_TOL: f64 = 1e-10;
const SUM_TOL: f64 = 1e-9;
const TRIALS: usize = 1000;
const SEED: u64 = 0x5eed_2024;

struct Outcome {
    ok: bool,
    detail: String,
}

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden").join(name)
}

fn au(alphas: &[f64]) -> f64 {
    aleatoric_uncertainty(&EvidenceVector::new(alphas.to_vec()).unwrap())
}

fn au_oracle() -> Outcome {
    let flat = au(&[1.0; 4]);
    if (flat - 13.0 / 12.0).abs() > AU_TOL {
        return check(false, format!("AU([1,1,1,1]) = {flat}, want 13/12"));
    }
    for a in [1e-3, 1.0, 42.0] {
        if au(&[a]) != 0.0 {
            return check(false, format!("K=1 with alpha {a} gave {}", au(&[a])));
        }
    }
    let table = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/digamma_reference.tsv"),
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut rows = 0;
    for line in table.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (x, want) = line.split_once('\t').unwrap();
        let (x, want): (f64, f64) = (x.parse().unwrap(), want.parse().unwrap());
        worst = worst.max((digamma(x) - want).abs());
        rows += 1;
    }
    check(
        worst <= DIGAMMA_TOL,
        format!("AU(1,1,1,1) = {flat:.12}; digamma max abs error {worst:.2e} over {rows} points"),
    )
}

fn scored(us: &[f64]) -> Vec<ScoredTriple> {
    us.iter()
        .enumerate()
        .map(|(i, &u)| ScoredTriple {
            triple: Triple::forward("s", "r", format!("t{i}")),
            phi_t: 0.0,
            phi_e: 0.0,
            u,
        })
        .collect()
}

/// Tries every prefix length of the descending order and keeps the shortest
/// whose sum exceeds `p`.
fn brute_force_top_p(us: &[f64], p: f64) -> usize {
    let mut sorted = us.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    (1..=sorted.len())
        .find(|&k| sorted[..k].iter().sum::<f64>() > p)
        .unwrap_or(sorted.len())
}

fn random_distribution(rng: &mut StdRng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-6).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

fn top_p_oracle() -> Outcome {
    let worked = top_p_select(scored(&[0.5, 0.3, 0.15, 0.05]), 0.9);
    if worked.selected.len() != 3 {
        return check(false, format!("worked example selected {}", worked.selected.len()));
    }
    let mut rng = StdRng::seed_from_u64(SEED);
    for trial in 0..TRIALS {
        let len = rng.random_range(1..=20);
        let us = random_distribution(&mut rng, len);
        let p = 1.0 - rng.random::<f64>();
        let got = top_p_select(scored(&us), p);
        let want = brute_force_top_p(&us, p);
        if got.selected.len() != want {
            return check(false, format!("trial {trial}: got {} want {want} (p={p})", got.selected.len()));
        }
        if got.selected.windows(2).any(|w| w[0].u < w[1].u) {
            return check(false, format!("trial {trial}: selection not descending"));
        }
    }
    check(true, format!("worked example → 3; {TRIALS} random vectors agree"))
}

fn argsort(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    idx
}

fn sums_to_one(xs: &[f64]) -> bool {
    (xs.iter().sum::<f64>() - 1.0).abs() <= SUM_TOL
}

fn score_combination() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED + 1);
    for trial in 0..TRIALS {
        let len = rng.random_range(1..=20);
        let phi_t = random_distribution(&mut rng, len);
        let phi_e = vec![1.0 / len as f64; len];
        let u = combine_scores(&phi_t, &phi_e).unwrap();
        if argsort(&u) != argsort(&phi_t) {
            return check(false, format!("trial {trial}: ranking changed under uniform phi_e"));
        }
        if !sums_to_one(&u) || !sums_to_one(&phi_t) {
            return check(false, format!("trial {trial}: probability vector off unit sum"));
        }
    }
    // Through the real scorers: the lexical backend has no structural
    // scorer, so phi_e falls back to uniform.
    let graph = KnowledgeGraph::from_triples((0..12).map(|i| {
        (
            "m.src".to_string(),
            format!("film.film.relation_{}", i % 4),
            format!("m.tail{i}"),
        )
    }));
    let backend = LexicalScorer::from_graph(&graph);
    let candidates = graph.one_hop("m.src", true).unwrap();
    let phi_e = structure_entity_scores("which film relation 2", "m.src", &candidates, None, None, &backend).unwrap();
    let scoredv =
        score_triples(&graph, "which film relation 2", "m.src", &candidates, None, None, &backend).unwrap();
    let phi_t: Vec<f64> = scoredv.iter().map(|s| s.phi_t).collect();
    let u: Vec<f64> = scoredv.iter().map(|s| s.u).collect();
    let uniform = phi_e.iter().all(|&x| (x - 1.0 / candidates.len() as f64).abs() <= SUM_TOL);
    check(
        uniform && argsort(&u) == argsort(&phi_t) && sums_to_one(&u) && sums_to_one(&phi_t) && sums_to_one(&phi_e),
        format!("{TRIALS} random vectors plus lexical scorer run on {} candidates", candidates.len()),
    )
}

fn random_paths(rng: &mut StdRng) -> Vec<PartialReasoningPath> {
    let count = rng.random_range(0..=6);
    (0..count)
        .map(|_| {
            let mut path = PartialReasoningPath::new("m.e0");
            for _ in 0..rng.random_range(0..=4) {
                // A small alphabet makes shared prefixes likely.
                let next = format!("m.e{}", rng.random_range(0..3));
                let rel = format!("d.t.r{}", rng.random_range(0..2));
                path = path.extended(Triple::forward(path.frontier.clone(), rel, next), 0.5);
            }
            path
        })
        .collect()
}

fn prefix_algebra() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED + 2);
    for trial in 0..TRIALS {
        let paths = random_paths(&mut rng);
        let total_len: usize = paths.iter().map(PartialReasoningPath::len).sum();
        let (all, counted) = enumerate_prefixes(&paths, false);
        let (deduped, counted_dedup) = enumerate_prefixes(&paths, true);
        if counted != total_len || counted_dedup != total_len || all.len() != total_len {
            return check(false, format!("trial {trial}: count {counted} vs Σ lengths {total_len}"));
        }
        let distinct: HashSet<&[Triple]> = all.iter().map(|p| p.triples.as_slice()).collect();
        if deduped.len() != distinct.len() {
            return check(false, format!("trial {trial}: dedup kept {} of {}", deduped.len(), distinct.len()));
        }
        let triples: Vec<Triple> = paths.iter().flat_map(|p| p.triples.clone()).collect();
        let graph = KnowledgeGraph::from_triples(triples.iter().map(|t| {
            let (h, r, tl) = t.fact();
            (h.to_string(), r.to_string(), tl.to_string())
        }));
        let backend = LexicalScorer::from_graph(&graph);
        let key = |p: &kgpath_core::Prefix| (p.origin_path, p.k);
        let mut before: Vec<_> = deduped.iter().map(key).collect();
        let packed = repack(&graph, deduped, "which e1 r0", &backend).unwrap();
        let mut after: Vec<_> = packed.iter().map(key).collect();
        before.sort();
        after.sort();
        if before != after {
            return check(false, format!("trial {trial}: repack is not a permutation"));
        }
    }
    // Byte-identical rendering from fixed inputs.
    let p = Pipeline::from_config(&Config::load(&fixture("config.toml")).unwrap()).unwrap();
    let (questions, _) = load_dataset(&fixture("dataset.jsonl")).unwrap();
    let first = p.answer(&questions[0]).unwrap();
    let second = p.answer(&questions[0]).unwrap();
    let lines: Vec<String> = first
        .context
        .ordered_prefixes
        .iter()
        .map(|pr| verbalize_prefix(p.graph(), &pr.triples))
        .collect();
    check(
        first.context.rendered == second.context.rendered && lines == first.context.evidence,
        format!("{TRIALS} random path sets; context rendering repeatable ({} bytes)", first.context.rendered.len()),
    )
}

fn golden_run() -> Outcome {
    let p = Pipeline::from_config(&Config::load(&fixture("config.toml")).unwrap()).unwrap();
    let cfg = p.config().clone();
    if cfg.au_threshold != 1.55 || cfg.l != 4 {
        return check(false, format!("fixture config threshold {} l {}", cfg.au_threshold, cfg.l));
    }
    let (questions, _) = load_dataset(&fixture("dataset.jsonl")).unwrap();
    let mut hits = 0;
    let mut fallbacks = 0;
    let mut refines = 0;
    for q in &questions {
        let a = match p.answer(q) {
            Ok(a) => a,
            Err(e) => return check(false, format!("{} failed: {e}", q.id)),
        };
        if q.answers.first().is_some_and(|g| a.answers.first() == Some(g)) {
            hits += 1;
        }
        for r in &a.trace {
            match r.stage {
                Stage::Fallback => fallbacks += 1,
                Stage::AuGate if r.payload["decision"] == "refine" => refines += 1,
                Stage::TriPrune => {
                    let depth = r.depth.unwrap() as u64;
                    if r.payload["path_length_before"].as_u64() != Some(depth) {
                        return check(false, format!("{}: path length before step != depth {depth}", q.id));
                    }
                    let ext = r.payload["extended_lengths"].as_array().unwrap();
                    if ext.iter().any(|v| v.as_u64() != Some(depth + 1)) {
                        return check(false, format!("{}: extended path length != depth + 1", q.id));
                    }
                }
                _ => {}
            }
        }
        for (chain, run) in a.run.decomposition.chains.iter().zip(&a.run.chains) {
            if run.dead_at.is_none() && run.paths.iter().any(|p| p.len() != chain.depth() || !p.is_chained()) {
                return check(false, format!("{}: completed path breaks length or chaining", q.id));
            }
        }
    }
    check(
        hits == questions.len() && fallbacks >= 1 && refines >= 1,
        format!("hit@1 {hits}/{}; fallback rounds {fallbacks}; refines {refines}", questions.len()),
    )
}

fn error_taxonomy() -> Outcome {
    let p = Pipeline::from_config(&Config::load(&fixture("corrupted.toml")).unwrap()).unwrap();
    let (questions, _) = load_dataset(&fixture("dataset.jsonl")).unwrap();
    let (results, _) = p.evaluate(&questions, 1, Normalization::Strict);
    let labels: BTreeMap<String, ErrorClass> =
        serde_json::from_str(&std::fs::read_to_string(fixture("corrupted_labels.json")).unwrap()).unwrap();
    let got: BTreeMap<String, ErrorClass> = results.iter().map(|r| (r.id.clone(), r.error_class)).collect();
    let mismatched: Vec<&String> = labels.keys().filter(|k| got.get(*k) != labels.get(*k)).collect();
    let count = |c: ErrorClass| got.values().filter(|v| **v == c).count();
    check(
        mismatched.is_empty() && got.len() == labels.len(),
        format!(
            "correct {} / retrieval {} / reasoning {}; mismatched {mismatched:?}",
            count(ErrorClass::Correct),
            count(ErrorClass::RetrievalError),
            count(ErrorClass::ReasoningError)
        ),
    )
}

fn efficiency() -> Outcome {
    let p = Pipeline::from_config(&Config::load(&fixture("config.toml")).unwrap()).unwrap();
    let (questions, _) = load_dataset(&fixture("dataset.jsonl")).unwrap();
    let (results, report) = p.evaluate(&questions, 1, Normalization::Strict);
    let invocations = p.scripted.as_ref().unwrap().invocations();
    let json = serde_json::to_value(&report).unwrap();
    let per_question_calls: u64 = results.iter().map(|r| r.calls).sum();
    check(
        report.total_calls == invocations
            && per_question_calls == invocations
            && json.get("avg_paths").is_some()
            && json.get("avg_context_paths").is_some(),
        format!(
            "#Call {} = invocations {invocations}; #Path {:.2} ({:.2})",
            report.total_calls, report.avg_context_paths, report.avg_paths
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 7] = [
        ("au-oracle", au_oracle, Duration::from_secs(1)),
        ("top-p-oracle", top_p_oracle, Duration::from_secs(5)),
        ("score-combination", score_combination, Duration::from_secs(5)),
        ("prefix-algebra", prefix_algebra, Duration::from_secs(5)),
        ("golden-run", golden_run, Duration::from_secs(30)),
        ("error-taxonomy", error_taxonomy, Duration::from_secs(10)),
        ("efficiency-accounting", efficiency, Duration::from_secs(30)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let started = Instant::now();
        let outcome = run();
        let took = started.elapsed();
        let ok = outcome.ok && took <= budget;
        failed += usize::from(!ok);
        println!(
            "{} {name}: {} [{:.3}s, budget {}s]",
            if ok { "PASS" } else { "FAIL" },
            outcome.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
