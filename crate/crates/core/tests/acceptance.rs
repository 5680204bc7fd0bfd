//! Acceptance checks. Runs without the libtest harness so each criterion
//! prints exactly one PASS or FAIL line; exits non-zero if any fails.

mod common;

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use scoregap::annotate::{run_batch, BatchOptions, LexiconProvider, NoisyLexiconProvider, RetryPolicy, RunSet};
use scoregap::calibration::{calibrated_bias, fit_calibration};
use scoregap::divergence::{classify_divergence, divergence_incidence, DivergenceLabel, DivergenceThresholds};
use scoregap::metrics::{alignment, margin_of_error, pearson, pool_summaries, spearman, SummaryRow};
use scoregap::model::ScoreBand;
use scoregap::pipeline::{run_pipeline, PipelineConfig};
use scoregap::simulator::{records, sample_corpus, SimParams, SimulatedSession};
use scoregap::stability::{run_distribution_tvd, stability};
use scoregap::{Aspect, EvaluationPair, SessionRecord};

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn options() -> BatchOptions {
    BatchOptions { retry: RetryPolicy::immediate(), concurrency: 4 }
}

fn lexicon_run(recs: &[SessionRecord], id: &str) -> RunSet {
    run_batch(&LexiconProvider::new(), recs, id, &options(), None).expect("lexicon run")
}

fn corpus(seed: u64) -> Vec<SimulatedSession> {
    sample_corpus(&SimParams { seed, ..SimParams::default() }).expect("default corpus")
}

// 1
fn cross_table_consistency() -> Check {
    let start = Instant::now();
    let pooled = pool_summaries(&score_level_summaries()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let detail = format!(
        "n={} exact={:.2}% mae={:.3} bias={:.3} in {elapsed:?}",
        pooled.n,
        100.0 * pooled.exact,
        pooled.mae,
        pooled.bias
    );
    ensure(
        (100.0 * pooled.exact - 36.4).abs() <= 0.1
            && (pooled.mae - 1.29).abs() <= 0.01
            && (pooled.bias + 0.96).abs() <= 0.01
            && elapsed < Duration::from_secs(1),
        detail,
    )
}

// 2
fn margin_of_error_reproduction() -> Check {
    let moe = margin_of_error(0.675, 10_428).map_err(|e| e.to_string())?;
    ensure((moe - 0.90).abs() <= 0.01, format!("moe={moe:.4} pp"))
}

// 3
fn oracle_equivalence() -> Check {
    const TOL: f64 = 1e-12;
    let mut r = rng(3);
    let mut checked = 0;
    for case in 0..1000 {
        let v = random_values(&mut r, 1, 8);
        let pairs = pairs_from(&v);
        let got = alignment(&pairs).map_err(|e| e.to_string())?;
        let want = oracle_alignment(&v);
        for (name, a, b) in [
            ("exact", got.exact_rate, want.exact),
            ("within_1", got.within_1_rate, want.within_1),
            ("mae", got.mae, want.mae),
            ("bias", got.bias, want.bias),
        ] {
            if !close(a, b, TOL) {
                return Err(format!("case {case} {name}: {a} vs oracle {b} on {v:?}"));
            }
        }
        let x: Vec<f64> = v.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = v.iter().map(|p| f64::from(p.1)).collect();
        for (name, a, b) in [
            ("pearson", pearson(&x, &y).ok(), oracle_pearson(&x, &y)),
            ("spearman", spearman(&x, &y).ok(), oracle_spearman(&x, &y)),
        ] {
            match (a, b) {
                (Some(a), Some(b)) if close(a, b, TOL) => {}
                (None, None) => {}
                _ => return Err(format!("case {case} {name}: {a:?} vs oracle {b:?} on {v:?}")),
            }
        }
        let ra = RunSet::from_predictions("a", v.iter().enumerate().map(|(i, p)| (format!("s{i}"), Some(p.0))));
        let rb = RunSet::from_predictions("b", v.iter().enumerate().map(|(i, p)| (format!("s{i}"), Some(p.1))));
        let a = run_distribution_tvd(&ra, &rb).map_err(|e| e.to_string())?;
        let pa: Vec<u8> = v.iter().map(|p| p.0).collect();
        let pb: Vec<u8> = v.iter().map(|p| p.1).collect();
        let b = oracle_tvd(&pa, &pb);
        if !close(a, b, TOL) {
            return Err(format!("case {case} tvd: {a} vs oracle {b}"));
        }
        checked += 1;
    }
    Ok(format!("{checked} random sets of size <= 8 agree within {TOL:e}"))
}

// 4
fn partition_identity() -> Check {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let v = random_values(&mut r, 1, 200);
        let pairs = pairs_from(&v);
        // random partition: each pair assigned to one of k strata
        let k = rand::Rng::random_range(&mut r, 1..=6);
        let mut parts: Vec<Vec<EvaluationPair>> = vec![Vec::new(); k];
        for p in &pairs {
            parts[rand::Rng::random_range(&mut r, 0..k)].push(p.clone());
        }
        let rows: Vec<SummaryRow> = parts
            .iter()
            .filter(|p| !p.is_empty())
            .map(|p| SummaryRow::from(&alignment(p).unwrap()))
            .collect();
        let pooled = pool_summaries(&rows).map_err(|e| e.to_string())?;
        let whole = SummaryRow::from(&alignment(&pairs).unwrap());
        for (a, b) in [
            (pooled.exact, whole.exact),
            (pooled.within_1, whole.within_1),
            (pooled.mae, whole.mae),
            (pooled.bias, whole.bias),
        ] {
            worst = worst.max((a - b).abs());
            if !close(a, b, 1e-12) || pooled.n != whole.n {
                return Err(format!("case {case}: pooled {pooled:?} vs whole {whole:?}"));
            }
        }
    }
    Ok(format!("200 datasets, largest difference {worst:e}"))
}

// 5
fn divergence_fixture() -> Check {
    use DivergenceLabel::*;
    let t = DivergenceThresholds::default();
    // (actual, predicted, grouping)
    let rows = [
        (10, 3, FragileSatisfaction),
        (10, 3, FragileSatisfaction),
        (10, 4, FragileSatisfaction),
        (10, 5, FragileSatisfaction),
        (9, 1, TextDominatedFriction),
        (9, 2, TextDominatedFriction),
        (9, 2, TextDominatedFriction),
        (1, 9, ReverseDivergence),
        (1, 7, ReverseDivergence),
        (10, 10, CleanAlignment),
        (10, 10, CleanAlignment),
        (1, 2, CleanAlignment),
        (10, 10, CleanAlignment),
    ];
    for (a, p, want) in rows {
        let got = classify_divergence(&pair(p, a), &t);
        if got != want {
            return Err(format!("actual {a} predicted {p}: {got} but grouped as {want}"));
        }
    }
    // the documented exception: grouped as fragile by content
    let exception = classify_divergence(&pair(2, 10), &t);
    if exception != TextDominatedFriction {
        return Err(format!("10 -> 2 exception now classifies as {exception}"));
    }
    let mut r = rng(5);
    for case in 0..100 {
        let pairs = pairs_from(&random_values(&mut r, 1, 300));
        let inc = divergence_incidence(&pairs, &t).map_err(|e| e.to_string())?;
        let within = alignment(&pairs).unwrap().within_1_rate;
        let clean = inc.labels[&CleanAlignment].share;
        if clean != within {
            return Err(format!("case {case}: clean share {clean} vs within-1 {within}"));
        }
    }
    Ok(format!("{} fixture rows plus 10->2 exception; clean share = within-1 on 100 sets", rows.len()))
}

// 6
fn calibration() -> Check {
    let mut r = rng(6);
    let mut worst_in_sample: f64 = 0.0;
    for case in 0..500 {
        let pairs = pairs_from(&random_values(&mut r, 1, 400));
        let map = fit_calibration(&pairs).map_err(|e| e.to_string())?;
        if !map.is_monotone() {
            return Err(format!("case {case}: non-monotone map {:?}", map.expected));
        }
        let b = calibrated_bias(&pairs, &map).map_err(|e| e.to_string())?;
        worst_in_sample = worst_in_sample.max(b.abs());
    }
    if worst_in_sample > 0.05 {
        return Err(format!("in-sample calibrated bias reached {worst_in_sample}"));
    }
    let mut held_out = Vec::new();
    for seed in 1..=5u64 {
        let recs = records(&corpus(seed));
        let run = lexicon_run(&recs, "run_1");
        let pairs = run.pairs(&recs);
        // even-indexed sessions train, odd ones test
        let (train, test): (Vec<_>, Vec<_>) = pairs.iter().cloned().enumerate().partition(|(i, _)| i % 2 == 0);
        let train: Vec<_> = train.into_iter().map(|(_, p)| p).collect();
        let test: Vec<_> = test.into_iter().map(|(_, p)| p).collect();
        let map = fit_calibration(&train).map_err(|e| e.to_string())?;
        let raw = alignment(&test).unwrap().bias;
        let cal = calibrated_bias(&test, &map).unwrap();
        if cal.abs() >= raw.abs() {
            return Err(format!("seed {seed}: held-out calibrated bias {cal:.3} vs raw {raw:.3}"));
        }
        held_out.push(format!("{raw:.2}->{cal:.3}"));
    }
    Ok(format!(
        "500 monotone maps, max |in-sample bias| {worst_in_sample:.1e}; held-out raw->calibrated {}",
        held_out.join(" ")
    ))
}

// 7
fn stability_construct() -> Check {
    let recs = records(&sample_corpus(&SimParams { corpus_size: 2000, ..SimParams::default() }).unwrap());
    let det: Vec<RunSet> = (1..=3).map(|i| lexicon_run(&recs, &format!("run_{i}"))).collect();
    let s = stability(&det).map_err(|e| e.to_string())?;
    if s.all_identical_rate != 1.0 || s.pairwise_tvd != 0.0 {
        return Err(format!("deterministic runs: identical {} tvd {}", s.all_identical_rate, s.pairwise_tvd));
    }
    let temps = [0.2, 0.5, 1.0];
    let mut lines = Vec::new();
    for mc in 0..3u64 {
        let mut rates = Vec::new();
        for &t in &temps {
            let runs: Vec<RunSet> = (0..3u64)
                .map(|i| {
                    let p = NoisyLexiconProvider::new(t, 1000 * mc + 10 * i + 1);
                    run_batch(&p, &recs, &format!("run_{i}"), &options(), None).unwrap()
                })
                .collect();
            rates.push(stability(&runs).map_err(|e| e.to_string())?.all_identical_rate);
        }
        if !rates.windows(2).all(|w| w[0] > w[1]) {
            return Err(format!("seed {mc}: all-identical rates {rates:?} not strictly decreasing"));
        }
        lines.push(format!("{:.3}/{:.3}/{:.3}", rates[0], rates[1], rates[2]));
    }
    Ok(format!("deterministic identical=1 tvd=0; noisy t=0.2/0.5/1.0: {}", lines.join(", ")))
}

// 8
fn simulator_marginals() -> Check {
    let c = corpus(SimParams::default().seed);
    let n = c.len() as f64;
    let ratings: Vec<u8> = c.iter().map(|s| s.record.overall_rating.value()).collect();
    let mean = ratings.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let top = ratings.iter().filter(|&&v| v >= 9).count() as f64 / n;
    let low = ratings.iter().filter(|&&v| v <= 2).count() as f64 / n;
    ensure(
        c.len() == 10_000 && (mean - 7.68).abs() <= 0.15 && (top - 0.49).abs() <= 0.03 && (low - 0.07).abs() <= 0.02,
        format!("n={} mean={mean:.3} share 9-10={top:.3} share 0-2={low:.3}", c.len()),
    )
}

// 9
fn construct_gap(dir: &Path) -> Check {
    let start = Instant::now();
    let config = PipelineConfig { runs: 1, out: dir.to_path_buf(), ..PipelineConfig::default() };
    let outcome = run_pipeline(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let b = &outcome.bundle;
    let bias = b.primary().alignment.as_ref().ok_or("no alignment")?.bias;

    let band_bias: Vec<(ScoreBand, f64)> = b.bands.iter().map(|(k, v)| (*k, v.bias)).collect();
    let most_negative = band_bias
        .iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|x| x.0)
        .ok_or("no bands")?;

    let r_actual = b.correlations.predicted_vs_overall.map_err(|e| format!("{e:?}"))?;
    let mut r_aspect_max = f64::NEG_INFINITY;
    let mut delta_max: f64 = 0.0;
    for a in &b.correlations.aspects {
        if let Ok(r) = a.with_predicted {
            r_aspect_max = r_aspect_max.max(r);
        }
        if let Ok(r) = a.with_delta {
            delta_max = delta_max.max(r.abs());
        }
    }
    let covered = b.correlations.aspects.iter().filter(|a| a.with_delta.is_ok()).count();

    // latent constructs, joined by session id
    let corpus = corpus(config.seed);
    let latent: HashMap<&str, &SimulatedSession> = corpus.iter().map(|s| (s.record.session_id.as_str(), s)).collect();
    let run = scoregap::pipeline::read_run(&dir.join("runs/run_1.jsonl")).map_err(|e| e.to_string())?;
    let (mut pred, mut sal, mut ver) = (Vec::new(), Vec::new(), Vec::new());
    for (id, r) in run.predictions() {
        let s = latent[id];
        pred.push(r.as_f64());
        sal.push(s.latent_salience);
        ver.push(s.latent_verdict.as_f64());
    }
    let r_sal = pearson(&pred, &sal).map_err(|e| format!("{e:?}"))?;
    let r_ver = pearson(&pred, &ver).map_err(|e| format!("{e:?}"))?;

    let detail = format!(
        "bias={bias:.2}; most negative band {most_negative:?}; r(pred,actual)={r_actual:.2} > max r(pred,aspect)={r_aspect_max:.2}; \
         max |r(delta,aspect)|={delta_max:.3} over {covered} aspects; r(pred,salience)={r_sal:.2} > r(pred,verdict)={r_ver:.2}; {elapsed:.1?}"
    );
    ensure(
        bias < 0.0
            && most_negative == ScoreBand::High
            && r_actual > r_aspect_max
            && covered == Aspect::ALL.len()
            && delta_max <= 0.15
            && r_sal > r_ver
            && elapsed < Duration::from_secs(60),
        detail,
    )
}

fn report_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["reports", "plotdata", "artifacts"] {
        let mut entries: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap()));
        }
    }
    out.push(("bundle.json".into(), fs::read(dir.join("bundle.json")).unwrap()));
    out
}

// 10
fn determinism(root: &Path) -> Check {
    let run = |name: &str| {
        let config = PipelineConfig { sim_size: 2000, runs: 2, out: root.join(name), ..PipelineConfig::default() };
        run_pipeline(&config).map(|_| report_files(&root.join(name))).map_err(|e| e.to_string())
    };
    let a = run("first")?;
    let b = run("second")?;
    let differing: Vec<_> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.clone()).collect();
    ensure(
        a.len() == b.len() && differing.is_empty(),
        format!("{} files compared, differing: {differing:?}", a.len()),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        ("cross-table consistency", Box::new(cross_table_consistency)),
        ("margin of error", Box::new(margin_of_error_reproduction)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("partition identity", Box::new(partition_identity)),
        ("divergence fixture", Box::new(divergence_fixture)),
        ("calibration", Box::new(calibration)),
        ("stability", Box::new(stability_construct)),
        ("simulator marginals", Box::new(simulator_marginals)),
        ("construct gap", Box::new(|| construct_gap(&tmp.path().join("gap")))),
        ("end-to-end determinism", Box::new(|| determinism(tmp.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
