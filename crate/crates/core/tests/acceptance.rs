//! Acceptance suite. Prints one PASS/FAIL line per criterion followed by a
//! tally. Exits non-zero on any FAIL only when `ACCEPTANCE_STRICT=1`, so that
//! a failing criterion is reported without hiding the rest of the test run.

use std::collections::BTreeMap;
use std::time::Instant;

use icm_drift::betting::{BettingPreset, CautiousBetting, CautiousConfig};
use icm_drift::conformal::{self, ScoreHistory, TieBreaker};
use icm_drift::density::{EstimatorSpec, PValueHistory};
use icm_drift::ensemble::{self, EnsembleConfig, PipelineStatus, RecordRow, RunRecord};
use icm_drift::eval::{subset_analysis, z_test, AccuracyEstimate};
use icm_drift::experiment::{run_experiment, DatasetSpec, ExperimentSpec, Mode};
use icm_drift::forest::ForestModel;
use icm_drift::martingale::{retrain_anchor, MartingaleConfig, TrajectoryPoint};
use icm_drift::rng::{derive_seed, Purpose};
use icm_drift::stream::{
    generate_sea, generate_stagger, inject_label_noise, stagger_rules, ConceptSchedule, NoiseMode,
    NoiseSpec,
};
use icm_drift::{FeatureSchema, Label, LabeledInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// P-value window used by every experiment below.
const PVALUE_WINDOW: usize = 1000;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("normalization", normalization),
        ("ville calibration", ville_calibration),
        ("p-value uniformity", pvalue_uniformity),
        ("stagger noisy ensemble accuracy", stagger_noisy_ensemble),
        ("stagger clean single accuracy", stagger_clean_single),
        ("sea noisy ensemble accuracy", sea_noisy_ensemble),
        ("betting ordering", betting_ordering),
        ("z-test oracle", z_test_oracle),
        ("subset vote oracle", subset_vote_oracle),
        ("hand trace", hand_trace),
    ];
    let mut passed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        passed += outcome.pass as usize;
        println!(
            "{} {:>2} {name}: {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{passed}/{} criteria passed", criteria.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < criteria.len() {
        std::process::exit(1);
    }
}

/// Integral over [0, 1] of a function that is smooth between `breaks`,
/// using 5-point Gauss-Legendre on each piece (no endpoint evaluations).
fn integrate(f: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
    const NODES: [(f64, f64); 5] = [
        (0.0, 0.568_888_888_888_888_9),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    breaks
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
            half * NODES
                .iter()
                .map(|&(x, wt)| wt * f(mid + half * x))
                .sum::<f64>()
        })
        .sum()
}

fn normalization() -> Outcome {
    let mut worst_quadrature = 0f64;
    let mut worst_closed_form = 0f64;
    let mut checked = BTreeMap::<&str, usize>::new();
    let mut knn_range = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let preset = BettingPreset::ALL[i as usize % 4];
        let epsilon = if i % 8 < 4 {
            1.0
        } else {
            CautiousConfig::DEFAULT_EPSILON
        };
        let config =
            CautiousConfig::new(epsilon, CautiousConfig::DEFAULT_WINDOW, preset.estimators())
                .unwrap();
        let window = if rng.gen_bool(0.5) {
            None
        } else {
            Some(rng.gen_range(1..300))
        };
        let mut state = CautiousBetting::new(config, window).unwrap();
        let n = rng.gen_range(1..=600);
        let skew: f64 = rng.gen_range(0.2..4.0);
        for _ in 0..n {
            state.bet(rng.gen::<f64>().powf(skew)).unwrap();
        }
        let f = state.betting_function();
        let integral = integrate(|x| f.eval(x), &f.breakpoints());
        match f.chosen_estimator() {
            None => {
                *checked.entry("pass").or_default() += 1;
                worst_quadrature = worst_quadrature.max((integral - 1.0).abs());
            }
            Some(EstimatorSpec::Knn { .. }) => {
                *checked.entry("knn").or_default() += 1;
                knn_range = (knn_range.0.min(integral), knn_range.1.max(integral));
            }
            Some(EstimatorSpec::InterpolatedHistogram { .. }) => {
                *checked.entry("ih").or_default() += 1;
                worst_quadrature = worst_quadrature.max((integral - 1.0).abs());
            }
            Some(EstimatorSpec::Histogram { .. }) => {
                *checked.entry("hist").or_default() += 1;
                worst_quadrature = worst_quadrature.max((integral - 1.0).abs());
            }
        }
        let history: &PValueHistory = state.history();
        for kappa in [5, 10, 15] {
            if let Some(h) = history.interpolated_histogram(kappa) {
                worst_closed_form = worst_closed_form.max((h.integral() - 1.0).abs());
            }
        }
    }
    let pass = worst_quadrature <= 1e-6 && worst_closed_form <= 1e-12;
    let knn = if knn_range.0.is_finite() {
        format!(
            ", kNN integrals (not gated) in [{:.3}, {:.3}]",
            knn_range.0, knn_range.1
        )
    } else {
        String::new()
    };
    Outcome {
        pass,
        detail: format!(
            "states {checked:?}; max |quadrature - 1| = {worst_quadrature:.2e}, max |closed form - 1| = {worst_closed_form:.2e}{knn}"
        ),
    }
}

fn noisy(data: Vec<LabeledInstance>, rate: f64, seed: u64) -> Vec<LabeledInstance> {
    let spec = NoiseSpec::with_mode(
        rate,
        derive_seed(seed, Purpose::Noise, 0),
        NoiseMode::Resample,
    )
    .unwrap();
    inject_label_noise(data, spec)
        .collect::<Result<_, _>>()
        .unwrap()
}

fn single_config(preset: BettingPreset, seed: u64) -> EnsembleConfig {
    let mut martingale = MartingaleConfig::new(0.01, 10.0).unwrap();
    martingale.pvalue_window = Some(PVALUE_WINDOW);
    EnsembleConfig::new(&[300], CautiousConfig::preset(preset), martingale, seed).unwrap()
}

fn ville_calibration() -> Outcome {
    let runs = 200u64;
    let mut alarmed = 0;
    for seed in 0..runs {
        let schedule = ConceptSchedule::cycling(1, 10_000).unwrap();
        let data: Vec<_> = generate_stagger(10_000, schedule, seed).unwrap().collect();
        let data = noisy(data, 0.1, seed);
        let record = ensemble::run(
            data.into_iter().map(Ok),
            &FeatureSchema::stagger(),
            &single_config(BettingPreset::Mihnn, seed),
        )
        .unwrap();
        alarmed += !record.alarms.is_empty() as usize;
    }
    let rate = alarmed as f64 / runs as f64;
    Outcome {
        pass: rate <= 0.03,
        detail: format!(
            "{alarmed}/{runs} i.i.d. runs alarmed ({:.1}%, bound 3%)",
            rate * 100.0
        ),
    }
}

/// Kolmogorov-Smirnov statistic against U(0, 1) and its asymptotic p-value.
fn ks_uniform(sample: &mut [f64]) -> (f64, f64) {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let d = sample
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum::<f64>();
    (d, p.clamp(0.0, 1.0))
}

fn pvalue_uniformity() -> Outcome {
    let schema = FeatureSchema::sea();
    let mut passed = 0;
    let mut worst = 1f64;
    for seed in 0..100u64 {
        let schedule = ConceptSchedule::sequential(1, 2_300).unwrap();
        let data: Vec<_> = generate_sea(2_300, schedule, seed).unwrap().collect();
        let data = noisy(data, 0.1, seed);
        let (train, rest) = data.split_at(300);
        let model = ForestModel::train(&schema, train, 40, seed).unwrap();
        let mut scores = ScoreHistory::new();
        let mut ties = TieBreaker::new(seed, 0);
        let mut pvalues: Vec<f64> = rest
            .iter()
            .map(|z| {
                let posterior = model.predict_posterior(&z.features).unwrap();
                scores.push(conformal::score(&posterior, z.label).unwrap());
                scores.pvalue(ties.draw()).unwrap()
            })
            .collect();
        let (_, p) = ks_uniform(&mut pvalues);
        worst = worst.min(p);
        passed += (p >= 0.01) as usize;
    }
    Outcome {
        pass: passed >= 95,
        detail: format!("{passed}/100 runs pass KS at 1% (smallest KS p-value {worst:.4})"),
    }
}

fn accuracies(dataset: DatasetSpec, noise: f64, betting: BettingPreset, mode: Mode) -> Vec<f64> {
    SEEDS
        .iter()
        .map(|&seed| {
            let mut spec = ExperimentSpec::new(dataset.clone());
            spec.noise = noise;
            spec.betting = betting;
            spec.mode = mode;
            spec.seeds = vec![seed];
            spec.pvalue_window = Some(PVALUE_WINDOW);
            run_experiment(&spec).unwrap().runs[0].accuracy
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn accuracy_outcome(runs: &[f64], bound: f64) -> Outcome {
    let m = mean(runs);
    let per_seed: Vec<String> = runs.iter().map(|a| format!("{a:.4}")).collect();
    Outcome {
        pass: m >= bound,
        detail: format!(
            "mean {m:.4} (bound {bound}), per seed [{}]",
            per_seed.join(", ")
        ),
    }
}

thread_local! {
    static STAGGER_MIHNN: std::cell::OnceCell<Vec<f64>> = const { std::cell::OnceCell::new() };
}

fn stagger_noisy(preset: BettingPreset) -> Vec<f64> {
    let run = || accuracies(DatasetSpec::Stagger, 0.1, preset, Mode::Ensemble);
    if preset == BettingPreset::Mihnn {
        STAGGER_MIHNN.with(|cell| cell.get_or_init(run).clone())
    } else {
        run()
    }
}

fn stagger_noisy_ensemble() -> Outcome {
    accuracy_outcome(&stagger_noisy(BettingPreset::Mihnn), 0.94)
}

fn stagger_clean_single() -> Outcome {
    accuracy_outcome(
        &accuracies(
            DatasetSpec::Stagger,
            0.0,
            BettingPreset::Mihnn,
            Mode::Single,
        ),
        0.995,
    )
}

fn sea_noisy_ensemble() -> Outcome {
    accuracy_outcome(
        &accuracies(DatasetSpec::Sea, 0.1, BettingPreset::Mihnn, Mode::Ensemble),
        0.90,
    )
}

fn betting_ordering() -> Outcome {
    let mihnn = mean(&stagger_noisy(BettingPreset::Mihnn));
    let mih = mean(&stagger_noisy(BettingPreset::Mih));
    let ih = mean(&stagger_noisy(BettingPreset::Ih));
    Outcome {
        pass: mihnn >= mih && mihnn >= ih,
        detail: format!("mean accuracy MIHNN {mihnn:.4}, MIH {mih:.4}, IH {ih:.4}"),
    }
}

fn z_test_oracle() -> Outcome {
    let a = AccuracyEstimate::new(0.9, 1, 1000.0).unwrap();
    let b = AccuracyEstimate::new(0.8, 1, 1000.0).unwrap();
    let r = z_test(&a, &b, -1.0).unwrap();
    Outcome {
        pass: (r.z - 4.5175).abs() <= 1e-3 && r.rejected,
        detail: format!("z = {:.4}, rejected = {}", r.z, r.rejected),
    }
}

/// Majority label written out independently of the library's vote.
fn oracle_vote(votes: &[(Label, f64)]) -> Option<Label> {
    let mut best: Option<(Label, usize, f64)> = None;
    for label in 0..3 {
        let confs: Vec<f64> = votes.iter().filter(|v| v.0 == label).map(|v| v.1).collect();
        if confs.is_empty() {
            continue;
        }
        let (count, m) = (confs.len(), mean(&confs));
        let wins = match best {
            None => true,
            Some((_, c, bm)) => count > c || (count == c && m > bm),
        };
        if wins {
            best = Some((label, count, m));
        }
    }
    best.map(|b| b.0)
}

fn subset_vote_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut record = RunRecord::new(vec![4, 7, 9], 9);
    for t in 0..500u64 {
        let predictions: Vec<Option<(Label, f64)>> = (0..3)
            .map(|_| {
                rng.gen_bool(0.8).then(|| {
                    (
                        rng.gen_range(0..3),
                        [0.4, 0.6, 0.8, 1.0][rng.gen_range(0..4)],
                    )
                })
            })
            .collect();
        let all: Vec<(Label, f64)> = predictions.iter().flatten().copied().collect();
        record.rows.push(RecordRow {
            timestamp: t,
            label: rng.gen_range(0..3),
            ensemble: oracle_vote(&all),
            predictions,
            alarmed: vec![false; 3],
        });
    }
    let results = subset_analysis(&record, &[]).unwrap();
    let mut mismatches = 0;
    for mask in 1u64..8 {
        let (mut correct, mut available) = (0u64, 0u64);
        for row in &record.rows {
            let votes: Vec<(Label, f64)> = (0..3)
                .filter(|i| mask >> i & 1 == 1)
                .filter_map(|i| row.predictions[i])
                .collect();
            if let Some(label) = oracle_vote(&votes) {
                available += 1;
                correct += (label == row.label) as u64;
            }
        }
        let found = results.iter().find(|r| r.mask == mask);
        let agrees = found.is_some_and(|r| {
            r.correct == correct
                && r.available == available
                && r.unavailable == record.rows.len() as u64 - available
                && r.accuracy == (available > 0).then(|| correct as f64 / available as f64)
        });
        mismatches += !agrees as usize;
    }
    Outcome {
        pass: results.len() == 7 && mismatches == 0,
        detail: format!(
            "{} subsets, {mismatches} disagree with the exhaustive re-vote",
            results.len()
        ),
    }
}

/// Expected per-step state of the hand trace: `(t, voted, S after the step,
/// scores held, status)`.
const TRACE: [(u64, bool, f64, usize, PipelineStatus); 12] = [
    (1, false, 1.0, 0, PipelineStatus::AwaitingTraining),
    (2, false, 1.0, 0, PipelineStatus::AwaitingTraining),
    (3, false, 1.0, 0, PipelineStatus::Active),
    (4, true, 1.0, 1, PipelineStatus::Active),
    (5, true, 1.0, 2, PipelineStatus::Active),
    (6, true, 1.0, 3, PipelineStatus::Active),
    (7, true, 13.256, 4, PipelineStatus::Active),
    (8, true, 19.653, 5, PipelineStatus::Active),
    (9, true, 70.427, 6, PipelineStatus::Active),
    (10, true, 1.0, 0, PipelineStatus::Active),
    (11, true, 1.0, 1, PipelineStatus::Active),
    (12, true, 1.0, 2, PipelineStatus::Active),
];
const TRACE_SEED: u64 = 116;
const TRACE_STREAM_SEED: u64 = 18;

fn hand_trace() -> Outcome {
    let mut problems: Vec<String> = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            problems.push(what);
        }
    };
    let schema = FeatureSchema::stagger();
    let rule = &stagger_rules()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(TRACE_STREAM_SEED);
    let zs: Vec<LabeledInstance> = (1..=12u64)
        .map(|t| {
            let f: Vec<f64> = (0..3).map(|_| rng.gen_range(0..3) as f64).collect();
            let y = rule.eval(&f) ^ (t >= 6);
            LabeledInstance::new(t, f, y as Label)
        })
        .collect();
    let estimators = vec![EstimatorSpec::Knn { k: 2 }];
    let betting = CautiousConfig::new(1.0, CautiousConfig::DEFAULT_WINDOW, estimators).unwrap();
    let mut martingale = MartingaleConfig::new(0.01, 10.0).unwrap();
    martingale.pvalue_window = Some(3);
    let mut config = EnsembleConfig::new(&[3], betting.clone(), martingale, TRACE_SEED).unwrap();
    config.tree_count = 5;
    let id = config.pipelines[0].id;
    let mut det = ensemble::Ensemble::new(&schema, config).unwrap();

    // Independent replay of the same pipeline from the public components.
    let model_seed =
        |count: u64| derive_seed(TRACE_SEED, Purpose::Retrain, (id as u64) << 32 | count);
    let mut model = ForestModel::train(&schema, &zs[0..3], 5, model_seed(0)).unwrap();
    let mut scores: Vec<f64> = Vec::new();
    let mut ties = TieBreaker::new(TRACE_SEED, id as u64);
    let mut replay = CautiousBetting::new(betting.clone(), Some(3)).unwrap();
    let mut log_s = 0.0;
    let mut trajectory: Vec<TrajectoryPoint> = Vec::new();
    let mut alarm_seen = None;

    for (z, &(t, voted, s_after, held, status)) in zs.iter().zip(TRACE.iter()) {
        let result = det.step(z).unwrap();
        let p = &det.pipelines()[0];
        check(z.timestamp == t, format!("t={t}: timestamp"));
        check(
            result.votes.is_empty() != voted,
            format!("t={t}: vote availability"),
        );
        check(
            (p.martingale().value() - s_after).abs() < 1e-3,
            format!("t={t}: S = {}", p.martingale().value()),
        );
        check(
            p.scores().len() == held,
            format!("t={t}: {} scores held", p.scores().len()),
        );
        check(
            p.status() == status,
            format!("t={t}: status {:?}", p.status()),
        );
        if t < 4 {
            continue;
        }
        let posterior = model.predict_posterior(&z.features).unwrap();
        check(
            result.votes.first().map(|v| v.label) == Some(posterior.argmax()),
            format!("t={t}: predicted label"),
        );
        scores.push(conformal::score(&posterior, z.label).unwrap());
        let pvalue = conformal::pvalue(&scores, ties.draw()).unwrap();
        let bet = replay.bet(pvalue).unwrap();
        log_s += bet.value.ln();
        trajectory.push(TrajectoryPoint {
            timestamp: t,
            log_s,
        });
        let trace = p.last_trace().unwrap();
        check(
            (trace.pvalue - pvalue).abs() < 1e-12,
            format!("t={t}: p-value"),
        );
        check(
            (trace.bet.value - bet.value).abs() < 1e-9,
            format!("t={t}: bet"),
        );
        if log_s > (100f64).ln() {
            let anchor = retrain_anchor(&trajectory, 10.0);
            alarm_seen = Some((t, anchor, log_s.exp()));
            check(result.alarms.len() == 1, format!("t={t}: alarm expected"));
            check(
                result.alarms.first().map(|a| (a.event.at, a.event.anchor))
                    == anchor.map(|d| (t, d)),
                format!("t={t}: alarm anchor"),
            );
            let d = anchor.unwrap_or(t) as usize;
            let window = &zs[d - 1..d - 1 + 3];
            let expected = ForestModel::train(&schema, window, 5, model_seed(1)).unwrap();
            let retrained = result.retrained.first().map(|r| (r.at, r.start, r.len));
            check(
                retrained == Some((t, d as u64, 3)),
                format!("t={t}: retrain event {retrained:?}"),
            );
            check(
                p.training_window() == Some((d as u64, 3)),
                format!("t={t}: training window"),
            );
            check(
                p.model().map(|m| m.to_json().unwrap()) == Some(expected.to_json().unwrap()),
                format!("t={t}: retrained model"),
            );
            check(
                p.betting().history().is_empty(),
                format!("t={t}: p-value history cleared"),
            );
            check(
                p.betting().shadows().log_values().iter().all(|&v| v == 0.0),
                format!("t={t}: shadows reset"),
            );
            model = expected;
            scores.clear();
            replay = CautiousBetting::new(betting.clone(), Some(3)).unwrap();
            log_s = 0.0;
            trajectory.clear();
        } else {
            check(result.alarms.is_empty(), format!("t={t}: unexpected alarm"));
            check(
                (log_s.exp() - p.martingale().value()).abs() < 1e-9,
                format!("t={t}: S replay"),
            );
        }
    }
    check(
        alarm_seen.map(|(t, d, _)| (t, d)) == Some((10, Some(7))),
        format!("alarm {alarm_seen:?}"),
    );
    let s_alarm = alarm_seen.map_or(f64::NAN, |a| a.2);
    Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("alarm at t=10 (S = {s_alarm:.2}) anchored at d=7, retrained on z7..z9, 12 steps match")
        } else {
            problems.join("; ")
        },
    }
}
