//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use gabc::ablation::row;
use gabc::data::generate;
use gabc::experiment::MeanStd;
use gabc::gates::{batch_gates, combined_gate, cunr_gate, pairwise_label_similarity, pdep_gate, GateThresholds};
use gabc::model::PredictionDistribution;
use gabc::objectives::{abc_pair_loss, adbc_loss, sharpen, wdbc_loss, LabeledPreds, PairTerms, SharpeningTemp};
use gabc::trainer::{lr_schedule, run, EpochRecord, TrainOutcome};
use gabc::TrainConfig;
use rand::Rng;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn gradient_correctness() -> Outcome {
    let instances = 24;
    let mut worst = [0.0f64; common::COMPONENTS.len()];
    let mut weakest = [f64::INFINITY; common::COMPONENTS.len()];
    for seed in 0..instances {
        let inst = common::random_instance(1000 + seed);
        for (c, (_, err, norm)) in common::gradient_errors(&inst, 1e-5).into_iter().enumerate() {
            worst[c] = worst[c].max(err);
            weakest[c] = weakest[c].min(norm);
        }
    }
    let passed = worst.iter().all(|&e| e < 1e-4) && weakest.iter().all(|&n| n > 0.0);
    let detail = common::COMPONENTS
        .iter()
        .zip(worst)
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        name: "gradient correctness",
        passed,
        detail: format!("{instances} instances, max relative error: {detail} (tol 1e-4)"),
    }
}

fn gate_oracle() -> Outcome {
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
    let dist = |a: f64| PredictionDistribution::new(vec![a, 1.0 - a]).unwrap();
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    let mut similar_seen = [false; 2];
    for tau in [0.5, 0.95] {
        for kappa in [0.2, 0.5] {
            let t = GateThresholds { tau, kappa };
            for &a in &grid {
                let p_i = dist(a);
                for &b in &grid {
                    let p_j = dist(b);
                    for y in 0..2 {
                        let (similar, node, edge, combined) = common::reference_gates(p_i.probs(), p_j.probs(), y, t);
                        similar_seen[usize::from(similar)] = true;
                        let s = pairwise_label_similarity(&p_i, y).unwrap();
                        let n = cunr_gate(&p_i, tau);
                        let e = pdep_gate(s, &p_i, &p_j, kappa).unwrap();
                        let g = batch_gates(std::slice::from_ref(&p_i), std::slice::from_ref(&p_j), &[y], t)
                            .unwrap()
                            .get(0, 0);
                        let ok = (s, n, e, combined_gate(n, e)) == (similar, node, edge, combined)
                            && (g.similar, g.node_kept, g.edge_kept, g.combined) == (similar, node, edge, combined);
                        checked += 1;
                        mismatches += usize::from(!ok);
                    }
                }
            }
        }
    }
    Outcome {
        name: "gate oracle",
        passed: mismatches == 0 && similar_seen == [true, true],
        detail: format!("{checked} cases, {mismatches} mismatches"),
    }
}

fn batched_loss_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let mut nonzero = 0;
    for seed in 0..100u64 {
        let mut r = common::rng(seed);
        let k = r.random_range(2..=5);
        let sharp = r.random_range(0.5..6.0);
        let draw = |n: usize, r: &mut rand_chacha::ChaCha8Rng| {
            (0..n).map(|_| common::random_distribution(r, k, sharp)).collect::<Vec<_>>()
        };
        let nu = r.random_range(1..=12);
        let clean = draw(nu, &mut r);
        let aug = draw(nu, &mut r);
        let nl = r.random_range(1..=8);
        let np = r.random_range(0..=8);
        let ns = r.random_range(1..=10);
        let lab = draw(nl, &mut r);
        let ps = draw(np, &mut r);
        let src = draw(ns, &mut r);
        let mut labels = |n: usize| (0..n).map(|_| r.random_range(0..k)).collect::<Vec<_>>();
        let (yl, yp, ys) = (labels(nl), labels(np), labels(ns));
        let t = GateThresholds {
            tau: [0.3, 0.5, 0.95][seed as usize % 3],
            kappa: [0.0, 0.2, 0.5][seed as usize / 3 % 3],
        };
        let w = wdbc_loss(
            &clean,
            &aug,
            LabeledPreds::new(&lab, &yl),
            LabeledPreds::new(&ps, &yp),
            t,
            PairTerms::default(),
        )
        .unwrap();
        let a = adbc_loss(&clean, &aug, LabeledPreds::new(&src, &ys), t, PairTerms::default()).unwrap();
        let pool: Vec<_> = lab.iter().chain(&ps).cloned().collect();
        let pool_y: Vec<_> = yl.iter().chain(&yp).copied().collect();
        let w_ref = common::naive_clustering_loss(&clean, &aug, &pool, &pool_y, t);
        let a_ref = common::naive_clustering_loss(&clean, &aug, &src, &ys, t);
        worst = worst.max((w - w_ref).abs()).max((a - a_ref).abs());
        nonzero += usize::from(w_ref > 0.0) + usize::from(a_ref > 0.0);
    }
    Outcome {
        name: "batched-loss equivalence",
        passed: worst <= 1e-10 && nonzero > 0,
        detail: format!("100 batches, max |batched - naive| = {worst:.1e} ({nonzero}/200 nonzero)"),
    }
}

fn closed_form() -> Outcome {
    // independent re-derivations
    let (a, b) = (0.6f64.powf(1.0 / 0.85), 0.4f64.powf(1.0 / 0.85));
    let sharp_oracle = [a / (a + b), b / (a + b)];
    let pi_oracle = -(0.7f64 * 0.6 + 0.3 * 0.4).ln();
    let lr_oracle = 0.01 * 2f64.powf(-0.75);

    let d = |v: &[f64]| PredictionDistribution::new(v.to_vec()).unwrap();
    let s = sharpen(&d(&[0.6, 0.4]), SharpeningTemp::new(0.85).unwrap());
    let pi = abc_pair_loss(&d(&[0.7, 0.3]), &d(&[0.6, 0.4]), true);
    let lr = lr_schedule(0.01, 10_000);

    let checks = [
        (s.probs()[0] - 0.6170).abs() <= 1e-3 && (s.probs()[1] - 0.3830).abs() <= 1e-3,
        (s.probs()[0] - sharp_oracle[0]).abs() < 1e-12,
        (pi - 0.54f64.ln().abs()).abs() <= 1e-6 && (pi - pi_oracle).abs() < 1e-12,
        (lr - lr_oracle).abs() <= 1e-9,
    ];
    Outcome {
        name: "closed-form spot checks",
        passed: checks.iter().all(|&c| c),
        detail: format!(
            "sharpen = [{:.4}, {:.4}], pi = {pi:.9} (-ln 0.54 = {:.9}), lr = {lr:.12}",
            s.probs()[0],
            s.probs()[1],
            -(0.54f64.ln())
        ),
    }
}

struct Grid {
    /// (row id, per-seed outcomes)
    rows: Vec<(usize, Vec<TrainOutcome>)>,
    seconds: f64,
}

const SEEDS: [u64; 3] = [0, 1, 2];
const GRID_ROWS: [usize; 6] = [1, 11, 12, 14, 15, 16];

fn run_grid() -> Grid {
    let start = Instant::now();
    let rows = GRID_ROWS
        .iter()
        .map(|&id| {
            let flags = row(id).unwrap().flags;
            let outs = SEEDS
                .iter()
                .map(|&seed| {
                    let pools = generate(&Default::default(), seed).unwrap();
                    let config = TrainConfig {
                        seed,
                        ..TrainConfig::default()
                    };
                    run(&config, &flags, &pools).unwrap()
                })
                .collect();
            (id, outs)
        })
        .collect();
    Grid {
        rows,
        seconds: start.elapsed().as_secs_f64(),
    }
}

impl Grid {
    fn accuracies(&self, id: usize) -> Vec<f64> {
        let (_, outs) = self.rows.iter().find(|(r, _)| *r == id).unwrap();
        outs.iter().map(|o| o.log.last().unwrap().target_accuracy).collect()
    }

    fn logs(&self, id: usize) -> Vec<&[EpochRecord]> {
        let (_, outs) = self.rows.iter().find(|(r, _)| *r == id).unwrap();
        outs.iter().map(|o| o.log.as_slice()).collect()
    }
}

fn desk_scale(grid: &Grid) -> Outcome {
    let full = MeanStd::of(&grid.accuracies(11));
    let base = MeanStd::of(&grid.accuracies(1));
    let gap = full.mean - base.mean;
    Outcome {
        name: "desk-scale adaptation",
        passed: gap >= 0.05 && grid.seconds < 600.0,
        detail: format!(
            "full {full} vs S+T {base}, gap {:+.2} points (need >= 5), grid of {} runs in {:.0} s",
            100.0 * gap,
            GRID_ROWS.len() * SEEDS.len(),
            grid.seconds
        ),
    }
}

fn trends(grid: &Grid) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (seed, log) in SEEDS.iter().zip(grid.logs(11)) {
        let first = log.iter().find(|r| r.epoch == 1).unwrap();
        let last = log.last().unwrap();
        let (c1, cl) = (first.css.as_ref().unwrap(), last.css.as_ref().unwrap());
        let node_up = last.gates.node_kept > first.gates.node_kept;
        let diag_up = cl.mean_diagonal() > c1.mean_diagonal();
        let off_not_up = cl.mean_off_diagonal() <= c1.mean_off_diagonal();
        ok &= node_up && diag_up && off_not_up;
        parts.push(format!(
            "seed {seed}: g_i {:.2}->{:.2}, diag {:.3}->{:.3}, off {:.3}->{:.3}",
            first.gates.node_kept,
            last.gates.node_kept,
            c1.mean_diagonal(),
            cl.mean_diagonal(),
            c1.mean_off_diagonal(),
            cl.mean_off_diagonal()
        ));
    }
    Outcome {
        name: "trend reproduction",
        passed: ok,
        detail: parts.join("; "),
    }
}

fn ablation_direction(grid: &Grid) -> Outcome {
    let full = grid.accuracies(11);
    let full_mean = MeanStd::of(&full).mean;
    let mut hard_fail = false;
    let mut parts = Vec::new();
    for id in [12, 14, 15, 16] {
        let variant = grid.accuracies(id);
        let diffs: Vec<f64> = full.iter().zip(&variant).map(|(f, v)| f - v).collect();
        let d = MeanStd::of(&diffs);
        let verdict = if d.mean >= 0.0 {
            "ok"
        } else if -d.mean <= d.std {
            "inversion within 1 std"
        } else {
            hard_fail = true;
            "inversion beyond 1 std"
        };
        parts.push(format!(
            "M-{id} {:.2} (full - variant {:+.2} ± {:.2}: {verdict})",
            100.0 * MeanStd::of(&variant).mean,
            100.0 * d.mean,
            100.0 * d.std
        ));
    }
    Outcome {
        name: "ablation direction",
        passed: !hard_fail,
        detail: format!("full {:.2}; {}", 100.0 * full_mean, parts.join("; ")),
    }
}

fn determinism() -> Outcome {
    let pools = generate(&Default::default(), 7).unwrap();
    let config = TrainConfig {
        seed: 7,
        epochs: 20,
        ..TrainConfig::default()
    };
    let flags = row(11).unwrap().flags;
    let a = run(&config, &flags, &pools).unwrap();
    let b = run(&config, &flags, &pools).unwrap();
    let losses = |o: &TrainOutcome| o.log.iter().map(|r| r.losses.map(|l| l.overall.to_bits())).collect::<Vec<_>>();
    let identical = a.log == b.log && losses(&a) == losses(&b) && a.params == b.params;
    Outcome {
        name: "determinism",
        passed: identical,
        detail: format!("two runs of {} epochs, logs identical: {identical}", config.epochs),
    }
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, f64) {
    let start = Instant::now();
    let o = f();
    (o, start.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let mut results = vec![
        timed(gradient_correctness),
        timed(gate_oracle),
        timed(batched_loss_equivalence),
        timed(closed_form),
    ];
    for (o, secs) in &mut results[..3] {
        o.passed &= *secs < 60.0;
    }
    let grid = run_grid();
    results.push((desk_scale(&grid), grid.seconds));
    results.push((trends(&grid), 0.0));
    results.push((ablation_direction(&grid), 0.0));
    results.push(timed(determinism));

    let mut failures = 0;
    for (o, secs) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        failures += usize::from(!o.passed);
        println!("[{tag}] {} ({secs:.1} s): {}", o.name, o.detail);
    }
    println!("{} of {} criteria passed", results.len() - failures, results.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
