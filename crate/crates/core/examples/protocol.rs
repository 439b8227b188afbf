//! Compares the single-pass baseline with dropout sampling on simulated data:
//! open-set error at the baseline's best F1, best F1 per pass count, and the
//! effect of a minimum-detection requirement.
//!
//! cargo run --release --example protocol -- [seeds] [scenes] [config-json]
//!
//! `config-json` overrides fields of the default simulator configuration, e.g.
//! '{"p_det": 0.25}'.

use osdet::evaluation::{max_f1_point, ose_at_reference_f1, sweep, theta_grid, CurvePoint, EvalConfig, ScoredScene};
use osdet::simulator::simulate_dataset;
use osdet::{Pipeline, SimulatedScene, SimulatorConfig};
use rayon::prelude::*;

const PASSES: [usize; 4] = [10, 20, 30, 42];
const MIN_DETECTIONS: [usize; 4] = [1, 3, 5, 10];

struct SeedResult {
    reference: CurvePoint,
    best_f1_by_passes: Vec<f64>,
    ose_at_reference_by_passes: Vec<Option<u64>>,
    best_f1_by_min: Vec<f64>,
    ose_at_reference_by_min: Vec<Option<u64>>,
}

fn scored(scenes: &[SimulatedScene], pipeline: &Pipeline) -> Vec<ScoredScene> {
    scenes.iter().map(|s| s.observe(pipeline).unwrap()).collect()
}

fn run_seed(config: &SimulatorConfig, num_scenes: usize, grid: &[f64]) -> SeedResult {
    let scenes = simulate_dataset(config, num_scenes).unwrap();
    let base = sweep(&scored(&scenes, &Pipeline::single_pass()), grid, &EvalConfig::default());
    let reference = max_f1_point(&base).unwrap();
    let mut result = SeedResult {
        reference,
        best_f1_by_passes: vec![],
        ose_at_reference_by_passes: vec![],
        best_f1_by_min: vec![],
        ose_at_reference_by_min: vec![],
    };
    for passes in PASSES {
        let pipeline = Pipeline::dropout_sampling().with_max_passes(Some(passes)).unwrap();
        let observed = scored(&scenes, &pipeline);
        let curve = sweep(&observed, grid, &EvalConfig::default());
        result.best_f1_by_passes.push(max_f1_point(&curve).unwrap().f1);
        result
            .ose_at_reference_by_passes
            .push(ose_at_reference_f1(&curve, reference.f1).point().map(|p| p.counts.abs_ose));
        if passes == config.passes {
            for min in MIN_DETECTIONS {
                let c = EvalConfig { min_detections: min, ..EvalConfig::default() };
                let curve = sweep(&observed, grid, &c);
                result.best_f1_by_min.push(max_f1_point(&curve).unwrap().f1);
                result
                    .ose_at_reference_by_min
                    .push(ose_at_reference_f1(&curve, reference.f1).point().map(|p| p.counts.abs_ose));
            }
        }
    }
    result
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn fmt_ose(o: Option<u64>) -> String {
    o.map_or("-".into(), |v| v.to_string())
}

fn main() {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(30, |s| s.parse().unwrap());
    let num_scenes: usize = args.next().map_or(100, |s| s.parse().unwrap());
    let base_config: SimulatorConfig = match args.next() {
        Some(json) => serde_json::from_str(&json).expect("config JSON"),
        None => SimulatorConfig::default(),
    };
    let grid = theta_grid(0.1, 2.5, 25).unwrap();

    let results: Vec<SeedResult> = (1..=seeds)
        .into_par_iter()
        .map(|seed| run_seed(&SimulatorConfig { seed, ..base_config.clone() }, num_scenes, &grid))
        .collect();

    for (seed, r) in (1..).zip(&results) {
        print!("seed {seed:2}  baseline f1 {:.3} ose {:4} |", r.reference.f1, r.reference.counts.abs_ose);
        for (i, p) in PASSES.iter().enumerate() {
            print!(" p{p} {:.3}/{}", r.best_f1_by_passes[i], fmt_ose(r.ose_at_reference_by_passes[i]));
        }
        print!(" |");
        for (i, m) in MIN_DETECTIONS.iter().enumerate().take(r.best_f1_by_min.len()) {
            print!(" min{m} {:.3}/{}", r.best_f1_by_min[i], fmt_ose(r.ose_at_reference_by_min[i]));
        }
        println!();
    }

    let full = PASSES.iter().position(|&p| p == base_config.passes);
    if let Some(full) = full {
        let lower = results
            .iter()
            .filter(|r| r.ose_at_reference_by_passes[full].is_some_and(|o| o < r.reference.counts.abs_ose))
            .count();
        let base_total: u64 = results.iter().map(|r| r.reference.counts.abs_ose).sum();
        let bayes_total: u64 = results.iter().filter_map(|r| r.ose_at_reference_by_passes[full]).sum();
        println!(
            "OSE at reference F1: lower in {lower}/{}; total {bayes_total} vs {base_total} ({:.1}% reduction)",
            results.len(),
            100.0 * (1.0 - bayes_total as f64 / base_total as f64)
        );
    }
    for (i, p) in PASSES.iter().enumerate() {
        let (m, s) = mean_sd(&results.iter().map(|r| r.best_f1_by_passes[i]).collect::<Vec<_>>());
        println!("passes {p:2}: mean max F1 {m:.4} (sd {s:.4})");
    }
    for (i, m) in MIN_DETECTIONS.iter().enumerate() {
        let f1s: Vec<f64> = results.iter().filter_map(|r| r.best_f1_by_min.get(i).copied()).collect();
        if f1s.is_empty() {
            continue;
        }
        let ose: u64 = results.iter().filter_map(|r| r.ose_at_reference_by_min[i]).sum();
        let missing = results.iter().filter(|r| r.ose_at_reference_by_min[i].is_none()).count();
        println!(
            "min {m:2}: mean max F1 {:.4}, total OSE at reference F1 {ose} ({missing} unattainable)",
            mean_sd(&f1s).0
        );
    }
}
