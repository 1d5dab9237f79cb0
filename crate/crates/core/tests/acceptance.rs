//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashMap;
use std::time::Instant;

use hnlb::harness::{
    self, find_max_lossless_rate, run_experiment, simulate, ExperimentConfig, SearchParams,
};
use hnlb::metrics::{compute_util, compute_util_plus, UtilConfig, UtilCounters};
use hnlb::nic::nic_latency_us;
use hnlb::pipeline::{ForwardRecord, Mode};
use hnlb::{Dip, FiveTuple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// tuple -> first DIP, plus the number of packets that disagreed with it.
fn first_assignment(log: &[ForwardRecord]) -> (HashMap<FiveTuple, Dip>, usize) {
    let mut first = HashMap::new();
    let mut violations = 0;
    for r in log {
        if *first.entry(r.tuple).or_insert(r.dip) != r.dip {
            violations += 1;
        }
    }
    (first, violations)
}

fn c1_connection_consistency() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        mode: Mode::Hnlb,
        nb_conn: 8000,
        fd_capacity: 2000,
        rate: 5e6,
        duration: 0.2,
        warmup_rate: 0.0,
        seed: 2024,
        ..ExperimentConfig::default()
    };
    let sim = simulate(&cfg, |o| o.record_forwarding = true).map_err(|e| e.to_string())?;
    let log = &sim.stats.forward_log;
    let (first, violations) = first_assignment(log);
    let elapsed = start.elapsed().as_secs_f64();
    check(
        sim.stats.packets_in == 1_000_000
            && violations == 0
            && first.len() == 8000
            && sim.stats.hw_rules == 2000
            && sim.stats.hw_table_full == 6000
            && elapsed <= 30.0,
        format!(
            "{} packets in, {} forwarded, {} connections, {} rules, {} violations, {elapsed:.1} s",
            sim.stats.packets_in,
            log.len(),
            first.len(),
            sim.stats.hw_rules,
            violations
        ),
    )
}

fn c2_mode_routing_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut mismatches = 0;
    let mut lossy = 0;
    for _ in 0..100 {
        let base = ExperimentConfig {
            nb_conn: rng.gen_range(1..=3000),
            n_dips: rng.gen_range(1..=10),
            rate: rng.gen_range(0.5e6..6e6),
            duration: 0.002,
            seed: rng.gen(),
            ..ExperimentConfig::default()
        };
        let maps: Vec<HashMap<FiveTuple, Dip>> = [Mode::Slb, Mode::Hnlb]
            .iter()
            .map(|&mode| {
                let sim = simulate(&ExperimentConfig { mode, ..base.clone() }, |o| o.record_forwarding = true)
                    .map_err(|e| e.to_string())?;
                if sim.stats.packets_dropped > 0 {
                    lossy += 1;
                }
                let (map, violations) = first_assignment(&sim.stats.forward_log);
                if violations > 0 {
                    return Err(format!("{violations} inconsistent packets in {mode}"));
                }
                Ok(map)
            })
            .collect::<Result<_, String>>()?;
        if maps[0] != maps[1] {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0 && lossy == 0,
        format!("100 workloads, {mismatches} mismatching maps, {lossy} lossy runs"),
    )
}

fn c3_util_formulas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut worst: f64 = 0.0;
    let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { ((a - b) / b).abs() };
    for _ in 0..10_000 {
        let ref_cycles: u64 = rng.gen_range(1..=u64::from(u32::MAX) * 16);
        let ops_cycles = rng.gen_range(0..=ref_cycles);
        let n_b: u64 = rng.gen_range(0..=1_000_000);
        let n_p = if n_b == 0 { 0 } else { rng.gen_range(n_b..=32 * n_b) };
        let c = UtilCounters {
            ref_cycles,
            ops_cycles: if n_b == 0 { 0 } else { ops_cycles },
            n_p,
            n_b,
        };
        let util = c.ops_cycles as f64 / c.ref_cycles as f64;
        worst = worst.max(rel(compute_util(&c).map_err(|e| e.to_string())?, util));
        for (b, clamp) in [(32u64, false), (16u64, true)] {
            let expected = if n_b == 0 {
                0.0
            } else {
                let mean_fill = (n_b * b + n_p) as f64 / (2 * n_b * b) as f64;
                util * if clamp { mean_fill.min(1.0) } else { mean_fill }
            };
            let got = compute_util_plus(&c, &UtilConfig { b, clamp }).map_err(|e| e.to_string())?;
            worst = worst.max(rel(got, expected));
        }
    }
    check(worst <= 1e-12, format!("10000 states, worst relative error {worst:e}"))
}

fn c4_zero_rate() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for mode in [Mode::Slb, Mode::Hnlb] {
        let r = run_experiment(&ExperimentConfig {
            mode,
            nb_conn: 100,
            rate: 0.0,
            ..ExperimentConfig::default()
        })
        .map_err(|e| e.to_string())?;
        ok &= r.util_plus == 0.0 && r.counters.ref_cycles > 0;
        detail.push(format!("{mode} util+={}", r.util_plus));
    }
    check(ok, detail.join(", "))
}

struct GridPoint {
    mode: Mode,
    nb_conn: usize,
    rate: f64,
    util_plus: f64,
}

fn max_rate_grid() -> Result<Vec<GridPoint>, String> {
    let grid = harness::connection_grid(&ExperimentConfig::default(), &[1, 100, 1000, 8000], &[Mode::Slb, Mode::Hnlb]);
    use rayon::prelude::*;
    grid.par_iter()
        .map(|cfg| {
            let o = find_max_lossless_rate(cfg, &SearchParams::default()).map_err(|e| e.to_string())?;
            Ok(GridPoint {
                mode: cfg.mode,
                nb_conn: cfg.nb_conn,
                rate: o.rate,
                util_plus: o.report.util_plus,
            })
        })
        .collect()
}

fn c5_full_util_at_max_rate(grid: &[GridPoint]) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for p in grid {
        let exempt = p.mode == Mode::Hnlb && p.nb_conn == 1;
        if !exempt {
            ok &= (0.95..=1.0).contains(&p.util_plus);
        }
        detail.push(format!(
            "{}/{}: {:.4}{}",
            p.mode,
            p.nb_conn,
            p.util_plus,
            if exempt { " (exempt)" } else { "" }
        ));
    }
    check(ok, detail.join(", "))
}

/// Coefficient of determination of the least-squares line through `pts`.
fn r_squared(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    1.0 - ss_res / syy
}

fn c6_linearity(grid: &[GridPoint]) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for p in grid.iter().filter(|p| p.nb_conn == 100 || p.nb_conn == 1000) {
        let base = ExperimentConfig {
            mode: p.mode,
            nb_conn: p.nb_conn,
            ..ExperimentConfig::default()
        };
        let points: Vec<ExperimentConfig> = (1..=9).map(|i| base.with_rate(p.rate * f64::from(i) / 10.0)).collect();
        let reports = harness::sweep(&points).map_err(|e| e.to_string())?;
        let pts: Vec<(f64, f64)> = reports.iter().map(|r| (r.offered_rate, r.util_plus)).collect();
        let r2 = r_squared(&pts);
        ok &= r2 >= 0.98;
        detail.push(format!("{}/{}: R2={r2:.5}", p.mode, p.nb_conn));
    }
    check(ok, detail.join(", "))
}

fn c7_best_case() -> Outcome {
    let rate = |mode| {
        find_max_lossless_rate(&ExperimentConfig::best_case(mode), &SearchParams::default())
            .map(|o| o.rate)
            .map_err(|e| e.to_string())
    };
    let slb = rate(Mode::Slb)?;
    let hnlb = rate(Mode::Hnlb)?;
    check(
        (slb - 12e6).abs() <= 1.2e6 && (hnlb - 13e6).abs() <= 1.3e6,
        format!("SLB {:.3} Mpps, HNLB {:.3} Mpps", slb / 1e6, hnlb / 1e6),
    )
}

fn c8_gain_at_scale(grid: &[GridPoint]) -> Outcome {
    let rate = |mode, n| grid.iter().find(|p| p.mode == mode && p.nb_conn == n).map(|p| p.rate).unwrap();
    let ratios: Vec<f64> = [1, 100, 1000, 8000]
        .iter()
        .map(|&n| rate(Mode::Hnlb, n) / rate(Mode::Slb, n))
        .collect();
    let monotone = ratios.windows(2).all(|w| w[1] >= w[0]);
    check(
        ratios[3] >= 1.4 && monotone,
        format!(
            "HNLB/SLB ratio by nb_conn 1,100,1000,8000: {}",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c9_first_packet_in_software() -> Outcome {
    let cfg = ExperimentConfig {
        mode: Mode::Hnlb,
        nb_conn: 2000,
        rate: 3e6,
        duration: 0.02,
        warmup_rate: 0.0,
        ..ExperimentConfig::default()
    };
    let sim = simulate(&cfg, |o| o.record_forwarding = true).map_err(|e| e.to_string())?;
    let mut first: HashMap<FiveTuple, &ForwardRecord> = HashMap::new();
    for r in &sim.stats.forward_log {
        let e = first.entry(r.tuple).or_insert(r);
        if r.seq < e.seq {
            *e = r;
        }
    }
    let software = first.values().filter(|r| r.queue == 0).count();
    check(
        sim.stats.packets_dropped == 0 && software == first.len() && first.len() == 2000,
        format!("{software}/{} first packets via queue 0", first.len()),
    )
}

fn c10_latency_anchors() -> Outcome {
    let (a, b) = (nic_latency_us(0), nic_latency_us(8000));
    check(a == 95.0 && b == 105.0, format!("0 rules: {a} us, 8000 rules: {b} us"))
}

fn c11_determinism() -> Outcome {
    let render = || -> Result<Vec<u8>, String> {
        let grid = harness::connection_grid(
            &ExperimentConfig {
                rate: 4e6,
                window_ns: 1_000_000,
                ..ExperimentConfig::default()
            },
            &[1, 1000],
            &[Mode::Slb, Mode::Hnlb],
        );
        let reports = harness::sweep(&grid).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        harness::write_results(&mut buf, &grid, &reports).map_err(|e| e.to_string())?;
        for r in &reports {
            harness::write_windows(&mut buf, &r.windows).map_err(|e| e.to_string())?;
        }
        Ok(buf)
    };
    let a = render()?;
    let b = render()?;
    check(a == b && !a.is_empty(), format!("{} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let grid = max_rate_grid();
    let grid_dependent = |f: fn(&[GridPoint]) -> Outcome| match &grid {
        Ok(g) => f(g),
        Err(e) => Err(format!("max-rate grid failed: {e}")),
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("C1 connection consistency under table overflow", c1_connection_consistency()),
        ("C2 SLB/HNLB routing equivalence", c2_mode_routing_equivalence()),
        ("C3 util and util+ formulas", c3_util_formulas()),
        ("C4 zero rate gives util+ = 0", c4_zero_rate()),
        ("C5 util+ in [0.95, 1] at max lossless rate", grid_dependent(c5_full_util_at_max_rate)),
        ("C6 util+ linear in offered rate", grid_dependent(c6_linearity)),
        ("C7 calibrated best case", c7_best_case()),
        ("C8 offload gain at scale", grid_dependent(c8_gain_at_scale)),
        ("C9 first packets processed in software", c9_first_packet_in_software()),
        ("C10 NIC latency anchors", c10_latency_anchors()),
        ("C11 byte-identical reruns", c11_determinism()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(d) => println!("[PASS] {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("[FAIL] {name}: {d}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
