//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use varshift::parallel::{par_estimate, par_sweep};
use varshift_core::analytic::{shift_ratio_case_a, uout_shift_ratio, ShiftScenario};
use varshift_core::experiment::{run_cell, CellOutcome, CellSpec};
use varshift_core::gradcheck;
use varshift_core::montecarlo::{case_a_grid, case_b_grid, McModel};
use varshift_core::network::Placement;
use varshift_core::RngStream;

const N_GRID: usize = 1_000_000;
const N_UOUT: usize = 10_000_000;
const K_SE: f64 = 4.0;
const UOUT_REFERENCE: f64 = 0.9966777;
const GRAD_TOL: f64 = 1e-5;
const SEEDS: u64 = 5;
const MIN_SEEDS: usize = 4;
const ACC_SLACK: f64 = 0.005;
const LAST_LAYER_LIMIT: f64 = 1.1;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let grid = case_a_grid();
    let rows = par_sweep(&grid, N_GRID, &RngStream::new(2024, 1)).expect("non-empty grid");
    let elapsed = start.elapsed();
    let covered = rows
        .iter()
        .filter(|r| r.error.is_none() && r.mc.covers(r.analytic, K_SE))
        .count();
    let worst = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    let half = shift_ratio_case_a(&ShiftScenario::case_a(0.0, 1.0, 0.5))
        .expect("valid")
        .ratio;
    let pass = rows.len() == 15
        && covered == rows.len()
        && (half - 0.5).abs() <= 1e-12
        && elapsed < Duration::from_secs(30);
    verdict(
        pass,
        format!(
            "case (a) closed form vs MC at n=1e6: {covered}/{} within 4 se (max |z| {worst:.2}); c=0 v=1 p=0.5 ratio {half}; {:.1} s (limit 30 s)",
            rows.len(),
            secs(elapsed)
        ),
    )
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let grid = case_b_grid(0.0, 1.0, 0.5);
    let rows = par_sweep(&grid, N_GRID, &RngStream::new(2024, 2)).expect("non-empty grid");
    let elapsed = start.elapsed();
    let covered = rows
        .iter()
        .filter(|r| r.error.is_none() && r.mc.covers(r.analytic, K_SE))
        .count();
    let worst = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    let ratio = |d: usize, rho: f64| {
        rows.iter()
            .find(|r| r.scenario.d == d && r.scenario.rho_x == rho)
            .map(|r| r.analytic)
            .expect("grid point")
    };
    let closer = [0.1, 0.5]
        .iter()
        .all(|&rho| (1.0 - ratio(256, rho)).abs() < (1.0 - ratio(4, rho)).abs());
    let pass =
        rows.len() == 15 && covered == rows.len() && closer && elapsed < Duration::from_secs(120);
    verdict(
        pass,
        format!(
            "case (b) all-ones weights at n=1e6: {covered}/{} within 4 se (max |z| {worst:.2}); d=256 closer to 1 than d=4 for rho>0: {closer} (rho=0.1: {:.4} vs {:.4}, rho=0.5: {:.4} vs {:.4}); {:.1} s (limit 120 s)",
            rows.len(),
            ratio(256, 0.1),
            ratio(4, 0.1),
            ratio(256, 0.5),
            ratio(4, 0.5),
            secs(elapsed)
        ),
    )
}

fn criterion_3() -> Verdict {
    let model = McModel::Uout { v: 1.0, beta: 0.1 };
    let mc = par_estimate(&model, N_UOUT, &RngStream::new(2024, 3))
        .expect("valid model")
        .ratio;
    let analytic = uout_shift_ratio(0.1).expect("valid beta");
    let mc_ok = mc.covers(UOUT_REFERENCE, K_SE);
    let exact = (analytic - 300.0 / 301.0).abs() <= 1e-12;
    verdict(
        mc_ok && exact,
        format!(
            "Uout beta=0.1 at n=1e7: mc {:.7} +- {:.1e} vs {UOUT_REFERENCE} ({}); analytic {analytic:.15} vs 300/301 ({})",
            mc.value,
            mc.stderr,
            if mc_ok { "within 4 se" } else { "outside 4 se" },
            if exact { "within 1e-12" } else { "off" }
        ),
    )
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let mut checks = Vec::new();
    for seed in 0..5 {
        checks.extend(gradcheck::run_all(&RngStream::new(seed, 4)).expect("gradient checks run"));
    }
    let elapsed = start.elapsed();
    let worst = checks
        .iter()
        .max_by(|a, b| a.max_abs_dev.total_cmp(&b.max_abs_dev))
        .expect("checks ran");
    let bad = checks
        .iter()
        .filter(|c| c.max_abs_dev >= GRAD_TOL || c.max_abs_dev.is_nan())
        .count();
    let has_bn = checks.iter().any(|c| c.name == "batchnorm input");
    verdict(
        bad == 0 && has_bn && elapsed < Duration::from_secs(10),
        format!(
            "finite differences (step {:e}) over {} checks: {bad} above 1e-5, worst {:.2e} ({}); {:.2} s (limit 10 s)",
            gradcheck::STEP,
            checks.len(),
            worst.max_abs_dev,
            worst.name,
            secs(elapsed)
        ),
    )
}

struct Cell {
    spec: CellSpec,
    outcome: CellOutcome,
}

fn run_all(specs: Vec<CellSpec>) -> Vec<Cell> {
    specs
        .into_par_iter()
        .map(|spec| {
            let (_, outcome) = run_cell(&spec).unwrap_or_else(|e| panic!("{}: {e}", spec.name));
            Cell { spec, outcome }
        })
        .collect()
}

fn toy_cells(placement: Placement, values: &[f64], width: usize) -> Vec<CellSpec> {
    values
        .iter()
        .flat_map(|&v| (0..SEEDS).map(move |s| CellSpec::toy(placement, v, width, s)))
        .collect()
}

fn select(cells: &[Cell], placement: Placement, value: f64, width: usize) -> Vec<&Cell> {
    let pick = |c: &&Cell| {
        let a = &c.spec.arch;
        let v = if placement == Placement::UoutB {
            a.beta
        } else {
            a.drop_ratio
        };
        a.placement == placement && v == value && a.hidden == [width]
    };
    let mut out: Vec<&Cell> = cells.iter().filter(pick).collect();
    out.sort_by_key(|c| c.spec.init_seed);
    out
}

fn gm(c: &Cell) -> f64 {
    c.outcome.trained.report.geometric_mean_max_ratio()
}

fn list(xs: impl Iterator<Item = f64>) -> String {
    xs.map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn criterion_5(cells: &[Cell], elapsed: Duration) -> Verdict {
    let base = select(cells, Placement::DropA, 0.0, 32);
    let low = select(cells, Placement::DropA, 0.1, 32);
    let high = select(cells, Placement::DropA, 0.5, 32);
    let above = base
        .iter()
        .zip(&high)
        .filter(|(b, h)| gm(h) > gm(b))
        .count();
    let between = (0..base.len())
        .filter(|&i| {
            let (lo, hi) = (gm(base[i]).min(gm(high[i])), gm(base[i]).max(gm(high[i])));
            (lo..=hi).contains(&gm(low[i]))
        })
        .count();
    verdict(
        above >= MIN_SEEDS && between >= MIN_SEEDS && elapsed < Duration::from_secs(300),
        format!(
            "DropA gm max_ratio, 0.5 above 0.0 in {above}/{SEEDS} seeds, 0.1 between them in {between}/{SEEDS} (0.0: {}; 0.1: {}; 0.5: {}); {:.1} s (limit 300 s)",
            list(base.iter().map(|c| gm(c))),
            list(low.iter().map(|c| gm(c))),
            list(high.iter().map(|c| gm(c))),
            secs(elapsed)
        ),
    )
}

fn criterion_6(cells: &[Cell]) -> Verdict {
    let high = select(cells, Placement::DropA, 0.5, 32);
    let below = high
        .iter()
        .filter(|c| {
            let k = c.outcome.consistency().expect("consistency measured");
            k.eval_mode_acc < k.train_mode_acc
        })
        .count();
    let gaps: Vec<f64> = select(cells, Placement::DropA, 0.0, 32)
        .iter()
        .map(|c| {
            let k = c
                .outcome
                .adjusted
                .as_ref()
                .and_then(|a| a.report.consistency)
                .expect("adjusted consistency measured");
            (k.train_mode_acc - k.eval_mode_acc).abs()
        })
        .collect();
    let agree = gaps.iter().all(|g| *g <= ACC_SLACK);
    verdict(
        below >= MIN_SEEDS && agree,
        format!(
            "DropA 0.5 eval acc below vote acc in {below}/{SEEDS} seeds; no-dropout |vote - eval| after adjustment: {} (limit 0.005)",
            list(gaps.into_iter())
        ),
    )
}

fn criterion_7(cells: &[Cell]) -> Verdict {
    let delta = |c: &Cell| {
        c.outcome.adjusted.as_ref().expect("adjusted").train_acc - c.outcome.trained.train_acc
    };
    let high = select(cells, Placement::DropA, 0.5, 32);
    let improved = high.iter().filter(|c| delta(c) > 0.0).count();
    let worst = cells
        .iter()
        .min_by(|a, b| delta(a).total_cmp(&delta(b)))
        .expect("cells ran");
    let no_harm = delta(worst) >= -ACC_SLACK;
    verdict(
        improved >= MIN_SEEDS && no_harm,
        format!(
            "adjustment raises DropA 0.5 train-split eval acc in {improved}/{SEEDS} seeds ({}); worst change over {} nets {:+.4} ({}, limit -0.005)",
            list(high.iter().map(|c| delta(c))),
            cells.len(),
            delta(worst),
            worst.spec.name
        ),
    )
}

fn criterion_8(cells: &[Cell]) -> Verdict {
    let narrow = select(cells, Placement::DropB, 0.5, 16);
    let wide = select(cells, Placement::DropB, 0.5, 512);
    let smaller = narrow
        .iter()
        .zip(&wide)
        .filter(|(n, w)| gm(w) < gm(n))
        .count();
    verdict(
        narrow.len() == SEEDS as usize && smaller >= MIN_SEEDS,
        format!(
            "DropB 0.5 gm max_ratio, width 512 below width 16 in {smaller}/{SEEDS} paired seeds (16: {}; 512: {})",
            list(narrow.iter().map(|c| gm(c))),
            list(wide.iter().map(|c| gm(c)))
        ),
    )
}

fn criterion_9(cells: &[Cell]) -> Verdict {
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for r in [0.1, 0.3, 0.5] {
        let g: Vec<f64> = select(cells, Placement::LastLayer, r, 32)
            .iter()
            .map(|c| gm(c))
            .collect();
        worst = g.iter().copied().fold(worst, f64::max);
        parts.push(format!("{r}: {}", list(g.into_iter())));
    }
    verdict(
        worst <= LAST_LAYER_LIMIT,
        format!(
            "LastLayer gm max_ratio over 5 seeds, max {worst:.3} (limit 1.1); {}",
            parts.join("; ")
        ),
    )
}

fn varshift(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_varshift"))
        .args(args)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).expect("readable file");
                out.push((path.strip_prefix(dir).expect("nested").to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

fn criterion_10() -> Verdict {
    let root = tempfile::tempdir().expect("temp dir");
    let cfg = root.path().join("grid.cfg");
    std::fs::write(
        &cfg,
        "[experiment]\nepochs = 3\nseeds = 0, 1\n\n[cell drop]\nplacement = drop_a\nvalues = 0.0, 0.5\n",
    )
    .expect("config written");
    let base = root.path().join("base");
    let (code, _) = varshift(&[
        "train",
        "--epochs",
        "3",
        "--seed",
        "7",
        "--out",
        base.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "base checkpoint");
    let ckpt = base.join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let cfg = cfg.to_str().unwrap();

    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("analytic", vec!["analytic", "--grid", "case-b"]),
        (
            "simulate",
            vec!["simulate", "--grid", "case-a", "--samples", "20000"],
        ),
        (
            "train",
            vec!["train", "--epochs", "3", "--drop-ratio", "0.3"],
        ),
        ("scan", vec!["scan", "--checkpoint", ckpt]),
        ("adjust", vec!["adjust", "--checkpoint", ckpt]),
        ("consistency", vec!["consistency", "--checkpoint", ckpt]),
        ("experiment", vec!["experiment", "--config", cfg]),
    ];
    let mut identical = 0;
    let mut failures = Vec::new();
    let total = commands.len() * 2;
    for (name, args) in &commands {
        for format in ["csv", "json"] {
            let run = |k: usize| {
                let dir = root.path().join(format!("{name}-{format}-{k}"));
                let mut full: Vec<&str> = args.clone();
                let dir_s = dir.to_str().unwrap().to_string();
                full.extend(["--seed", "3", "--format", format, "--out"]);
                let mut owned: Vec<String> = full.iter().map(|s| s.to_string()).collect();
                owned.push(dir_s);
                let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
                let (code, stdout) = varshift(&refs);
                (
                    code,
                    stdout,
                    if dir.exists() {
                        files_under(&dir)
                    } else {
                        Vec::new()
                    },
                )
            };
            let (a, b) = (run(0), run(1));
            if a.0 == 0 && !a.2.is_empty() && a == b {
                identical += 1;
            } else {
                failures.push(format!("{name}/{format} (exit {} {})", a.0, b.0));
            }
        }
    }
    verdict(
        identical == total,
        format!(
            "{identical}/{total} command and format pairs byte-identical across two runs{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; differing: {}", failures.join(", "))
            }
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut report = |id: usize, v: Verdict| {
        println!(
            "criterion {id:>2} {} {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push((id, v));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());

    let start = Instant::now();
    let mut cells = run_all(toy_cells(Placement::DropA, &[0.0, 0.1, 0.5], 32));
    let drop_a_time = start.elapsed();
    report(5, criterion_5(&cells, drop_a_time));
    report(6, criterion_6(&cells));

    let mut more = toy_cells(Placement::DropB, &[0.5], 16);
    more.extend(toy_cells(Placement::DropB, &[0.5], 512));
    more.extend(toy_cells(Placement::LastLayer, &[0.1, 0.3, 0.5], 32));
    cells.extend(run_all(more));
    report(7, criterion_7(&cells));
    report(8, criterion_8(&cells));
    report(9, criterion_9(&cells));
    report(10, criterion_10());

    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, v)| !v.pass)
        .map(|(id, _)| *id)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
