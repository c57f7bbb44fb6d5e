//! End-to-end acceptance checks. Runs without the libtest harness so every
//! check prints exactly one PASS/FAIL line, in order.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cmprior::bench::{agreement, bench_case, time_iterations};
use cmprior::graph::{DenseTransfer, TransferMatrix};
use cmprior::losses::{bce_loss, dice_loss, stage_loss};
use cmprior::metrics::Episode;
use cmprior::synth::{random_instance, random_prior, two_blob_episode};
use cmprior::{
    binarize, build_transfer, dense_transfer_oracle, evaluate_episodes, fb_iou, initial_prior, iou, iterate_once,
    solve_fixed_point, BinaryMask, Prior, Propagate, Similarity, SolverConfig,
};
use rand::Rng;

type Outcome = Result<String, String>;

struct Check {
    name: &'static str,
    budget: Duration,
    run: fn(&mut Shared) -> Outcome,
}

/// Transfer matrices built by earlier checks, inspected by the
/// stochasticity check.
#[derive(Default)]
struct Shared {
    matrices: Vec<TransferMatrix<f32>>,
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sup_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((*x as f64 - *y as f64).abs()))
}

fn certification(_: &mut Shared) -> Outcome {
    let cfg = SolverConfig::default();
    let bound = cfg.certify().map_err(|e| format!("defaults refused: {e}"))?;
    ensure(bound > 0.7499 && bound < 0.7501, || format!("bound {bound}"))?;
    let bad = SolverConfig { alpha: 0.05, ..cfg };
    ensure(bad.certify().is_err(), || "alpha=0.05 certified".into())?;
    Ok(format!("bound={bound:.6} alpha=0.05 bound={:.4} refused", bad.lipschitz_bound()))
}

const SIDES: [usize; 6] = [8, 16, 24, 32, 48, 64];

fn convergence(shared: &mut Shared) -> Outcome {
    let cfg = SolverConfig::default();
    let (mut worst_res, mut worst_ratio, mut most_iters) = (0.0f64, 0.0f64, 0);
    for seed in 0..50u64 {
        let side = SIDES[seed as usize % SIDES.len()];
        let inst = random_instance(32, side, side, seed);
        let m0 = initial_prior(&inst.support, &inst.support_mask.to_prior(), &inst.query).map_err(|e| e.to_string())?;
        let p = build_transfer(&inst.query, cfg.top_k, cfg.temperature, cfg.similarity).map_err(|e| e.to_string())?;
        let out = solve_fixed_point(&m0, &p, &cfg, None).map_err(|e| e.to_string())?;
        let t = &out.trace;
        let res = t.last_residual().unwrap_or(f64::INFINITY);
        ensure(t.converged && res < 1e-6 && t.iterations <= 100, || {
            format!("seed {seed}: converged={} iterations={} residual={res:e}", t.converged, t.iterations)
        })?;
        for iter in 3..=t.iterations {
            let r = t.ratio_at(iter).unwrap_or(0.0);
            ensure(r <= 0.95, || format!("seed {seed}: ratio {r} at iteration {iter}"))?;
            worst_ratio = worst_ratio.max(r);
        }
        worst_res = worst_res.max(res);
        most_iters = most_iters.max(t.iterations);
        shared.matrices.push(p);
    }
    Ok(format!("50/50 converged, max iterations={most_iters} max final residual={worst_res:.2e} max ratio(t>=3)={worst_ratio:.3}"))
}

fn uniqueness(_: &mut Shared) -> Outcome {
    let cfg = SolverConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let side = SIDES[seed as usize % SIDES.len()];
        let inst = random_instance(32, side, side, 100 + seed);
        let m0 = initial_prior(&inst.support, &inst.support_mask.to_prior(), &inst.query).map_err(|e| e.to_string())?;
        let p = build_transfer(&inst.query, cfg.top_k, cfg.temperature, cfg.similarity).map_err(|e| e.to_string())?;
        let a = solve_fixed_point(&m0, &p, &cfg, None).map_err(|e| e.to_string())?;
        let start = random_prior(side, side, 1000 + seed);
        let b = solve_fixed_point(&m0, &p, &cfg, Some(&start)).map_err(|e| e.to_string())?;
        let d = sup_diff(a.prior.values(), b.prior.values());
        ensure(a.trace.converged && b.trace.converged && d < 1e-5, || format!("seed {seed}: diff {d:e}"))?;
        worst = worst.max(d);
    }
    Ok(format!("10 instances, max |M1 - M2| = {worst:.2e}"))
}

fn stochasticity(shared: &mut Shared) -> Outcome {
    let k = SolverConfig::default().top_k;
    ensure(!shared.matrices.is_empty(), || "no matrices collected".into())?;
    let mut worst_sum = 0.0f64;
    for (idx, p) in shared.matrices.iter().enumerate() {
        ensure(p.max_row_len() <= k, || format!("matrix {idx}: row with {} entries", p.max_row_len()))?;
        for s in p.row_sums() {
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
    }
    ensure(worst_sum <= 1e-5, || format!("row sum off by {worst_sum:e}"))?;
    let mut rng = cmprior::synth::rng(7);
    let mut worst_gain = f64::NEG_INFINITY;
    for i in 0..100 {
        let p = &shared.matrices[i % shared.matrices.len()];
        let scale = rng.random_range(0.1..10.0);
        let v: Vec<f32> = (0..p.n()).map(|_| rng.random_range(-1.0f32..1.0) * scale).collect();
        let norm_v = v.iter().fold(0.0f64, |m, x| m.max(x.abs() as f64));
        let norm_pv = p.propagate(&v).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        ensure(norm_pv <= norm_v + 1e-6, || format!("|Pv|={norm_pv} > |v|={norm_v}"))?;
        worst_gain = worst_gain.max(norm_pv - norm_v);
    }
    Ok(format!(
        "{} matrices, max |row sum - 1| = {worst_sum:.1e}, 100 vectors, max |Pv|-|v| = {worst_gain:.2e}",
        shared.matrices.len()
    ))
}

fn sparse_dense(_: &mut Shared) -> Outcome {
    let cfg = SolverConfig::default();
    let mut parts = Vec::new();
    for side in [8usize, 16] {
        let inst = random_instance(32, side, side, 500 + side as u64);
        let m0 = initial_prior(&inst.support, &inst.support_mask.to_prior(), &inst.query).map_err(|e| e.to_string())?;
        let p = build_transfer(&inst.query, cfg.top_k, cfg.temperature, Similarity::Dot).map_err(|e| e.to_string())?;
        let d: DenseTransfer<f32> =
            dense_transfer_oracle(&inst.query, cfg.top_k, cfg.temperature, Similarity::Dot).map_err(|e| e.to_string())?;
        let a = agreement(&p, &d, &m0, &cfg).map_err(|e| e.to_string())?;
        ensure(a.matrix_diff <= 1e-5 && a.iterate_diff <= 1e-5, || format!("N={}: {a:?}", side * side))?;
        parts.push(format!("N={} P diff={:.1e} iterate diff={:.1e}", side * side, a.matrix_diff, a.iterate_diff));
    }
    Ok(parts.join(", "))
}

fn complexity(_: &mut Shared) -> Outcome {
    let cfg = SolverConfig::default();
    let (iters, reps) = (20, 7);
    let sparse_ms = |side: usize| -> Result<f64, String> {
        let (f, m0) = bench_case(side, 32, 42);
        let p = build_transfer(&f, cfg.top_k, cfg.temperature, Similarity::Dot).map_err(|e| e.to_string())?;
        time_iterations(&p, &m0, &cfg, iters, reps).map_err(|e| e.to_string())
    };
    let dense_ms = |side: usize| -> Result<f64, String> {
        let (f, m0) = bench_case(side, 32, 42);
        let d = dense_transfer_oracle(&f, cfg.top_k, cfg.temperature, Similarity::Dot).map_err(|e| e.to_string())?;
        time_iterations(&d, &m0, &cfg, iters, reps).map_err(|e| e.to_string())
    };
    let (s_small, s_large) = (sparse_ms(32)?, sparse_ms(128)?);
    let (d_small, d_large) = (dense_ms(32)?, dense_ms(64)?);
    let (sparse_ratio, dense_ratio) = (s_large / s_small, d_large / d_small);
    let detail = format!(
        "sparse 1024->16384: {s_small:.4} -> {s_large:.4} ms/iter ({sparse_ratio:.1}x <= 32), \
         dense 1024->4096: {d_small:.3} -> {d_large:.3} ms/iter ({dense_ratio:.1}x >= 8)"
    );
    ensure(sparse_ratio <= 32.0 && dense_ratio >= 8.0, || detail.clone())?;
    Ok(detail)
}

fn analytic_cases(_: &mut Shared) -> Outcome {
    let cfg = SolverConfig::default();
    let n = 64;
    let mut rng = cmprior::synth::rng(3);
    let mut values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    values[5] = 0.0;
    values[17] = 1.0;
    let m0 = Prior::new(8, 8, values).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for (name, p) in [("identity", TransferMatrix::identity(n)), ("uniform", TransferMatrix::uniform(n))] {
        let p = p.map_err(|e| e.to_string())?;
        let out = solve_fixed_point(&m0, &p, &cfg, None).map_err(|e| e.to_string())?;
        let d = out.prior.values().iter().zip(m0.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        ensure(out.trace.converged && d < 1e-6, || format!("{name}: |M* - M0| = {d:e}"))?;
        parts.push(format!("{name} |M* - M0|={d:.1e}"));
    }
    Ok(parts.join(", "))
}

fn losses(_: &mut Shared) -> Outcome {
    let mut rng = cmprior::synth::rng(11);
    let gt = BinaryMask::from_bools(8, 8, (0..64).map(|_| rng.random::<bool>())).map_err(|e| e.to_string())?;
    let exact: Prior<f64> = gt.to_prior();
    let dice = dice_loss(&exact, &gt).map_err(|e| e.to_string())?.value;
    let bce = bce_loss(&exact, &gt).map_err(|e| e.to_string())?.value;
    let half = Prior::filled(8, 8, 0.5).map_err(|e| e.to_string())?;
    let bce_half = bce_loss(&half, &gt).map_err(|e| e.to_string())?.value;
    ensure(dice.abs() < 1e-8, || format!("Dice(y, y) = {dice:e}"))?;
    ensure(bce <= 2e-7, || format!("BCE(y, y) = {bce:e}"))?;
    ensure((bce_half - std::f64::consts::LN_2).abs() < 1e-6, || format!("BCE(0.5) = {bce_half}"))?;

    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = cmprior::synth::rng(seed);
        let (h, w) = (rng.random_range(2..7), rng.random_range(2..7));
        let pred: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.1..0.9)).collect();
        let gt = BinaryMask::from_bools(h, w, (0..h * w).map(|_| rng.random::<bool>())).map_err(|e| e.to_string())?;
        let eval = |v: &[f64]| stage_loss(&Prior::new(h, w, v.to_vec()).unwrap(), &gt).unwrap();
        let analytic = eval(&pred).grad;
        let step = 1e-3;
        let mut num_scale = 1e-8f64;
        let mut err = 0.0f64;
        for i in 0..pred.len() {
            let (mut up, mut down) = (pred.clone(), pred.clone());
            up[i] += step;
            down[i] -= step;
            let numeric = (eval(&up).total - eval(&down).total) / (2.0 * step);
            num_scale = num_scale.max(numeric.abs());
            err = err.max((numeric - analytic[i]).abs());
        }
        worst = worst.max(err / num_scale);
    }
    ensure(worst < 1e-4, || format!("gradient relative error {worst:e}"))?;
    Ok(format!(
        "Dice(y,y)={dice:.1e} BCE(y,y)={bce:.1e} BCE(0.5)-ln2={:.1e} grad rel err={worst:.1e}",
        bce_half - std::f64::consts::LN_2
    ))
}

fn metrics(_: &mut Shared) -> Outcome {
    let m = |v: &[u8]| BinaryMask::new(1, v.len(), v.to_vec()).unwrap();
    let a = m(&[1, 0, 1, 1, 0, 0]);
    ensure(iou(&a, &a).unwrap() == 1.0, || "identity iou != 1".into())?;
    ensure(iou(&a, &a.not()).unwrap() == 0.0, || "disjoint iou != 0".into())?;
    let (p, g) = (m(&[1, 1, 0, 0]), m(&[1, 0, 0, 0]));
    let (i, fb) = (iou(&p, &g).unwrap(), fb_iou(&p, &g).unwrap());
    ensure(i == 0.5 && (fb - 7.0 / 12.0).abs() < 1e-12, || format!("hand case iou={i} fbiou={fb}"))?;

    let mut rng = cmprior::synth::rng(5);
    let episodes: Vec<Episode> = (0..30)
        .map(|e| Episode {
            pred: BinaryMask::from_bools(4, 4, (0..16).map(|_| rng.random::<bool>())).unwrap(),
            gt: BinaryMask::from_bools(4, 4, (0..16).map(|_| rng.random::<bool>())).unwrap(),
            class_id: e % 4,
        })
        .collect();
    let report = evaluate_episodes(&episodes).map_err(|e| e.to_string())?;
    let mean = report.per_class_iou.values().sum::<f64>() / report.per_class_iou.len() as f64;
    ensure((report.miou - mean).abs() < 1e-9, || format!("miou {} vs class mean {mean}", report.miou))?;
    Ok(format!("identity=1 disjoint=0 hand iou={i} fbiou={fb:.6} miou-classmean={:.1e}", report.miou - mean))
}

fn end_to_end(_: &mut Shared) -> Outcome {
    let cfg = SolverConfig::default();
    let mut wins = 0;
    let (mut before, mut after) = (0.0, 0.0);
    for seed in 0..20u64 {
        let ep = two_blob_episode(32, 32, 1.0, seed);
        let m0 = initial_prior(&ep.support, &ep.support_mask.to_prior(), &ep.query).map_err(|e| e.to_string())?;
        let p = build_transfer(&ep.query, cfg.top_k, cfg.temperature, cfg.similarity).map_err(|e| e.to_string())?;
        let solved = solve_fixed_point(&m0, &p, &cfg, None).map_err(|e| e.to_string())?;
        let i0 = iou(&binarize(&m0, cfg.threshold).unwrap(), &ep.query_gt).unwrap();
        let i1 = iou(&binarize(&solved.prior, cfg.threshold).unwrap(), &ep.query_gt).unwrap();
        wins += usize::from(i1 >= i0);
        before += i0;
        after += i1;
    }
    let detail = format!("{wins}/20 episodes with IoU(M*) >= IoU(M0), mean IoU {:.3} -> {:.3}", before / 20.0, after / 20.0);
    ensure(wins >= 18, || detail.clone())?;
    Ok(detail)
}

fn determinism(_: &mut Shared) -> Outcome {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let f = |name: &str| fixtures.join(name).to_str().unwrap().to_string();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run_all = |dir: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
        let invocations: Vec<Vec<String>> = vec![
            vec!["prior".into(), "--support-feat".into(), f("support.cmpt"), "--support-mask".into(), f("support.pgm"),
                 "--query-feat".into(), f("query.cmpt"), "--out".into(), p("m0.cmpt")],
            vec!["propagate".into(), "--query-feat".into(), f("query.cmpt"), "--prior".into(), p("m0.cmpt"),
                 "--trace-out".into(), p("trace.csv"), "--out".into(), p("m.cmpt")],
            vec!["pipeline".into(), "--episode".into(), f("episode_k3.txt"), "--config".into(), f("config.txt"),
                 "--out-dir".into(), p("episode")],
        ];
        for args in invocations {
            let status = Command::new(env!("CARGO_BIN_EXE_cmprior")).args(&args).output().map_err(|e| e.to_string())?;
            ensure(status.status.success(), || format!("{} failed: {}", args[0], String::from_utf8_lossy(&status.stderr)))?;
        }
        let mut files = Vec::new();
        for name in ["m0.cmpt", "m.cmpt", "trace.csv", "episode/mask.pgm", "episode/prior.cmpt", "episode/trace_0.csv",
                     "episode/trace_2.csv", "episode/report.txt"] {
            files.push((name.to_string(), std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?));
        }
        Ok(files)
    };
    let first = run_all(&tmp.path().join("a"))?;
    let second = run_all(&tmp.path().join("b"))?;
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} output files bitwise identical across two runs", first.len()))
}

fn fixed_prior_invariant(_: &mut Shared) -> Outcome {
    let cfg = SolverConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let inst = random_instance(16, 12, 12, 900 + seed);
        let m0 = initial_prior(&inst.support, &inst.support_mask.to_prior(), &inst.query).map_err(|e| e.to_string())?;
        let p = build_transfer(&inst.query, cfg.top_k, cfg.temperature, cfg.similarity).map_err(|e| e.to_string())?;
        let mut in_range = true;
        let out = cmprior::solver::solve_fixed_point_with(&m0, &p, &cfg, None, |_, m| {
            in_range &= m.values().iter().all(|v| (0.0..=1.0).contains(v));
        })
        .map_err(|e| e.to_string())?;
        let step = iterate_once(&out.prior, &m0, &p, &cfg).map_err(|e| e.to_string())?;
        ensure(in_range, || format!("seed {seed}: iterate left [0, 1]"))?;
        ensure(step.residual < cfg.tol, || format!("seed {seed}: |f(M*) - M*| = {:e}", step.residual))?;
        worst = worst.max(step.residual);
    }
    Ok(format!("10 instances, max |f(M*) - M*| = {worst:.1e}, all iterates in [0, 1]"))
}

fn main() {
    let checks = [
        Check { name: "certification arithmetic", budget: Duration::from_secs(1), run: certification },
        Check { name: "convergence suite", budget: Duration::from_secs(60), run: convergence },
        Check { name: "fixed-point uniqueness", budget: Duration::from_secs(30), run: uniqueness },
        Check { name: "row-stochasticity and sparsity", budget: Duration::from_secs(30), run: stochasticity },
        Check { name: "sparse/dense oracle", budget: Duration::from_secs(30), run: sparse_dense },
        Check { name: "complexity scaling", budget: Duration::from_secs(300), run: complexity },
        Check { name: "identity/uniform analytic cases", budget: Duration::from_secs(30), run: analytic_cases },
        Check { name: "loss suite", budget: Duration::from_secs(30), run: losses },
        Check { name: "metrics suite", budget: Duration::from_secs(30), run: metrics },
        Check { name: "synthetic end-to-end", budget: Duration::from_secs(120), run: end_to_end },
        Check { name: "CLI determinism", budget: Duration::from_secs(60), run: determinism },
        Check { name: "fixed-prior invariant", budget: Duration::from_secs(30), run: fixed_prior_invariant },
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    println!("\nrunning {} acceptance checks", checks.len());
    for check in &checks {
        let start = Instant::now();
        let outcome = (check.run)(&mut shared);
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > check.budget => {
                Err(format!("{detail}; took {:.1}s, budget {}s", elapsed.as_secs_f64(), check.budget.as_secs()))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {} [{:.2}s] {detail}", check.name, elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} [{:.2}s] {detail}", check.name, elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed\n", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
