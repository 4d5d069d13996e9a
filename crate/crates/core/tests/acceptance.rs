//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use common::*;
use phiot::losses::{mmd_limit, ot_loss_problem};
use phiot::multimarginal::{
    barycenter_extract, build_pairwise_cost, mm_marginal_errors, MASS_FLOOR,
};
use phiot::oracles::DEFAULT_RESOLUTION;
use phiot::transforms::cep_transform_generic;
use phiot::*;
use rand::Rng;

type Check = std::result::Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tight() -> SolverConfig {
    SolverConfig::default()
}

fn check_monotone(duals: &[f64], what: &str) -> Check {
    for (k, w) in duals.windows(2).enumerate() {
        ensure(w[1] >= w[0] - 1e-10, || {
            format!(
                "{what}: dual decreased by {:.3e} at sweep {}",
                w[0] - w[1],
                k + 2
            )
        })?;
    }
    Ok(())
}

fn duality() -> Check {
    let mut rng = rng(101);
    let epss = [0.05, 0.2, 1.0];
    for k in 0..20 {
        let reg = regs()[k % 3];
        let eps = epss[(k / 3) % 3];
        let (n, m) = if k == 0 {
            (50, 50)
        } else {
            (rng.gen_range(2..=50), rng.gen_range(2..=50))
        };
        let mu = random_measure(&mut rng, n, 2);
        let nu = random_measure(&mut rng, m, 2);
        let cost = random_cost(&mut rng, n, m, 1.0);
        let problem = Problem::new(mu, nu, cost, eps, reg).map_err(|e| e.to_string())?;
        let loss = ot_loss_problem(&problem, &tight()).map_err(|e| e.to_string())?;
        let plan = recover_plan(&loss.potentials, &problem);
        let (e1, e2) = marginal_errors(&plan, &problem);
        let tag = format!("instance {k} ({n}x{m}, eps {eps}, {})", reg.name());
        ensure(loss.converged, || format!("{tag}: not converged"))?;
        ensure(loss.gap.abs() <= 1e-6, || {
            format!("{tag}: gap {:.3e}", loss.gap)
        })?;
        ensure(e1 <= 1e-8 && e2 <= 1e-8, || {
            format!("{tag}: marginal errors {e1:.3e}, {e2:.3e}")
        })?;
    }
    Ok(())
}

fn oracle_equivalence() -> Check {
    let mut rng = rng(202);
    for (n, m) in [(2, 2), (2, 3)] {
        for reg in regs() {
            let mu = random_measure(&mut rng, n, 1);
            let nu = random_measure(&mut rng, m, 1);
            let cost = random_cost(&mut rng, n, m, 1.0);
            let c_inf = cost.sup_norm();
            let problem = Problem::new(mu, nu, cost, 0.5, reg).map_err(|e| e.to_string())?;
            let loss = ot_loss_problem(&problem, &tight()).map_err(|e| e.to_string())?;
            let oracle =
                brute_force_primal(&problem, DEFAULT_RESOLUTION).map_err(|e| e.to_string())?;
            let plan = recover_plan(&loss.potentials, &problem);
            let dv = (loss.value - oracle.value).abs();
            let dp = l1(&plan.masses, oracle.argmin.as_ref().unwrap());
            let tag = format!("{n}x{m} {}", reg.name());
            ensure(dv <= 1e-5 * (1.0 + c_inf), || {
                format!("{tag}: loss off by {dv:.3e}")
            })?;
            ensure(dp <= 1e-4, || format!("{tag}: plan off by {dp:.3e} L1"))?;
        }
    }
    Ok(())
}

fn dual_monotonicity() -> Check {
    let mut rng = rng(303);
    for k in 0..30 {
        let reg = regs()[k % 3];
        let eps = [0.02, 0.1, 0.5][(k / 3) % 3];
        let n = rng.gen_range(2..30);
        let m = rng.gen_range(2..30);
        let mu = random_measure(&mut rng, n, 2);
        let nu = random_measure(&mut rng, m, 2);
        let cost = random_cost(&mut rng, n, m, 1.0);
        let problem = Problem::new(mu, nu, cost, eps, reg).map_err(|e| e.to_string())?;
        let (_, report) = solve(&problem, &tight()).map_err(|e| e.to_string())?;
        check_monotone(&report.dual_values, &format!("two-marginal instance {k}"))?;
    }
    for (k, reg) in regs().into_iter().enumerate() {
        let marginals: Vec<_> = (0..3).map(|_| random_measure(&mut rng, 4, 1)).collect();
        let cost =
            build_pairwise_cost(&marginals, CostKind::SqEuclidean).map_err(|e| e.to_string())?;
        let problem = MMProblem::new(marginals, cost, 0.1, reg).map_err(|e| e.to_string())?;
        let (_, report) = mm_solve(&problem, &tight()).map_err(|e| e.to_string())?;
        check_monotone(&report.dual_values, &format!("three-marginal instance {k}"))?;
    }
    Ok(())
}

fn transform_bounds() -> Check {
    let mut rng = rng(404);
    let cfg = RootConfig::default();
    for k in 0..1000 {
        let reg = regs()[k % 3];
        let n = rng.gen_range(1..12);
        let m = rng.gen_range(1..12);
        let scale = rng.gen_range(0.1..5.0);
        let eps = rng.gen_range(0.05..2.0);
        let src = random_measure(&mut rng, n, 1);
        let cost = random_cost(&mut rng, n, m, scale);
        let u = random_vec(&mut rng, n, 2.0 * scale);
        let t = cep_transform(&u, &cost, eps, &reg, &src, Direction::RowsToCols, &cfg)
            .map_err(|e| e.to_string())?;
        let o = osc(&t);
        ensure(o <= 2.0 * cost.sup_norm() + 1e-9, || {
            format!("trial {k}: osc {o} > 2 * {}", cost.sup_norm())
        })?;
    }
    for lip in [0.5, 1.0, 3.0] {
        for reg in regs() {
            for eps in [0.05, 0.5] {
                let xs: Vec<f64> = (0..15).map(|_| rng.gen_range(0.0..1.0)).collect();
                let ys: Vec<f64> = (0..40).map(|k| k as f64 / 39.0).collect();
                let src = DiscreteMeasure::on_line(&xs, random_weights(&mut rng, 15)).unwrap();
                let tgt = DiscreteMeasure::on_line(&ys, vec![1.0 / 40.0; 40]).unwrap();
                let cost = build_cost(&src, &tgt, CostKind::Euclidean).unwrap();
                let cost = CostMatrix::new(cost.entries() * lip).unwrap();
                let u = random_vec(&mut rng, 15, 1.0);
                let t = cep_transform(&u, &cost, eps, &reg, &src, Direction::RowsToCols, &cfg)
                    .map_err(|e| e.to_string())?;
                let worst = t
                    .windows(2)
                    .zip(ys.windows(2))
                    .map(|(a, b)| (a[1] - a[0]).abs() / (b[1] - b[0]))
                    .fold(0.0, f64::max);
                ensure(worst <= lip + 1e-6, || {
                    format!(
                        "L={lip}, {}, eps {eps}: discrete Lipschitz constant {worst}",
                        reg.name()
                    )
                })?;
            }
        }
    }
    Ok(())
}

fn lipschitz_operator() -> Check {
    let mut rng = rng(505);
    let cfg = RootConfig::default();
    for k in 0..200 {
        let reg = regs()[k % 3];
        let n = rng.gen_range(1..15);
        let m = rng.gen_range(1..15);
        let eps = rng.gen_range(0.05..1.0);
        let src = random_measure(&mut rng, n, 1);
        let cost = random_cost(&mut rng, n, m, 1.0);
        let bound = 2.0 * cost.sup_norm();
        let u = random_vec(&mut rng, n, bound);
        let w = random_vec(&mut rng, n, bound);
        let a = cep_transform(&u, &cost, eps, &reg, &src, Direction::RowsToCols, &cfg)
            .map_err(|e| e.to_string())?;
        let b = cep_transform(&w, &cost, eps, &reg, &src, Direction::RowsToCols, &cfg)
            .map_err(|e| e.to_string())?;
        let lhs = max_abs_diff(&a, &b);
        let rhs = max_abs_diff(&u, &w);
        ensure(lhs <= rhs + 1e-9, || format!("pair {k}: {lhs} > {rhs}"))?;
    }
    Ok(())
}

fn entropic_closed_form() -> Check {
    let mut rng = rng(606);
    let cfg = RootConfig::default();
    let reg = Regularizer::shannon();
    for k in 0..10 {
        let eps = [0.01, 0.1, 1.0][k % 3];
        let src = random_measure(&mut rng, 50, 2);
        let cost = random_cost(&mut rng, 50, 50, 1.0);
        let u = random_vec(&mut rng, 50, 1.0);
        for dir in [Direction::RowsToCols, Direction::ColsToRows] {
            let fast =
                cep_transform(&u, &cost, eps, &reg, &src, dir, &cfg).map_err(|e| e.to_string())?;
            let slow = cep_transform_generic(&u, &cost, eps, &reg, &src, dir, &cfg)
                .map_err(|e| e.to_string())?;
            let d = max_abs_diff(&fast, &slow);
            ensure(d <= 1e-9, || {
                format!("instance {k}, eps {eps}: paths differ by {d:.3e}")
            })?;
        }
    }
    Ok(())
}

fn gradient_check() -> Check {
    let mut rng = rng(707);
    let cfg = SolverConfig {
        marginal_tol: 1e-13,
        ..SolverConfig::default()
    };
    let h = 1e-5;
    for k in 0..10 {
        let reg = regs()[k % 3];
        let mu = random_measure(&mut rng, 10, 2);
        let nu = random_measure(&mut rng, 10, 2);
        let cost = random_cost(&mut rng, 10, 10, 1.0);
        let g = gradient(&mu, &nu, &cost, 0.5, &reg, &cfg).map_err(|e| e.to_string())?;
        let loss = |a: &DiscreteMeasure, b: &DiscreteMeasure| -> std::result::Result<f64, String> {
            Ok(ot_loss(a, b, &cost, 0.5, &reg, &cfg)
                .map_err(|e| e.to_string())?
                .value)
        };
        let shift = |m: &DiscreteMeasure, chi: &[f64], s: f64| {
            m.with_weights(
                m.weights()
                    .iter()
                    .zip(chi)
                    .map(|(w, c)| w + s * c)
                    .collect(),
            )
            .unwrap()
        };
        let chi = zero_sum(&mut rng, 10);
        let chi = chi.iter().map(|c| c * 0.05).collect::<Vec<_>>();
        let fd_mu =
            (loss(&shift(&mu, &chi, h), &nu)? - loss(&shift(&mu, &chi, -h), &nu)?) / (2.0 * h);
        let fd_nu =
            (loss(&mu, &shift(&nu, &chi, h))? - loss(&mu, &shift(&nu, &chi, -h))?) / (2.0 * h);
        for (fd, grad, side) in [(fd_mu, &g.g_mu, "mu"), (fd_nu, &g.g_nu, "nu")] {
            let an: f64 = grad.iter().zip(&chi).map(|(a, b)| a * b).sum();
            let err = (fd - an).abs();
            ensure(err <= 1e-4 * (1.0 + an.abs()), || {
                format!(
                    "instance {k} ({}), {side}: fd {fd:.10e} vs {an:.10e}",
                    reg.name()
                )
            })?;
        }
    }
    Ok(())
}

fn eps_limits() -> Check {
    let mut rng = rng(808);
    // (a) small eps on the line
    for (reg, rel) in [
        (Regularizer::shannon(), 0.05),
        (Regularizer::quadratic(), 0.10),
    ] {
        for _ in 0..2 {
            let xs: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            let ys: Vec<f64> = (0..5).map(|_| rng.gen_range(1.0..2.0)).collect();
            let mu = DiscreteMeasure::on_line(&xs, random_weights(&mut rng, 6)).unwrap();
            let nu = DiscreteMeasure::on_line(&ys, random_weights(&mut rng, 5)).unwrap();
            let exact = exact_ot_1d(&mu, &nu, 2.0).map_err(|e| e.to_string())?.value;
            let cost = build_cost(&mu, &nu, CostKind::SqEuclidean).unwrap();
            let c_inf = cost.sup_norm();
            let mut prev = f64::INFINITY;
            for f in [1.0, 0.1, 0.01, 0.001] {
                let loss = ot_loss(&mu, &nu, &cost, f * c_inf, &reg, &tight())
                    .map_err(|e| e.to_string())?;
                let dist = (loss.value - exact).abs();
                ensure(dist <= prev + 1e-8, || {
                    format!(
                        "{}: distance grew to {dist:.3e} at eps {:.3e}",
                        reg.name(),
                        f * c_inf
                    )
                })?;
                prev = dist;
            }
            ensure(prev <= rel * exact, || {
                format!(
                    "{}: relative distance {:.3e} at smallest eps",
                    reg.name(),
                    prev / exact
                )
            })?;
        }
    }
    // (b) large eps
    for reg in regs() {
        let mu = random_measure(&mut rng, 7, 2);
        let nu = random_measure(&mut rng, 5, 2);
        let cost = build_cost(&mu, &nu, CostKind::SqEuclidean).unwrap();
        let c_inf = cost.sup_norm();
        let eps = 100.0 * c_inf;
        let rows = limit_probe(&mu, &nu, &CostKind::SqEuclidean, &reg, &[eps], &tight())
            .map_err(|e| e.to_string())?;
        let limit = mmd_limit(&mu, &nu, &CostKind::SqEuclidean).map_err(|e| e.to_string())?;
        let row = &rows[0];
        ensure(row.plan_product_l1 <= 0.05, || {
            format!("{}: plan-product L1 {}", reg.name(), row.plan_product_l1)
        })?;
        let d = (row.divergence - limit).abs();
        ensure(d <= 0.05 * (1.0 + c_inf), || {
            format!(
                "{}: divergence {} vs limit {limit}",
                reg.name(),
                row.divergence
            )
        })?;
    }
    Ok(())
}

fn sparsity() -> Check {
    let mu = load_measure(&std::fs::read_to_string(fixture("a.json")).unwrap()).unwrap();
    let nu = load_measure(&std::fs::read_to_string(fixture("b.json")).unwrap()).unwrap();
    let cost = build_cost(&mu, &nu, CostKind::SqEuclidean).unwrap();
    let plan_for = |reg: Regularizer| -> std::result::Result<Coupling, String> {
        let problem = Problem::new(mu.clone(), nu.clone(), cost.clone(), 0.05, reg)
            .map_err(|e| e.to_string())?;
        let (pot, report) = solve(&problem, &tight()).map_err(|e| e.to_string())?;
        ensure(report.converged, || {
            format!("{} did not converge", reg.name())
        })?;
        Ok(recover_plan(&pot, &problem))
    };
    let quad = plan_for(Regularizer::quadratic())?;
    let zeros = quad.alpha.iter().filter(|a| **a == 0.0).count();
    ensure(zeros >= 1, || {
        format!("quadratic plan has no zero density: {:?}", quad.alpha)
    })?;
    let ent = plan_for(Regularizer::shannon())?;
    ensure(ent.alpha.iter().all(|a| *a > 0.0), || {
        format!("entropic plan has a zero: {:?}", ent.alpha)
    })
}

fn multi_marginal() -> Check {
    let mut rng = rng(909);
    for reg in regs() {
        let marginals: Vec<_> = (0..3)
            .map(|k| random_measure(&mut rng, 6 + 2 * k, 1))
            .collect();
        let cost =
            build_pairwise_cost(&marginals, CostKind::SqEuclidean).map_err(|e| e.to_string())?;
        let problem = MMProblem::new(marginals, cost, 0.1, reg).map_err(|e| e.to_string())?;
        let (pot, report) = mm_solve(&problem, &tight()).map_err(|e| e.to_string())?;
        let errs = mm_marginal_errors(&mm_recover_plan(&pot, &problem), &problem);
        ensure(report.converged && errs.iter().all(|e| *e <= 1e-8), || {
            format!("N=3 {}: errors {errs:?}", reg.name())
        })?;
    }
    for reg in regs() {
        let mu = random_measure(&mut rng, 5, 2);
        let nu = random_measure(&mut rng, 4, 2);
        let cost = build_cost(&mu, &nu, CostKind::SqEuclidean).unwrap();
        let p2 = Problem::new(mu.clone(), nu.clone(), cost.clone(), 0.2, reg).unwrap();
        let (pot2, _) = solve(&p2, &tight()).map_err(|e| e.to_string())?;
        let tensor = CostTensor::new(cost.entries().clone().into_dyn()).unwrap();
        let pn = MMProblem::new(vec![mu, nu], tensor, 0.2, reg).unwrap();
        let (potn, _) = mm_solve(&pn, &tight()).map_err(|e| e.to_string())?;
        let a = recover_plan(&pot2, &p2).masses;
        let b = mm_recover_plan(&potn, &pn).masses;
        let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
        ensure(d <= 1e-9, || {
            format!("N=2 {}: plans differ by {d:.3e}", reg.name())
        })?;
    }
    for reg in regs() {
        let m = random_measure(&mut rng, 4, 1);
        let marginals = vec![m.clone(), m.clone(), m];
        let cost = build_pairwise_cost(&marginals, CostKind::Euclidean).unwrap();
        let problem = MMProblem::new(marginals, cost, 0.15, reg).unwrap();
        let (pot, _) = mm_solve(&problem, &tight()).map_err(|e| e.to_string())?;
        let plan = mm_recover_plan(&pot, &problem);
        for (idx, g) in plan.masses.indexed_iter() {
            let (a, b, c) = (idx[0], idx[1], idx[2]);
            for perm in [[a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
                let d = (g - plan.masses[perm.as_slice()]).abs();
                ensure(d <= 1e-8, || {
                    format!("symmetric {}: cell {a}{b}{c} off by {d:.3e}", reg.name())
                })?;
            }
        }
    }
    Ok(())
}

fn barycenter() -> Check {
    let d0 = DiscreteMeasure::dirac(vec![0.0]).unwrap();
    let d2 = DiscreteMeasure::dirac(vec![2.0]).unwrap();
    let marginals = vec![d0, d2];
    let cost = build_barycenter_cost(&marginals, &[0.5, 0.5]).unwrap();
    for reg in regs() {
        let problem = MMProblem::new(marginals.clone(), cost.clone(), 0.1, reg).unwrap();
        let (pot, _) = mm_solve(&problem, &tight()).map_err(|e| e.to_string())?;
        let plan = mm_recover_plan(&pot, &problem);
        let total: f64 = plan.masses.iter().sum();
        let bary = barycenter_extract(&plan, &marginals, &[0.5, 0.5], MASS_FLOOR)
            .map_err(|e| e.to_string())?;
        ensure(
            bary.len() == 1 && (bary.points()[0][0] - 1.0).abs() <= 1e-9,
            || format!("{}: {bary:?}", reg.name()),
        )?;
        ensure((total - 1.0).abs() <= 1e-9, || {
            format!("{}: mass {total}", reg.name())
        })?;
    }
    Ok(())
}

fn strip_timing(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("\"elapsed_seconds\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let f = |n: &str| fixture(n);
    let runs: Vec<(&str, Vec<String>)> = vec![
        (
            "solve",
            vec![
                "solve".into(),
                "--mu".into(),
                f("line_a.json"),
                "--nu".into(),
                f("line_b.json"),
                "--eps".into(),
                "0.1".into(),
                "--reg".into(),
                "tsallis".into(),
                "--tsallis-p".into(),
                "1.5".into(),
                "--store-plan".into(),
            ],
        ),
        (
            "grad",
            vec![
                "grad".into(),
                "--mu".into(),
                f("plane_a.json"),
                "--nu".into(),
                f("plane_b.json"),
                "--eps".into(),
                "0.3".into(),
                "--reg".into(),
                "quadratic".into(),
            ],
        ),
        (
            "divergence",
            vec![
                "divergence".into(),
                "--mu".into(),
                f("line_a.json"),
                "--nu".into(),
                f("line_b.json"),
                "--eps".into(),
                "0.2".into(),
            ],
        ),
        (
            "limits",
            vec![
                "limits".into(),
                "--mu".into(),
                f("line_a.json"),
                "--nu".into(),
                f("line_b.json"),
                "--eps-ladder".into(),
                "1,0.3,0.1".into(),
            ],
        ),
        (
            "mm",
            vec![
                "mm-solve".into(),
                "--marginals".into(),
                f("line_a.json"),
                "--marginals".into(),
                f("line_b.json"),
                "--marginals".into(),
                f("a.json"),
                "--eps".into(),
                "0.2".into(),
                "--store-plan".into(),
            ],
        ),
        (
            "bary",
            vec![
                "barycenter".into(),
                "--marginals".into(),
                f("line_a.json"),
                "--marginals".into(),
                f("line_b.json"),
                "--eps".into(),
                "0.05".into(),
            ],
        ),
    ];
    for (name, args) in runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{name}{rep}.json"));
            let status = Command::new(env!("CARGO_BIN_EXE_phiot"))
                .args(&args)
                .arg("--out")
                .arg(&out)
                .status()
                .map_err(|e| e.to_string())?;
            ensure(status.code() == Some(0), || {
                format!("{name}: exit {status}")
            })?;
            let mut files = vec![strip_timing(&std::fs::read_to_string(&out).unwrap())];
            for suffix in ["plan.csv", "limits.csv", "barycenter.json"] {
                let side = phiot::cli::sibling_path(&out, suffix);
                if side.exists() {
                    files.push(std::fs::read_to_string(side).unwrap());
                }
            }
            outputs.push(files);
        }
        ensure(outputs[0] == outputs[1], || {
            format!("{name}: outputs differ between runs")
        })?;
    }
    Ok(())
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("duality gap and feasibility on random instances", duality),
        ("agreement with the brute-force oracle", oracle_equivalence),
        ("dual values nondecreasing", dual_monotonicity),
        (
            "transform oscillation and Lipschitz bounds",
            transform_bounds,
        ),
        ("transform is 1-Lipschitz in max norm", lipschitz_operator),
        (
            "entropic closed form matches the root solver",
            entropic_closed_form,
        ),
        (
            "gradient matches central finite differences",
            gradient_check,
        ),
        ("small and large eps limits", eps_limits),
        ("quadratic sparsity vs entropic positivity", sparsity),
        (
            "multi-marginal feasibility, reduction and symmetry",
            multi_marginal,
        ),
        ("barycenter of two Diracs", barycenter),
        ("CLI output is deterministic", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into())),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS criterion {:>2}: {name} ({secs:.2}s)", k + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {name} ({secs:.2}s): {msg}", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
