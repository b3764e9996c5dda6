//! The `verify` subcommand: executable checks of the departure
//! inequalities, sampler distribution, and Little's law.

use std::path::PathBuf;
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use switchsim::analysis::{verify_strong_departure, verify_weak_departure_inequality};
use switchsim::matrix::{departures_from, Matching, QueueMatrix};
use switchsim::scheduler::greedy_maximal_schedule;
use switchsim::sim::{littles_law_check, run};
use switchsim::{PatternKind, ProportionalSampler, SimConfig};

struct Check {
    name: String,
    pass: bool,
    lhs: f64,
    rhs: f64,
    detail: String,
}

fn random_q(rng: &mut ChaCha8Rng, n: usize, max: u64) -> QueueMatrix {
    let mut q = QueueMatrix::zero(n);
    for i in 0..n {
        for j in 0..n {
            q.set(i, j, rng.gen_range(0..=max)).unwrap();
        }
    }
    q
}

pub fn cmd_verify(
    n_max: usize,
    trials: u64,
    seed: u64,
    out: Option<PathBuf>,
    inject_broken: bool,
) -> anyhow::Result<ExitCode> {
    if n_max > 6 {
        anyhow::bail!("n-max must be <= 6 (exact enumeration)");
    }
    if trials == 0 {
        println!("warning: trials=0, all sweeps are vacuous");
    }
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // weak departure inequality: exact oracle over random queue states
    {
        let mut worst_margin = f64::INFINITY;
        let mut pass = true;
        for _ in 0..trials {
            let n = rng.gen_range(2..=n_max.max(2));
            let q = random_q(&mut rng, n, 6);
            let rep = if inject_broken {
                // a scheduler that never matches departs nothing: lhs = 0
                switchsim::analysis::WeakInequalityReport {
                    lhs: 0.0,
                    rhs: q.total() as f64,
                    holds: q.total() == 0,
                }
            } else {
                verify_weak_departure_inequality(&q)?
            };
            worst_margin = worst_margin.min(rep.lhs - rep.rhs);
            pass &= rep.holds;
        }
        checks.push(Check {
            name: "weak-departure-inequality".into(),
            pass,
            lhs: worst_margin,
            rhs: 0.0,
            detail: format!("worst lhs-rhs margin over {trials} instances"),
        });
    }

    // strong departure property for the greedy maximal scheduler
    {
        let mut pass = true;
        let mut violations = 0u64;
        for _ in 0..trials {
            let n = rng.gen_range(2..=n_max.max(2));
            let q = random_q(&mut rng, n, 4);
            let m = if inject_broken {
                Matching::new(n)
            } else {
                greedy_maximal_schedule(&q, &mut rng)
            };
            let d = departures_from(&m, &q);
            if !verify_strong_departure(&q, &d) {
                violations += 1;
                pass = false;
            }
        }
        checks.push(Check {
            name: "strong-departure-property".into(),
            pass,
            lhs: violations as f64,
            rhs: 0.0,
            detail: format!("violations over {trials} greedy schedules"),
        });
    }

    // sampler law: chi-square goodness of fit at the 99% level
    {
        let sampler = ProportionalSampler::new(&[2, 2, 4]);
        let draws = 1_000_000u64;
        let mut counts = [0u64; 3];
        for _ in 0..draws {
            counts[sampler.sample(&mut rng).unwrap()] += 1;
        }
        let expected = [0.25, 0.25, 0.5].map(|p| p * draws as f64);
        let chi2: f64 = counts
            .iter()
            .zip(expected.iter())
            .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
            .sum();
        checks.push(Check {
            name: "sampler-chi-square".into(),
            pass: chi2 < 9.21,
            lhs: chi2,
            rhs: 9.21,
            detail: format!("{draws} draws from weights [2,2,4], 2 dof, 99% critical"),
        });
    }

    // Little's law on a converged low-load run
    {
        let cfg = SimConfig::new(8, "qps:r=1", "bernoulli", PatternKind::Uniform, 0.3, seed);
        let r = run(&cfg)?;
        let lam_total = r.packets_arrived as f64 / r.slots as f64;
        let disc = littles_law_check(&r, lam_total);
        checks.push(Check {
            name: "littles-law".into(),
            pass: r.converged && disc <= 0.02,
            lhs: disc,
            rhs: 0.02,
            detail: "relative discrepancy on a converged qps:r=1 run".into(),
        });
    }

    let mut csv = String::from("# switchsim verify csv v1\ncheck,pass,lhs,rhs,detail\n");
    let mut all_pass = true;
    for c in &checks {
        all_pass &= c.pass;
        println!(
            "{} {} (lhs={}, rhs={}; {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.lhs,
            c.rhs,
            c.detail
        );
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            c.name, c.pass, c.lhs, c.rhs, c.detail
        ));
    }
    if let Some(p) = out {
        std::fs::write(&p, csv)?;
    }
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
