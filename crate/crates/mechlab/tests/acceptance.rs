//! Acceptance gate: one test per criterion, each ending in a single
//! `criterion N: PASS`/`FAIL` line.  Criteria 6 and 7 shell out to the
//! bundled scipy bridge (`tools/solve_mps.py`) for LP/MILP solves.

use std::path::{Path, PathBuf};
use std::process::Command;

use mechlab::audit::{
    check_anonymous, check_nonwasteful, check_strategyproof, check_symmetric,
    evaluate_objectives, AuditScope,
};
use mechlab::lpmodel::{build_ip, build_lp, build_model, BuildOptions, CapProbe, LpModel, Objective};
use mechlab::matching::{bvn_decompose, total_violation, RandomizedMatching};
use mechlab::mechanisms::Mechanism;
use mechlab::prefs::{GroupElement, Profile, ProfileIndex};
use mechlab::sim::{mean_gap, random_profile, run_comparison, SimConfig};
use mechlab::solver::LpOutcome;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EX: AuditScope = AuditScope::Exhaustive;

fn verdict(criterion: usize, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .unwrap()
        .to_path_buf()
}

/// Runs the external solver.  Ok(objective + solution text) on optimal,
/// Err(exit code) otherwise; exit 2 is infeasible/unbounded.
fn solve_external(mps: &Path) -> Result<(f64, String), i32> {
    let bridge = workspace_root().join("tools/solve_mps.py");
    let sol = mps.with_extension("sol");
    let out = Command::new("python3")
        .arg(&bridge)
        .arg(mps)
        .arg(&sol)
        .output()
        .expect("python3 with scipy is required for the extended criteria");
    if !out.status.success() {
        return Err(out.status.code().unwrap_or(-1));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let objective: f64 = stdout
        .split_whitespace()
        .last()
        .and_then(|t| t.parse().ok())
        .expect("bridge prints the objective");
    Ok((objective, std::fs::read_to_string(sol).unwrap()))
}

fn solve_model_external(model: &LpModel, name: &str) -> Result<(f64, Vec<f64>), i32> {
    let dir = std::env::temp_dir().join("mechlab-acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let mps = dir.join(format!("{name}.mps"));
    model.export_mps(&mps).unwrap();
    let (objective, text) = solve_external(&mps)?;
    Ok((objective, model.import_solution(&text).unwrap()))
}

#[test]
fn criterion_01_alg1_strategyproof_and_stable() {
    let mech = Mechanism::Alg1;
    let sp = check_strategyproof(&mech, 2, 2, 0.0, EX).unwrap();
    let mut blocking_free = true;
    for p in 0..16u64 {
        let profile = Profile::decode(ProfileIndex(p), 2, 2).unwrap();
        let matrix = mech.evaluate(&profile).unwrap();
        blocking_free &= total_violation(&matrix, &profile) == 0.0;
    }
    verdict(
        1,
        sp.pass && blocking_free,
        &format!(
            "zero dominance violations over {} checks and zero blocking pairs on all 16 profiles",
            sp.checked
        ),
    );
}

#[test]
fn criterion_02_exhaustive_benchmark_table() {
    let alg2 = evaluate_objectives(&Mechanism::parse("alg2").unwrap(), 3, 3, EX).unwrap();
    let sd = evaluate_objectives(&Mechanism::parse("sd:nat").unwrap(), 3, 3, EX).unwrap();
    let alg2_ok = (alg2.average_stv - 0.4166).abs() <= 1e-4 && alg2.worst_stv == 2.0;
    let sd_avg_ok = (sd.average_stv - 0.6666).abs() <= 1e-4;
    let sd_worst = sd.worst_stv;
    // the published table's worst case of 3.0000 is what enumeration
    // confirms; the prose's "up to four blocking pairs" does not occur
    println!(
        "sequential dictatorship worst case: computed {sd_worst} vs tabled 3.0000 \
         (the accompanying 'up to four' text overstates it)"
    );
    verdict(
        2,
        alg2_ok && sd_avg_ok && sd_worst == 3.0,
        &format!(
            "alg2 avg {:.4} worst {}, sd avg {:.4} worst {}",
            alg2.average_stv, alg2.worst_stv, sd.average_stv, sd_worst
        ),
    );
}

#[test]
fn criterion_03_randomized_dictatorship_rows() {
    let rsd1 = evaluate_objectives(&Mechanism::parse("rsd1").unwrap(), 3, 3, EX).unwrap();
    let rsd2 = evaluate_objectives(&Mechanism::parse("rsd2").unwrap(), 3, 3, EX).unwrap();
    let row_ok = |o: &mechlab::audit::ObjectiveSummary, avg: f64| {
        (o.average_stv - avg).abs() <= 5e-4
            && (o.worst_stv - 4.0 / 3.0).abs() <= 5e-4
            && o.average_waste.abs() <= 5e-4
    };
    verdict(
        3,
        row_ok(&rsd1, 0.6478) && row_ok(&rsd2, 0.6229),
        &format!(
            "rsd1 ({:.4}, {:.4}, {:.4}) vs (0.6478, 1.3333, 0), rsd2 ({:.4}, {:.4}, {:.4}) vs (0.6229, 1.3333, 0)",
            rsd1.average_stv,
            rsd1.worst_stv,
            rsd1.average_waste,
            rsd2.average_stv,
            rsd2.worst_stv,
            rsd2.average_waste
        ),
    );
}

#[test]
fn criterion_04_alg2_strategyproof_exhaustively() {
    let sp = check_strategyproof(&Mechanism::parse("alg2").unwrap(), 3, 3, 0.0, EX).unwrap();
    verdict(
        4,
        sp.pass && sp.checked >= 46_656 * 30,
        &format!("zero violations over {} dominance checks", sp.checked),
    );
}

#[test]
fn criterion_05_lp_end_to_end_2x2() {
    let mut pass = true;
    let mut notes = Vec::new();
    for (reduced, label) in [(false, "unreduced"), (true, "reduced")] {
        let model = build_lp(2, 2, Objective::A, false, reduced, reduced).unwrap();
        let (x, value) = match model.solve().unwrap() {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("2x2 LP not optimal: {other:?}"),
        };
        let mech = Mechanism::Tabular(model.extract_mechanism(&x).unwrap());
        let sp = check_strategyproof(&mech, 2, 2, 1e-7, EX).unwrap();
        let nw = check_nonwasteful(&mech, 2, 2, 1e-7, EX).unwrap();
        let obj = evaluate_objectives(&mech, 2, 2, EX).unwrap();
        let mut ok = value.abs() <= 1e-8 && sp.pass && nw.pass && obj.average_stv <= 1e-8;
        if reduced {
            ok &= check_anonymous(&mech, 2, 2, 1e-7, EX).unwrap().pass;
            ok &= check_symmetric(&mech, 2, 1e-7, EX).unwrap().pass;
        }
        pass &= ok;
        notes.push(format!("{label} optimum {value:.2e}"));
    }
    verdict(
        5,
        pass,
        &format!(
            "{}; extracted mechanisms pass the audits their model imposes",
            notes.join(", ")
        ),
    );
}

#[test]
fn criterion_06_n3_lp_optima_match_published_table() {
    let profiles = 46_656.0;
    let tol = 1e-3;
    let mut pass = true;
    let mut notes = Vec::new();

    // objective A rows: compare averages and audit the extractions
    for (nonwasteful, avg_target, waste_target, name) in [
        (false, 0.2286, 0.0249, "objA"),
        (true, 0.2348, 0.0, "objA-nw"),
    ] {
        let model = build_lp(3, 3, Objective::A, nonwasteful, true, true).unwrap();
        let (objective, x) = solve_model_external(&model, name).unwrap();
        let avg = objective / profiles;
        let mech = Mechanism::Tabular(model.extract_mechanism(&x).unwrap());
        let sp = check_strategyproof(&mech, 3, 3, 1e-5, EX).unwrap();
        let anon = check_anonymous(&mech, 3, 3, 1e-5, EX).unwrap();
        let sym = check_symmetric(&mech, 3, 1e-5, EX).unwrap();
        let obj = evaluate_objectives(&mech, 3, 3, EX).unwrap();
        let ok = (avg - avg_target).abs() <= tol
            && (obj.average_waste - waste_target).abs() <= tol
            && sp.pass
            && anon.pass
            && sym.pass;
        notes.push(format!(
            "{name} avg {avg:.4} (target {avg_target}), waste {:.4} (target {waste_target})",
            obj.average_waste
        ));
        pass &= ok;
    }

    // objective B optima, both variants
    for (nonwasteful, name) in [(false, "objB"), (true, "objB-nw")] {
        let model = build_lp(3, 3, Objective::B, nonwasteful, true, true).unwrap();
        let (objective, _) = solve_model_external(&model, name).unwrap();
        notes.push(format!("{name} worst {objective:.4}"));
        pass &= (objective - 0.5).abs() <= tol;
    }

    // the published objective-B waste (0.0505) identifies one particular
    // point of the degenerate optimal face: pin the worst case and the
    // assigned mass, then verify that point exists and is strategy-proof
    let pinned = build_model(&BuildOptions {
        n: 3,
        m: 3,
        objective: Objective::B,
        nonwasteful: false,
        anonymity: true,
        symmetry: true,
        integral: false,
        restrict: None,
        t_upper: Some(0.5 + tol),
        mass_target: Some((3.0 - 0.0505) * profiles),
    })
    .unwrap();
    let (_, x) = solve_model_external(&pinned, "objB-row").unwrap();
    let mech = Mechanism::Tabular(pinned.extract_mechanism(&x).unwrap());
    let sp = check_strategyproof(&mech, 3, 3, 1e-5, EX).unwrap();
    let anon = check_anonymous(&mech, 3, 3, 1e-5, EX).unwrap();
    let sym = check_symmetric(&mech, 3, 1e-5, EX).unwrap();
    let obj = evaluate_objectives(&mech, 3, 3, EX).unwrap();
    let row_ok = sp.pass
        && anon.pass
        && sym.pass
        && (obj.average_waste - 0.0505).abs() <= tol
        && obj.worst_stv <= 0.5 + 2.0 * tol;
    notes.push(format!(
        "objB face point: waste {:.4} (target 0.0505), worst {:.4}",
        obj.average_waste, obj.worst_stv
    ));
    pass &= row_ok;

    verdict(6, pass, &notes.join("; "));
}

#[test]
fn criterion_07_integral_impossibility_results() {
    // first result: no deterministic strategy-proof nonwasteful anonymous
    // mechanism at 3x3 (reduced IP infeasible)
    let ip = build_ip(3, 3, Objective::A, true, true, false).unwrap();
    let r1_infeasible = matches!(solve_model_external(&ip, "result1"), Err(2));

    // second result: worst case of any deterministic strategy-proof
    // mechanism is at least 2.  The committed core was found by the
    // propagation probe; re-verify it refutes, then certify by MILP.
    let core_text =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/cap1_core.txt"))
            .unwrap();
    let core: Vec<u64> = core_text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse().unwrap())
        .collect();
    let probe = CapProbe::new(3, 3, 1).unwrap();
    let core_refutes = probe.subset_refutes(&core);

    let restricted = build_model(&BuildOptions {
        n: 3,
        m: 3,
        objective: Objective::B,
        nonwasteful: false,
        anonymity: false,
        symmetry: false,
        integral: true,
        restrict: Some(core.clone()),
        t_upper: None,
        mass_target: None,
    })
    .unwrap();
    let milp_bound = match solve_model_external(&restricted, "result2") {
        Ok((objective, _)) => objective,
        Err(code) => panic!("restricted MILP did not solve (exit {code})"),
    };

    verdict(
        7,
        r1_infeasible && core_refutes && milp_bound >= 2.0 - 1e-6,
        &format!(
            "anonymous nonwasteful IP infeasible: {r1_infeasible}; {}-profile core refutes: \
             {core_refutes}; restricted worst-case MILP optimum {milp_bound}",
            core.len()
        ),
    );
}

#[test]
fn criterion_08_symmetrization_preserves_guarantees() {
    let zoo = ["alg2", "sd:nat", "alg3:nat", "rsd2"];
    let mut pass = true;
    let mut notes = Vec::new();
    for base in zoo {
        let input = Mechanism::parse(base).unwrap();
        let before = evaluate_objectives(&input, 3, 3, EX).unwrap();
        for (wrap, label) in [("anon", "anonymize"), ("sym", "symmetrize")] {
            let wrapped = Mechanism::parse(&format!("{wrap}({base})")).unwrap();
            let table = Mechanism::Tabular(wrapped.materialize(3, 3).unwrap());
            let target = if wrap == "anon" {
                check_anonymous(&table, 3, 3, 1e-9, EX).unwrap()
            } else {
                check_symmetric(&table, 3, 1e-9, EX).unwrap()
            };
            let sp = check_strategyproof(&table, 3, 3, 1e-9, EX).unwrap();
            let after = evaluate_objectives(&table, 3, 3, EX).unwrap();
            let ok = target.pass
                && sp.pass
                && after.average_stv <= before.average_stv + 1e-9
                && after.worst_stv <= before.worst_stv + 1e-9;
            if !ok {
                notes.push(format!(
                    "{label}({base}): target {}, sp {}, avg {:.4}->{:.4}, worst {:.4}->{:.4}",
                    target.pass,
                    sp.pass,
                    before.average_stv,
                    after.average_stv,
                    before.worst_stv,
                    after.worst_stv
                ));
            }
            pass &= ok;
        }
    }
    verdict(
        8,
        pass,
        &if pass {
            "both transforms keep strategy-proofness and never increase average or worst \
             violation across the zoo"
                .to_string()
        } else {
            notes.join("; ")
        },
    );
}

#[test]
fn criterion_09_simulation_reproduction() {
    let cfg = SimConfig {
        n_min: 2,
        n_max: 10,
        reps: 1000,
        seed: 20_260_823,
        mechanisms: vec!["sd:nat".into(), "alg3:nat".into()],
        output: None,
    };
    let results = run_comparison(&cfg).unwrap();
    let gaps = mean_gap(&results, "sd:nat", "alg3:nat");
    let mut mean_ok = true;
    for (&n, &gap) in &gaps {
        if !(0.15..=0.35).contains(&gap) {
            println!("mean gap out of band at n={n}: {gap:.4}");
            mean_ok = false;
        }
    }

    // per-instance difference confinement to {0, 1}
    let mut by_key = std::collections::BTreeMap::new();
    for r in &results.records {
        by_key
            .entry((r.n, r.rep))
            .or_insert_with(Vec::new)
            .push((r.mechanism.clone(), r.stv));
    }
    let mut oversized = 0usize;
    let mut total = 0usize;
    for pair in by_key.values() {
        let sd = pair.iter().find(|(m, _)| m == "sd:nat").unwrap().1;
        let alg3 = pair.iter().find(|(m, _)| m == "alg3:nat").unwrap().1;
        let diff = sd - alg3;
        total += 1;
        if !(diff == 0.0 || diff == 1.0) {
            oversized += 1;
        }
    }
    let confinement_ok = oversized == 0;

    // union-ordering symmetrization vs independent-orderings-and-interleave
    let avg = |d: &str| {
        evaluate_objectives(&Mechanism::parse(d).unwrap(), 3, 3, EX)
            .unwrap()
            .average_stv
    };
    let sd_union = avg("rsd1");
    let sd_inter = avg("rsd-interleave");
    let a3_union = avg("alg3-union");
    let a3_inter = avg("alg3-interleave");
    let ordering_ok = sd_union < sd_inter && a3_union < a3_inter;

    verdict(
        9,
        mean_ok && confinement_ok && ordering_ok,
        &format!(
            "mean gaps in [0.15,0.35] for all n: {mean_ok}; per-instance differences confined \
             to {{0,1}}: {confinement_ok} ({oversized} of {total} replications outside); \
             union beats interleave: dictatorship {sd_union:.4} < {sd_inter:.4} and \
             residual-pairing {a3_union:.4} < {a3_inter:.4}: {ordering_ok}"
        ),
    );
}

#[test]
fn criterion_10_property_suites() {
    let mut rng = ChaCha8Rng::seed_from_u64(1_010);

    // Birkhoff reconstruction on random doubly stochastic matrices
    let mut bvn_ok = true;
    for _ in 0..100 {
        let n = rng.gen_range(2..=6);
        let mut m = RandomizedMatching::zero(n, n);
        for _ in 0..12 {
            let w: f64 = rng.gen_range(0.01..1.0);
            let mut cols: Vec<usize> = (0..n).collect();
            cols.shuffle(&mut rng);
            for (s, &c) in cols.iter().enumerate() {
                m.add(s, c, w);
            }
        }
        let scale = 1.0 / m.row_sum(0);
        let m = RandomizedMatching::from_values(
            n,
            n,
            (0..n)
                .flat_map(|s| (0..n).map(move |c| (s, c)))
                .map(|(s, c)| m.get(s, c) * scale)
                .collect(),
        )
        .unwrap();
        let decomposition = bvn_decompose(&m, 1e-9).unwrap();
        bvn_ok &= decomposition.reconstruct(n, n).max_abs_diff(&m) <= 1e-9;
    }

    // convexity of the violation in the matching argument
    let mut convex_ok = true;
    for _ in 0..100 {
        let n = rng.gen_range(2..=4);
        let profile = random_profile(&mut rng, n, n);
        let draw = |rng: &mut ChaCha8Rng| {
            let mut mat = RandomizedMatching::zero(n, n);
            for _ in 0..6 {
                let w: f64 = rng.gen_range(0.01..0.2);
                let mut cols: Vec<usize> = (0..n).collect();
                cols.shuffle(rng);
                for (s, &c) in cols.iter().enumerate() {
                    mat.add(s, c, w);
                }
            }
            mat
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let lambda: f64 = rng.gen_range(0.0..1.0);
        let mut mix = RandomizedMatching::zero(n, n);
        mix.scaled_add(lambda, &a);
        mix.scaled_add(1.0 - lambda, &b);
        let lhs = total_violation(&mix, &profile);
        let rhs = lambda * total_violation(&a, &profile)
            + (1.0 - lambda) * total_violation(&b, &profile);
        convex_ok &= lhs <= rhs + 1e-9;
    }

    // orbit transport covariance of an equivariant mechanism
    let mech = Mechanism::parse("rsd2").unwrap();
    let group = mechlab::prefs::enumerate_group(3, 3, true).unwrap();
    let mut covariant_ok = true;
    for _ in 0..500 {
        let profile = random_profile(&mut rng, 3, 3);
        let g: &GroupElement = &group[rng.gen_range(0..group.len())];
        let moved = g.apply(&profile).unwrap();
        let lhs = mech.evaluate(&moved).unwrap();
        let rhs = mech.evaluate(&profile).unwrap().transport(g);
        covariant_ok &= lhs.max_abs_diff(&rhs) <= 1e-9;
    }

    // exact MPS-side round-trip of a feasible point
    let model = build_lp(2, 2, Objective::A, true, false, false).unwrap();
    let mut values = vec![0.0; model.vars.len()];
    for (rep_pos, &p) in model.reps.iter().enumerate() {
        let profile = Profile::decode(ProfileIndex(p), 2, 2).unwrap();
        let matrix = Mechanism::Alg1.evaluate(&profile).unwrap();
        for s in 0..2 {
            for c in 0..2 {
                values[rep_pos * 4 + s * 2 + c] = matrix.get(s, c);
            }
        }
    }
    let text: String = model
        .vars
        .iter()
        .zip(&values)
        .map(|(v, x)| format!("{} {x:.17}\n", v.key.name()))
        .collect();
    let imported = model.import_solution(&text).unwrap();
    let roundtrip_ok = imported
        .iter()
        .zip(&values)
        .all(|(a, b)| a.to_bits() == b.to_bits());

    verdict(
        10,
        bvn_ok && convex_ok && covariant_ok && roundtrip_ok,
        &format!(
            "birkhoff {bvn_ok}, convexity {convex_ok}, transport covariance {covariant_ok}, \
             round-trip {roundtrip_ok}"
        ),
    );
}
