//! The instability-minimizing linear program: model generation with
//! optional orbit reduction, free-format MPS export, solution import, and
//! mechanism extraction.
//!
//! Variables live per profile representative: `assign` is the matching
//! probability x[p,s,c], `slack` the linearization v[p,s,c] of the positive
//! part in the stability objective, and `maxbound` the scalar t of the
//! worst-case objective.
//!
//! Reduced models additionally carry stabilizer-invariance rows: a
//! representative fixed by a nontrivial relabeling must have an outcome
//! fixed by it too, otherwise expansion through the orbit table would be
//! ill-defined and representative-level strategy-proofness rows would not
//! imply the full constraint set.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::matching::{blocking_pairs, DeterministicMatching, RandomizedMatching};
use crate::mechanisms::TabularMechanism;
use crate::prefs::{
    all_agents, build_orbit_table, misreports, profile_count, OrbitTable, Profile,
    ProfileIndex, Side, PROFILE_ENUM_CAP,
};
use crate::solver::{self, Constraint, Lp, Rel};
use crate::{Error, Result};

/// Cap on generated rows + variables, to fail fast instead of thrashing.
pub const MODEL_CELL_CAP: u64 = 50_000_000;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum Objective {
    /// Sum of stability violations over all profiles (orbit-weighted when
    /// reduced).
    A,
    /// Worst-case violation across profiles via the maxbound variable.
    B,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VarKind {
    Assign,
    Slack,
    MaxBound,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VarKey {
    pub kind: VarKind,
    /// Representative profile (absent for maxbound).
    pub profile: Option<ProfileIndex>,
    pub s: Option<usize>,
    pub c: Option<usize>,
}

impl VarKey {
    /// Reversible solver-facing name: `x_p<idx>_s<i>_c<j>`, `v_...`, `t`.
    /// Agent indices are 1-based.
    pub fn name(&self) -> String {
        match self.kind {
            VarKind::MaxBound => "t".to_string(),
            kind => {
                let tag = if kind == VarKind::Assign { 'x' } else { 'v' };
                format!(
                    "{tag}_p{}_s{}_c{}",
                    self.profile.unwrap().0,
                    self.s.unwrap() + 1,
                    self.c.unwrap() + 1
                )
            }
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        if name == "t" {
            return Ok(Self { kind: VarKind::MaxBound, profile: None, s: None, c: None });
        }
        let bad = || Error::Solution(format!("unparseable variable name `{name}`"));
        let kind = match name.as_bytes().first() {
            Some(b'x') => VarKind::Assign,
            Some(b'v') => VarKind::Slack,
            _ => return Err(bad()),
        };
        let mut parts = name[1..].split('_').filter(|p| !p.is_empty());
        let p = parts.next().and_then(|p| p.strip_prefix('p')).ok_or_else(bad)?;
        let s = parts.next().and_then(|p| p.strip_prefix('s')).ok_or_else(bad)?;
        let c = parts.next().and_then(|p| p.strip_prefix('c')).ok_or_else(bad)?;
        let p: u64 = p.parse().map_err(|_| bad())?;
        let s: usize = s.parse().map_err(|_| bad())?;
        let c: usize = c.parse().map_err(|_| bad())?;
        if s == 0 || c == 0 {
            return Err(bad());
        }
        Ok(Self {
            kind,
            profile: Some(ProfileIndex(p)),
            s: Some(s - 1),
            c: Some(c - 1),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Variable {
    pub key: VarKey,
    pub lo: f64,
    pub hi: f64,
    pub obj: f64,
    pub integral: bool,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub rel: Rel,
    pub rhs: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ModelFlags {
    pub n: usize,
    pub m: usize,
    pub objective: Objective,
    pub nonwasteful: bool,
    pub anonymity: bool,
    pub symmetry: bool,
    pub integral: bool,
    pub restricted: bool,
}

pub struct LpModel {
    pub flags: ModelFlags,
    pub vars: Vec<Variable>,
    pub rows: Vec<Row>,
    /// Representative profile indices, one variable block each.
    pub reps: Vec<u64>,
    /// Orbit weights aligned with `reps` (all 1 when unreduced).
    pub weights: Vec<u64>,
    /// Present iff the model is orbit reduced.
    pub orbit: Option<Arc<OrbitTable>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelSummary {
    pub vars: usize,
    pub rows: usize,
    pub nnz: usize,
    pub integral_vars: usize,
    pub representatives: usize,
    pub flags: ModelFlags,
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub n: usize,
    pub m: usize,
    pub objective: Objective,
    pub nonwasteful: bool,
    pub anonymity: bool,
    pub symmetry: bool,
    pub integral: bool,
    /// Restrict generation to these profile indices (unreduced only);
    /// strategy-proofness rows are kept when both endpoints are inside,
    /// making the model a sound relaxation of the full one.
    pub restrict: Option<Vec<u64>>,
    /// Tighten the maxbound variable's upper bound (objective B only);
    /// pins solutions to a known optimal face.
    pub t_upper: Option<f64>,
    /// Equality row fixing the orbit-weighted total assigned mass; selects
    /// solutions with a prescribed aggregate waste.
    pub mass_target: Option<f64>,
}

pub fn build_lp(
    n: usize,
    m: usize,
    objective: Objective,
    nonwasteful: bool,
    anonymity: bool,
    symmetry: bool,
) -> Result<LpModel> {
    build_model(&BuildOptions {
        n,
        m,
        objective,
        nonwasteful,
        anonymity,
        symmetry,
        integral: false,
        restrict: None,
        t_upper: None,
        mass_target: None,
    })
}

pub fn build_ip(
    n: usize,
    m: usize,
    objective: Objective,
    nonwasteful: bool,
    anonymity: bool,
    symmetry: bool,
) -> Result<LpModel> {
    build_model(&BuildOptions {
        n,
        m,
        objective,
        nonwasteful,
        anonymity,
        symmetry,
        integral: true,
        restrict: None,
        t_upper: None,
        mass_target: None,
    })
}

pub fn build_model(opts: &BuildOptions) -> Result<LpModel> {
    let (n, m) = (opts.n, opts.m);
    if opts.symmetry && !opts.anonymity {
        return Err(Error::Model(
            "symmetry reduction requires anonymity (the group includes relabelings)".into(),
        ));
    }
    if opts.symmetry && n != m {
        return Err(Error::SwapUnbalanced { n, m });
    }
    if opts.restrict.is_some() && opts.anonymity {
        return Err(Error::Model("restricted models must be unreduced".into()));
    }
    let count = profile_count(n, m)?;

    let reduced = opts.anonymity;
    let orbit = if reduced {
        Some(Arc::new(build_orbit_table(n, m, opts.symmetry)?))
    } else {
        None
    };
    let (reps, weights): (Vec<u64>, Vec<u64>) = match (&orbit, &opts.restrict) {
        (Some(t), _) => (t.reps().to_vec(), t.orbit_sizes().to_vec()),
        (None, Some(list)) => {
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            for &p in &sorted {
                if p >= count {
                    return Err(Error::IndexOutOfRange { index: p, count });
                }
            }
            let w = vec![1u64; sorted.len()];
            (sorted, w)
        }
        (None, None) => {
            if count > PROFILE_ENUM_CAP {
                return Err(Error::SizeGate(format!(
                    "unreduced model over {count} profiles exceeds the cap"
                )));
            }
            ((0..count).collect(), vec![1; count as usize])
        }
    };

    let nm = n * m;
    let nvars = reps.len() * 2 * nm + usize::from(opts.objective == Objective::B);
    let est_rows = reps.len() as u64
        * (nm as u64 + (n + m) as u64 + ((n + m) as u64 * 6 * nm as u64));
    if nvars as u64 + est_rows > MODEL_CELL_CAP {
        return Err(Error::SizeGate(format!(
            "model would need about {nvars} variables and {est_rows} rows"
        )));
    }

    // variable layout: assign block, slack block, then maxbound
    let slack_base = reps.len() * nm;
    let t_index = 2 * slack_base;
    let assign_var = |rep_pos: usize, s: usize, c: usize| rep_pos * nm + s * m + c;
    let slack_var = |rep_pos: usize, s: usize, c: usize| slack_base + rep_pos * nm + s * m + c;

    let mut vars = Vec::with_capacity(nvars);
    for (&kind, integral) in [(VarKind::Assign, opts.integral), (VarKind::Slack, false)].iter().map(|(k, i)| (k, *i)) {
        for (rep_pos, &p) in reps.iter().enumerate() {
            for s in 0..n {
                for c in 0..m {
                    let obj = if kind == VarKind::Slack && opts.objective == Objective::A {
                        weights[rep_pos] as f64
                    } else {
                        0.0
                    };
                    vars.push(Variable {
                        key: VarKey {
                            kind,
                            profile: Some(ProfileIndex(p)),
                            s: Some(s),
                            c: Some(c),
                        },
                        lo: 0.0,
                        hi: if kind == VarKind::Assign { 1.0 } else { f64::INFINITY },
                        obj,
                        integral,
                    });
                }
            }
        }
    }
    if opts.objective == Objective::B {
        vars.push(Variable {
            key: VarKey { kind: VarKind::MaxBound, profile: None, s: None, c: None },
            lo: 0.0,
            hi: opts.t_upper.unwrap_or(f64::INFINITY),
            obj: 1.0,
            integral: false,
        });
    } else if opts.t_upper.is_some() {
        return Err(Error::Model(
            "the worst-case bound only exists under objective B".into(),
        ));
    }

    // position lookup for misreported profiles
    let rep_pos_of = |q: ProfileIndex| -> Option<(usize, Option<&crate::prefs::GroupElement>)> {
        match &orbit {
            Some(t) => {
                let (_, witness) = t.rep_of(q);
                Some((t.rep_position(q), Some(witness)))
            }
            None => None,
        }
    };
    let direct_pos: Option<HashMap<u64, usize>> = if orbit.is_none() {
        Some(reps.iter().enumerate().map(|(i, &p)| (p, i)).collect())
    } else {
        None
    };

    let rows: Vec<Vec<Row>> = reps
        .par_iter()
        .enumerate()
        .map(|(rep_pos, &pidx)| -> Result<Vec<Row>> {
            let profile = Profile::decode(ProfileIndex(pidx), n, m)?;
            let mut rows = Vec::new();

            // stability linearization: v + x + upper-contour sums >= 1
            for s in 0..n {
                for c in 0..m {
                    let mut coeffs = vec![(slack_var(rep_pos, s, c), 1.0), (assign_var(rep_pos, s, c), 1.0)];
                    for &c2 in profile.student_pref(s).ranking() {
                        if c2 == c {
                            break;
                        }
                        coeffs.push((assign_var(rep_pos, s, c2), 1.0));
                    }
                    for &s2 in profile.school_pref(c).ranking() {
                        if s2 == s {
                            break;
                        }
                        coeffs.push((assign_var(rep_pos, s2, c), 1.0));
                    }
                    rows.push(Row {
                        name: format!("sv_p{pidx}_s{}_c{}", s + 1, c + 1),
                        coeffs,
                        rel: Rel::Ge,
                        rhs: 1.0,
                    });
                }
            }

            // feasibility sums (equalities when nonwasteful)
            let rel = if opts.nonwasteful { Rel::Eq } else { Rel::Le };
            for s in 0..n {
                rows.push(Row {
                    name: format!("row_p{pidx}_s{}", s + 1),
                    coeffs: (0..m).map(|c| (assign_var(rep_pos, s, c), 1.0)).collect(),
                    rel,
                    rhs: 1.0,
                });
            }
            for c in 0..m {
                rows.push(Row {
                    name: format!("col_p{pidx}_c{}", c + 1),
                    coeffs: (0..n).map(|s| (assign_var(rep_pos, s, c), 1.0)).collect(),
                    rel,
                    rhs: 1.0,
                });
            }

            // strategy-proofness: truthful upper-contour mass dominates the
            // misreport's at every threshold
            for agent in all_agents(n, m) {
                for (dev_no, dev) in misreports(&profile, agent).into_iter().enumerate() {
                    let q = profile.misreport(agent, dev)?.encode();
                    let located = match (&direct_pos, rep_pos_of(q)) {
                        (Some(map), _) => match map.get(&q.0) {
                            Some(&pos) => (pos, None),
                            None => continue, // outside the restriction: relaxation
                        },
                        (None, Some((pos, w))) => (pos, w),
                        _ => unreachable!(),
                    };
                    let (q_pos, witness) = located;
                    let truth = profile.pref_of(agent);
                    for t in 0..truth.len() {
                        let mut acc: HashMap<usize, f64> = HashMap::new();
                        for &partner in &truth.ranking()[..=t] {
                            let (s, c) = match agent.side {
                                Side::Student => (agent.index, partner),
                                Side::School => (partner, agent.index),
                            };
                            *acc.entry(assign_var(rep_pos, s, c)).or_default() += 1.0;
                            // locate the deviated profile's cell in its block
                            let (qs, qc) = match witness {
                                Some(g) => g.source_cell(s, c),
                                None => (s, c),
                            };
                            *acc.entry(assign_var(q_pos, qs, qc)).or_default() -= 1.0;
                        }
                        let coeffs: Vec<(usize, f64)> =
                            acc.into_iter().filter(|&(_, v)| v != 0.0).collect();
                        if coeffs.is_empty() {
                            continue;
                        }
                        rows.push(Row {
                            name: format!("sp_p{pidx}_{agent}_d{dev_no}_t{t}"),
                            coeffs,
                            rel: Rel::Ge,
                            rhs: 0.0,
                        });
                    }
                }
            }

            // stabilizer invariance (reduced models)
            if let Some(t) = &orbit {
                let mut seen: std::collections::HashSet<(usize, usize)> =
                    std::collections::HashSet::new();
                for g in t.stabilizer(&profile)? {
                    if g.is_identity() {
                        continue;
                    }
                    for s in 0..n {
                        for c in 0..m {
                            let a = assign_var(rep_pos, s, c);
                            let (s2, c2) = g.source_cell(s, c);
                            let b = assign_var(rep_pos, s2, c2);
                            if a == b {
                                continue;
                            }
                            let key = (a.min(b), a.max(b));
                            if !seen.insert(key) {
                                continue;
                            }
                            rows.push(Row {
                                name: format!("inv_p{pidx}_{}", seen.len()),
                                coeffs: vec![(key.0, 1.0), (key.1, -1.0)],
                                rel: Rel::Eq,
                                rhs: 0.0,
                            });
                        }
                    }
                }
            }

            // worst-case bound rows
            if opts.objective == Objective::B {
                let mut coeffs: Vec<(usize, f64)> = (0..n)
                    .flat_map(|s| (0..m).map(move |c| (s, c)))
                    .map(|(s, c)| (slack_var(rep_pos, s, c), 1.0))
                    .collect();
                coeffs.push((t_index, -1.0));
                rows.push(Row {
                    name: format!("cap_p{pidx}"),
                    coeffs,
                    rel: Rel::Le,
                    rhs: 0.0,
                });
            }

            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<Row> = rows.into_iter().flatten().collect();
    if let Some(target) = opts.mass_target {
        let coeffs: Vec<(usize, f64)> = (0..reps.len())
            .flat_map(|rep_pos| {
                let w = weights[rep_pos] as f64;
                (0..nm).map(move |cell| (rep_pos * nm + cell, w))
            })
            .collect();
        rows.push(Row {
            name: "mass".into(),
            coeffs,
            rel: Rel::Eq,
            rhs: target,
        });
    }

    Ok(LpModel {
        flags: ModelFlags {
            n,
            m,
            objective: opts.objective,
            nonwasteful: opts.nonwasteful,
            anonymity: opts.anonymity,
            symmetry: opts.symmetry,
            integral: opts.integral,
            restricted: opts.restrict.is_some(),
        },
        vars,
        rows,
        reps,
        weights,
        orbit,
    })
}

impl LpModel {
    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            vars: self.vars.len(),
            rows: self.rows.len(),
            nnz: self.rows.iter().map(|r| r.coeffs.len()).sum(),
            integral_vars: self.vars.iter().filter(|v| v.integral).count(),
            representatives: self.reps.len(),
            flags: self.flags,
        }
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string(&self.summary()).expect("summary serializes")
    }

    fn to_solver_lp(&self) -> Lp {
        Lp {
            objective: self.vars.iter().map(|v| v.obj).collect(),
            bounds: self.vars.iter().map(|v| (v.lo, v.hi)).collect(),
            constraints: self
                .rows
                .iter()
                .map(|r| Constraint { coeffs: r.coeffs.clone(), rel: r.rel, rhs: r.rhs })
                .collect(),
        }
    }

    /// Internal simplex solve; integral models must go through the bridge.
    pub fn solve(&self) -> Result<solver::LpOutcome> {
        if self.flags.integral {
            return Err(Error::Model(
                "model has integer markers; export it with export_mps and use an external solver"
                    .into(),
            ));
        }
        solver::solve(&self.to_solver_lp())
    }

    /// Bound and row check of an assignment (integrality not enforced).
    pub fn verify(&self, assignment: &[f64]) -> Result<solver::VerifyReport> {
        solver::verify_solution(&self.to_solver_lp(), assignment)
    }

    /// Free-format MPS with INTORG/INTEND markers around integral columns.
    pub fn export_mps(&self, dest: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("NAME          MECHLAB\n");
        out.push_str("ROWS\n N  COST\n");
        for row in &self.rows {
            let tag = match row.rel {
                Rel::Le => 'L',
                Rel::Ge => 'G',
                Rel::Eq => 'E',
            };
            writeln!(out, " {tag}  {}", row.name).unwrap();
        }
        // column-major entries
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.vars.len()];
        for (ri, row) in self.rows.iter().enumerate() {
            for &(vi, coeff) in &row.coeffs {
                cols[vi].push((ri, coeff));
            }
        }
        out.push_str("COLUMNS\n");
        let mut in_int = false;
        let mut marker = 0usize;
        for (vi, var) in self.vars.iter().enumerate() {
            if var.integral != in_int {
                let tag = if var.integral { "'INTORG'" } else { "'INTEND'" };
                writeln!(out, "    MARKER{marker}  'MARKER'  {tag}").unwrap();
                marker += 1;
                in_int = var.integral;
            }
            let name = var.key.name();
            if var.obj != 0.0 {
                writeln!(out, "    {name}  COST  {}", fmt_num(var.obj)).unwrap();
            }
            for &(ri, coeff) in &cols[vi] {
                writeln!(out, "    {name}  {}  {}", self.rows[ri].name, fmt_num(coeff)).unwrap();
            }
        }
        if in_int {
            writeln!(out, "    MARKER{marker}  'MARKER'  'INTEND'").unwrap();
        }
        out.push_str("RHS\n");
        for row in &self.rows {
            if row.rhs != 0.0 {
                writeln!(out, "    RHS  {}  {}", row.name, fmt_num(row.rhs)).unwrap();
            }
        }
        out.push_str("BOUNDS\n");
        for var in &self.vars {
            let name = var.key.name();
            if var.lo != 0.0 {
                writeln!(out, " LO BND  {name}  {}", fmt_num(var.lo)).unwrap();
            }
            if var.hi.is_finite() {
                writeln!(out, " UP BND  {name}  {}", fmt_num(var.hi)).unwrap();
            }
        }
        out.push_str("ENDATA\n");
        std::fs::write(dest, out)?;
        Ok(())
    }

    /// Parses whitespace-separated `name value` lines into a full
    /// assignment vector; unknown names are rejected, absent variables are
    /// an error listing the first few missing names.
    pub fn import_solution(&self, text: &str) -> Result<Vec<f64>> {
        let index: HashMap<String, usize> = self
            .vars
            .iter()
            .enumerate()
            .map(|(i, v)| (v.key.name(), i))
            .collect();
        let mut values = vec![f64::NAN; self.vars.len()];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (name, value) = match (parts.next(), parts.next(), parts.next()) {
                (Some(n), Some(v), None) => (n, v),
                _ => {
                    return Err(Error::Solution(format!(
                        "line {}: expected `name value`",
                        lineno + 1
                    )))
                }
            };
            let vi = *index.get(name).ok_or_else(|| {
                Error::Solution(format!("line {}: unknown variable `{name}`", lineno + 1))
            })?;
            let v: f64 = value.parse().map_err(|_| {
                Error::Solution(format!("line {}: bad value `{value}`", lineno + 1))
            })?;
            values[vi] = v;
        }
        let missing: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_nan())
            .map(|(i, _)| self.vars[i].key.name())
            .collect();
        if !missing.is_empty() {
            let shown = missing.iter().take(8).cloned().collect::<Vec<_>>().join(", ");
            return Err(Error::Solution(format!(
                "{} variables missing from the solution file ({shown}{})",
                missing.len(),
                if missing.len() > 8 { ", ..." } else { "" }
            )));
        }
        Ok(values)
    }

    /// Turns a feasible assignment into a tabular mechanism over the
    /// model's representatives (orbit-expandable when reduced).
    pub fn extract_mechanism(&self, assignment: &[f64]) -> Result<TabularMechanism> {
        let report = self.verify(assignment)?;
        if report.max_violation > 1e-6 {
            return Err(Error::Solution(format!(
                "assignment violates the model by {:.3e}",
                report.max_violation
            )));
        }
        let (n, m) = (self.flags.n, self.flags.m);
        let nm = n * m;
        let mut table = TabularMechanism::new(n, m, self.orbit.clone());
        for (rep_pos, &p) in self.reps.iter().enumerate() {
            let mut r = RandomizedMatching::zero(n, m);
            for s in 0..n {
                for c in 0..m {
                    r.set(s, c, assignment[rep_pos * nm + s * m + c].clamp(0.0, 1.0));
                }
            }
            table.insert(ProfileIndex(p), r);
        }
        Ok(table)
    }

    /// Objective value of an assignment (orbit weighting included).
    pub fn objective_value(&self, assignment: &[f64]) -> f64 {
        self.vars
            .iter()
            .zip(assignment)
            .map(|(v, x)| v.obj * x)
            .sum()
    }
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v:.12}")
    }
}

/// Constraint-propagation probe over deterministic outcomes: per profile
/// the domain holds every partial matching with total violation at most
/// `cap`; misreport edges prune pairs violating deterministic dominance
/// (the truthful partner must be weakly better than under any
/// single-agent deviation, judged by the truth-teller's preference, in
/// both directions).
///
/// An emptied domain refutes the existence of a strategy-proof
/// deterministic mechanism with worst-case violation `cap`. The probe can
/// then shrink the witness to a small profile subset whose induced
/// subproblem still refutes, which a restricted integer model can certify
/// with an external solver.
#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub refuted: bool,
    /// Profile indices of a refuting subproblem (empty if not refuted).
    pub core: Vec<u64>,
    pub min_domain: usize,
    pub cap: usize,
}

pub struct CapProbe {
    count: usize,
    cap: usize,
    /// partner_of[agent][outcome]: usize::MAX = unmatched
    partner_of: Vec<Vec<usize>>,
    /// ranks[p][agent][partner]; unmatched ranks below everything
    ranks: Vec<Vec<Vec<u8>>>,
    unmatched_rank: usize,
    full_domain: Vec<u64>,
    /// misreport edges: (neighbor profile, deviating agent)
    edges: Vec<Vec<(u32, u8)>>,
}

impl CapProbe {
    pub fn new(n: usize, m: usize, cap: usize) -> Result<Self> {
        let count = profile_count(n, m)?;
        if count > PROFILE_ENUM_CAP {
            return Err(Error::SizeGate(format!("{count} profiles cannot be probed")));
        }
        let count = count as usize;
        let outcomes = partial_matchings(n, m);
        if outcomes.len() > 64 {
            return Err(Error::SizeGate(format!(
                "{} outcomes exceed the 64-bit domain representation",
                outcomes.len()
            )));
        }
        let agents = all_agents(n, m);

        let partner_of: Vec<Vec<usize>> = agents
            .iter()
            .map(|a| {
                outcomes
                    .iter()
                    .map(|school_of| match a.side {
                        Side::Student => school_of[a.index].unwrap_or(usize::MAX),
                        Side::School => school_of
                            .iter()
                            .position(|&c| c == Some(a.index))
                            .unwrap_or(usize::MAX),
                    })
                    .collect()
            })
            .collect();

        let profiles: Vec<Profile> = (0..count)
            .into_par_iter()
            .map(|i| Profile::decode(ProfileIndex(i as u64), n, m))
            .collect::<Result<Vec<_>>>()?;

        let unmatched_rank = n.max(m);
        let ranks: Vec<Vec<Vec<u8>>> = profiles
            .par_iter()
            .map(|p| {
                agents
                    .iter()
                    .map(|&a| {
                        let pref = p.pref_of(a);
                        (0..pref.len()).map(|x| pref.rank_of(x) as u8).collect()
                    })
                    .collect()
            })
            .collect();

        let full_domain: Vec<u64> = profiles
            .par_iter()
            .map(|p| {
                let mut mask = 0u64;
                for (oid, school_of) in outcomes.iter().enumerate() {
                    let pairs: Vec<(usize, usize)> = school_of
                        .iter()
                        .enumerate()
                        .filter_map(|(s, c)| c.map(|c| (s, c)))
                        .collect();
                    let d = DeterministicMatching::from_pairs(n, m, &pairs).unwrap();
                    if blocking_pairs(&d, p).len() <= cap {
                        mask |= 1 << oid;
                    }
                }
                mask
            })
            .collect();

        let edges: Vec<Vec<(u32, u8)>> = profiles
            .par_iter()
            .map(|p| {
                let mut out = Vec::new();
                for (ai, &a) in agents.iter().enumerate() {
                    for dev in misreports(p, a) {
                        let q = p.misreport(a, dev).unwrap().encode().0 as u32;
                        out.push((q, ai as u8));
                    }
                }
                out
            })
            .collect();

        Ok(Self {
            count,
            cap,
            partner_of,
            ranks,
            unmatched_rank,
            full_domain,
            edges,
        })
    }

    fn rank_of(&self, p: usize, a: usize, partner: usize) -> usize {
        if partner == usize::MAX {
            self.unmatched_rank
        } else {
            self.ranks[p][a][partner] as usize
        }
    }

    // seed = None revises everything; seed = Some(p) only propagates the
    // consequences of a change at p
    fn run_ac3(
        &self,
        domains: &mut Vec<u64>,
        active: Option<&Vec<bool>>,
        seed: Option<usize>,
    ) -> Option<usize> {
        let count = self.count;
        let edges = &self.edges;
        let is_active = |p: usize| active.map_or(true, |a| a[p]);
        let mut queue = std::collections::VecDeque::new();
        let mut queued = vec![false; count];
        match seed {
            Some(p) => {
                queue.push_back(p);
                queued[p] = true;
                for &(q, _) in &edges[p] {
                    let q = q as usize;
                    if is_active(q) && !queued[q] {
                        queued[q] = true;
                        queue.push_back(q);
                    }
                }
            }
            None => {
                for p in (0..count).filter(|&p| is_active(p)) {
                    queued[p] = true;
                    queue.push_back(p);
                }
            }
        }
        while let Some(p) = queue.pop_front() {
            queued[p] = false;
            if !is_active(p) {
                continue;
            }
            // revise D(p) against every active neighbor
            let before = domains[p];
            let mut mask = domains[p];
            for &(q32, ai) in &edges[p] {
                let q = q32 as usize;
                if !is_active(q) {
                    continue;
                }
                let a = ai as usize;
                let dq = domains[q];
                let mut next = 0u64;
                let mut bits = mask;
                while bits != 0 {
                    let oid = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    let xp = self.partner_of[a][oid];
                    let rp_x = self.rank_of(p, a, xp);
                    let rq_x = self.rank_of(q, a, xp);
                    let mut qbits = dq;
                    let mut ok = false;
                    while qbits != 0 {
                        let o2 = qbits.trailing_zeros() as usize;
                        qbits &= qbits - 1;
                        let yq = self.partner_of[a][o2];
                        // dominance both ways: p-truth and q-truth
                        if rp_x <= self.rank_of(p, a, yq) && self.rank_of(q, a, yq) <= rq_x {
                            ok = true;
                            break;
                        }
                    }
                    if ok {
                        next |= 1 << oid;
                    }
                }
                mask = next;
                if mask == 0 {
                    break;
                }
            }
            if mask != before {
                domains[p] = mask;
                if mask == 0 {
                    return Some(p);
                }
                for &(q32, _) in &edges[p] {
                    let q = q32 as usize;
                    if is_active(q) && !queued[q] {
                        queued[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        None
    }

    // singleton test pass: an outcome that wipes the subproblem out when
    // assigned cannot appear in any solution, so remove it and propagate.
    // Returns the wiped-out profile if the pruning cascades to a refutation.
    fn run_singleton_pass(
        &self,
        domains: &mut Vec<u64>,
        active: Option<&Vec<bool>>,
    ) -> Option<usize> {
        let is_active = |p: usize| active.map_or(true, |a| a[p]);
        loop {
            let mut changed = false;
            for p in (0..self.count).filter(|&p| is_active(p)) {
                let mut bits = domains[p];
                if bits.count_ones() <= 1 {
                    continue;
                }
                while bits != 0 {
                    let oid = bits.trailing_zeros();
                    bits &= bits - 1;
                    let mut trial = domains.clone();
                    trial[p] = 1 << oid;
                    if self.run_ac3(&mut trial, active, Some(p)).is_some() {
                        domains[p] &= !(1 << oid);
                        changed = true;
                        if domains[p] == 0 {
                            return Some(p);
                        }
                        if let Some(w) = self.run_ac3(domains, active, Some(p)) {
                            return Some(w);
                        }
                    }
                }
            }
            if !changed {
                return None;
            }
        }
    }

    // branch-and-propagate: propagation alone may leave every domain
    // nonempty even when no globally consistent assignment exists, so
    // branch on the most constrained profile and recurse.  Budget
    // exhaustion counts as satisfiable, which is the conservative answer.
    fn search_refutes(
        &self,
        domains: &mut Vec<u64>,
        active: &Vec<bool>,
        seed: Option<usize>,
        budget: &mut usize,
    ) -> bool {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        if self.run_ac3(domains, Some(active), seed).is_some() {
            return true;
        }
        let branch = active
            .iter()
            .enumerate()
            .filter(|&(p, &a)| a && domains[p].count_ones() > 1)
            .min_by_key(|&(p, _)| domains[p].count_ones())
            .map(|(p, _)| p);
        let Some(p) = branch else {
            return false; // all singleton and arc consistent: a solution
        };
        let mut bits = domains[p];
        while bits != 0 {
            let oid = bits.trailing_zeros();
            bits &= bits - 1;
            let mut sub = domains.clone();
            sub[p] = 1 << oid;
            if !self.search_refutes(&mut sub, active, Some(p), budget) {
                return false;
            }
        }
        true
    }

    /// Propagates globally.  On refutation the returned trace lists every
    /// profile whose domain was pruned on the way to the wipeout, a
    /// natural starting point for core extraction.
    pub fn global_refutation(&self) -> (ProbeReport, Vec<u64>) {
        let mut domains = self.full_domain.clone();
        let failed = self
            .run_ac3(&mut domains, None, None)
            .or_else(|| self.run_singleton_pass(&mut domains, None));
        let min_domain = domains
            .iter()
            .map(|d| d.count_ones() as usize)
            .min()
            .unwrap_or(0);
        let trace: Vec<u64> = (0..self.count)
            .filter(|&p| domains[p] != self.full_domain[p])
            .map(|p| p as u64)
            .collect();
        (
            ProbeReport {
                refuted: failed.is_some(),
                core: if failed.is_some() {
                    (0..self.count as u64).collect()
                } else {
                    Vec::new()
                },
                min_domain,
                cap: self.cap,
            },
            trace,
        )
    }

    /// Does the subproblem induced by `subset` refute on its own?  Sound:
    /// dropping profiles only removes constraints, so a restricted
    /// refutation implies the global one.
    pub fn subset_refutes(&self, subset: &[u64]) -> bool {
        let mut active = vec![false; self.count];
        for &p in subset {
            if (p as usize) < self.count {
                active[p as usize] = true;
            }
        }
        let mut domains = self.full_domain.clone();
        if self.run_ac3(&mut domains, Some(&active), None).is_some() {
            return true;
        }
        if self.run_singleton_pass(&mut domains, Some(&active)).is_some() {
            return true;
        }
        let mut budget = 20_000;
        self.search_refutes(&mut domains, &active, None, &mut budget)
    }

    /// Greedy chunked minimization of a refuting subset: repeatedly drop a
    /// slice of the core and keep the removal whenever the remainder still
    /// refutes.
    pub fn shrink_core(&self, start: &[u64], max_checks: usize) -> Vec<u64> {
        let mut core = start.to_vec();
        let mut checks = 0usize;
        let mut chunk = (core.len() / 4).max(1);
        loop {
            let mut progress = false;
            let mut i = 0;
            while i < core.len() && core.len() > 1 && checks < max_checks {
                let end = (i + chunk).min(core.len());
                let candidate: Vec<u64> = core[..i]
                    .iter()
                    .chain(&core[end..])
                    .copied()
                    .collect();
                checks += 1;
                if !candidate.is_empty() && self.subset_refutes(&candidate) {
                    core = candidate;
                    progress = true;
                } else {
                    i = end;
                }
            }
            if checks >= max_checks || (chunk == 1 && !progress) {
                break;
            }
            chunk = (chunk / 2).max(1);
        }
        core
    }
}

pub fn deterministic_cap_probe(n: usize, m: usize, cap: usize) -> Result<ProbeReport> {
    let probe = CapProbe::new(n, m, cap)?;
    let (mut report, trace) = probe.global_refutation();
    if report.refuted && !trace.is_empty() && probe.subset_refutes(&trace) {
        report.core = probe.shrink_core(&trace, 200);
    }
    Ok(report)
}

/// All injective partial assignments student -> school, as school_of rows.
fn partial_matchings(n: usize, m: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = Vec::new();
    let mut current: Vec<Option<usize>> = vec![None; n];
    let mut used = vec![false; m];
    fn recurse(
        s: usize,
        n: usize,
        m: usize,
        current: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if s == n {
            out.push(current.clone());
            return;
        }
        current[s] = None;
        recurse(s + 1, n, m, current, used, out);
        for c in 0..m {
            if !used[c] {
                used[c] = true;
                current[s] = Some(c);
                recurse(s + 1, n, m, current, used, out);
                current[s] = None;
                used[c] = false;
            }
        }
    }
    recurse(0, n, m, &mut current, &mut used, &mut out);
    out
}
