//! Exhaustive verification of strategy-proofness, anonymity, symmetry and
//! non-wastefulness, plus objective evaluation (average/worst violation,
//! average waste) for any mechanism.
//!
//! Strategy-proofness is first-order stochastic dominance of the truthful
//! outcome row over every misreport's row, cumulated along the true
//! preference at every threshold partner, for students and schools alike.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::matching::{total_violation, waste, RandomizedMatching};
use crate::mechanisms::{Mechanism, TabularMechanism};
use crate::prefs::{
    all_agents, enumerate_group, misreports, profile_count, AgentId, Profile, ProfileIndex, Side,
    PROFILE_ENUM_CAP,
};
use crate::sim::random_profile;
use crate::{Error, Result};

/// Default tolerance for mixtures; RSD denominators keep exact values far
/// from this.
pub const DEFAULT_AUDIT_TOL: f64 = 1e-7;

/// Sample count for mixture estimation when a randomization domain is too
/// large to enumerate during a sampled audit.
const SAMPLED_MIXTURE_DRAWS: u32 = 300;

/// How much of the profile space an audit covers.
#[derive(Clone, Copy, Debug)]
pub enum AuditScope {
    Exhaustive,
    /// Uniform profile sample; deviations are still exhausted per profile.
    Sampled { seed: u64, profiles: u64 },
}

/// Failure location: profile plus whatever narrows the violated check.
#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub profile: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misreport: Option<String>,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub property: String,
    pub pass: bool,
    /// Most negative constraint margin seen (0 when every check is slack).
    pub worst_slack: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub checked: u64,
    pub coverage: String,
}

impl AuditReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

impl std::fmt::Display for AuditReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} (worst slack {:.3e}, {} checks, {})",
            self.property,
            if self.pass { "pass" } else { "FAIL" },
            self.worst_slack,
            self.checked,
            self.coverage
        )?;
        if let Some(w) = &self.witness {
            write!(f, " witness: profile {} {}", w.profile, w.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ObjectiveSummary {
    pub average_stv: f64,
    pub worst_stv: f64,
    pub average_waste: f64,
    /// Profile index attaining worst_stv.
    pub argmax_profile: u64,
    pub profiles: u64,
}

/// One audited outcome per profile: either a table lookup or a fresh
/// evaluation (sampling oversized randomization domains).
enum Evaluator<'a> {
    Table(TabularMechanism),
    Direct { mech: &'a Mechanism, seed: u64 },
}

impl Evaluator<'_> {
    fn get(&self, profile: &Profile) -> Result<RandomizedMatching> {
        match self {
            Evaluator::Table(t) => t.evaluate(profile.encode()),
            Evaluator::Direct { mech, seed } => {
                // profile-keyed stream: deterministic and schedule independent
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(profile.encode().0);
                mech.evaluate_or_sample(profile, &mut rng, SAMPLED_MIXTURE_DRAWS)
            }
        }
    }
}

/// Profile indices covered by a scope, plus a coverage label.
fn scope_profiles(scope: AuditScope, n: usize, m: usize) -> Result<(Vec<Profile>, String)> {
    let count = profile_count(n, m)?;
    match scope {
        AuditScope::Exhaustive => {
            if count > PROFILE_ENUM_CAP {
                return Err(Error::SizeGate(format!(
                    "{count} profiles cannot be exhausted; use a sampled audit"
                )));
            }
            let profiles = (0..count)
                .into_par_iter()
                .map(|i| Profile::decode(ProfileIndex(i), n, m))
                .collect::<Result<Vec<_>>>()?;
            Ok((profiles, format!("exhaustive over {count} profiles")))
        }
        AuditScope::Sampled { seed, profiles } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let drawn = (0..profiles).map(|_| random_profile(&mut rng, n, m)).collect();
            Ok((drawn, format!("sampled {profiles} of {count} profiles (seed {seed})")))
        }
    }
}

fn make_evaluator<'a>(
    mech: &'a Mechanism,
    n: usize,
    m: usize,
    scope: AuditScope,
) -> Result<Evaluator<'a>> {
    match scope {
        AuditScope::Exhaustive => Ok(Evaluator::Table(mech.materialize(n, m)?)),
        AuditScope::Sampled { seed, .. } => Ok(Evaluator::Direct { mech, seed }),
    }
}

/// Per-profile audit result, merged by minimum slack.
struct Slack {
    worst: f64,
    witness: Option<Witness>,
    checked: u64,
}

impl Slack {
    fn none() -> Self {
        Self { worst: f64::INFINITY, witness: None, checked: 0 }
    }

    fn observe(&mut self, slack: f64, witness: impl FnOnce() -> Witness) {
        self.checked += 1;
        if slack < self.worst {
            self.worst = slack;
            self.witness = Some(witness());
        }
    }

    fn merge(mut self, other: Slack) -> Slack {
        self.checked += other.checked;
        if other.worst < self.worst {
            self.worst = other.worst;
            self.witness = other.witness;
        }
        self
    }

    fn into_report(self, property: &str, tol: f64, coverage: String) -> AuditReport {
        let worst = if self.worst.is_finite() { self.worst } else { 0.0 };
        let pass = worst >= -tol;
        AuditReport {
            property: property.to_string(),
            pass,
            worst_slack: worst,
            witness: if pass { None } else { self.witness },
            checked: self.checked,
            coverage,
        }
    }
}

fn audit_over<F>(
    mech: &Mechanism,
    n: usize,
    m: usize,
    tol: f64,
    scope: AuditScope,
    property: &str,
    per_profile: F,
) -> Result<AuditReport>
where
    F: Fn(&Evaluator, &Profile) -> Result<Slack> + Sync,
{
    let (profiles, coverage) = scope_profiles(scope, n, m)?;
    let eval = make_evaluator(mech, n, m, scope)?;
    let merged = profiles
        .par_iter()
        .map(|p| per_profile(&eval, p))
        .try_reduce(Slack::none, |a, b| Ok(a.merge(b)))?;
    Ok(merged.into_report(property, tol, coverage))
}

/// Cumulative probability of `matrix`'s row/column for `agent` over the
/// weak upper contour of `threshold` under `truth`.
fn upper_contour_mass(
    matrix: &RandomizedMatching,
    profile: &Profile,
    agent: AgentId,
    threshold_rank: usize,
) -> f64 {
    let truth = profile.pref_of(agent);
    truth.ranking()[..=threshold_rank]
        .iter()
        .map(|&partner| match agent.side {
            Side::Student => matrix.get(agent.index, partner),
            Side::School => matrix.get(partner, agent.index),
        })
        .sum()
}

pub fn check_strategyproof(
    mech: &Mechanism,
    n: usize,
    m: usize,
    tol: f64,
    scope: AuditScope,
) -> Result<AuditReport> {
    audit_over(mech, n, m, tol, scope, "strategyproof", |eval, p| {
        let truthful = eval.get(p)?;
        let mut slack = Slack::none();
        for agent in all_agents(n, m) {
            let partners = p.pref_of(agent).len();
            for dev in misreports(p, agent) {
                let q = p.misreport(agent, dev.clone())?;
                let deviated = eval.get(&q)?;
                for t in 0..partners {
                    let margin = upper_contour_mass(&truthful, p, agent, t)
                        - upper_contour_mass(&deviated, p, agent, t);
                    slack.observe(margin, || Witness {
                        profile: p.encode().0,
                        agent: Some(agent.to_string()),
                        misreport: Some(format!("{dev}")),
                        detail: format!("dominance fails at threshold rank {t}"),
                    });
                }
            }
        }
        Ok(slack)
    })
}

pub fn check_anonymous(
    mech: &Mechanism,
    n: usize,
    m: usize,
    tol: f64,
    scope: AuditScope,
) -> Result<AuditReport> {
    let group = enumerate_group(n, m, false)?;
    audit_over(mech, n, m, tol, scope, "anonymous", |eval, p| {
        let base = eval.get(p)?;
        let mut slack = Slack::none();
        for g in &group {
            if g.is_identity() {
                continue;
            }
            let relabeled = eval.get(&g.apply(p)?)?;
            let diff = relabeled.max_abs_diff(&base.transport(g));
            slack.observe(-diff, || Witness {
                profile: p.encode().0,
                agent: None,
                misreport: None,
                detail: format!("relabeling changes the outcome by {diff:.3e}"),
            });
        }
        Ok(slack)
    })
}

pub fn check_symmetric(
    mech: &Mechanism,
    n: usize,
    tol: f64,
    scope: AuditScope,
) -> Result<AuditReport> {
    audit_over(mech, n, n, tol, scope, "symmetric", |eval, p| {
        let here = eval.get(p)?;
        let swapped = eval.get(&p.swap_roles()?)?;
        let diff = here.max_abs_diff(&swapped.transpose());
        let mut slack = Slack::none();
        slack.observe(-diff, || Witness {
            profile: p.encode().0,
            agent: None,
            misreport: None,
            detail: format!("role swap changes the outcome by {diff:.3e}"),
        });
        Ok(slack)
    })
}

pub fn check_nonwasteful(
    mech: &Mechanism,
    n: usize,
    m: usize,
    tol: f64,
    scope: AuditScope,
) -> Result<AuditReport> {
    audit_over(mech, n, m, tol, scope, "nonwasteful", |eval, p| {
        let r = eval.get(p)?;
        let mut deficit = 0.0f64;
        for s in 0..n {
            deficit = deficit.max((1.0 - r.row_sum(s)).abs());
        }
        for c in 0..m {
            deficit = deficit.max((1.0 - r.col_sum(c)).abs());
        }
        let mut slack = Slack::none();
        slack.observe(-deficit, || Witness {
            profile: p.encode().0,
            agent: None,
            misreport: None,
            detail: format!("row/column mass deviates from 1 by {deficit:.3e}"),
        });
        Ok(slack)
    })
}

pub fn evaluate_objectives(
    mech: &Mechanism,
    n: usize,
    m: usize,
    scope: AuditScope,
) -> Result<ObjectiveSummary> {
    let (profiles, _) = scope_profiles(scope, n, m)?;
    let eval = make_evaluator(mech, n, m, scope)?;
    let per: Vec<(u64, f64, f64)> = profiles
        .par_iter()
        .map(|p| {
            let r = eval.get(p)?;
            Ok((p.encode().0, total_violation(&r, p), waste(&r)))
        })
        .collect::<Result<Vec<_>>>()?;
    let count = per.len() as f64;
    let (mut worst, mut argmax) = (0.0f64, 0u64);
    for &(idx, v, _) in &per {
        if v > worst {
            worst = v;
            argmax = idx;
        }
    }
    Ok(ObjectiveSummary {
        average_stv: per.iter().map(|x| x.1).sum::<f64>() / count,
        worst_stv: worst,
        average_waste: per.iter().map(|x| x.2).sum::<f64>() / count,
        argmax_profile: argmax,
        profiles: per.len() as u64,
    })
}

/// Runs the four property audits and returns the reports in a fixed order.
pub fn full_audit(
    mech: &Mechanism,
    n: usize,
    m: usize,
    tol: f64,
    scope: AuditScope,
) -> Result<Vec<AuditReport>> {
    let mut reports = vec![
        check_strategyproof(mech, n, m, tol, scope)?,
        check_anonymous(mech, n, m, tol, scope)?,
        check_nonwasteful(mech, n, m, tol, scope)?,
    ];
    if n == m {
        reports.push(check_symmetric(mech, n, tol, scope)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::TabularMechanism;
    use crate::prefs::{build_orbit_table, Preference};
    use std::sync::Arc;

    const EX: AuditScope = AuditScope::Exhaustive;

    #[test]
    fn alg1_full_house() {
        let mech = Mechanism::Alg1;
        let sp = check_strategyproof(&mech, 2, 2, 0.0, EX).unwrap();
        assert!(sp.pass, "{sp}");
        assert_eq!(sp.checked, 16 * 4 * 1 * 2);
        let nw = check_nonwasteful(&mech, 2, 2, 0.0, EX).unwrap();
        assert!(nw.pass);
        let obj = evaluate_objectives(&mech, 2, 2, EX).unwrap();
        assert_eq!(obj.average_stv, 0.0);
        assert_eq!(obj.worst_stv, 0.0);
        assert_eq!(obj.average_waste, 0.0);
    }

    #[test]
    fn alg1_is_anonymous_but_not_symmetric() {
        // despite the "student 1 dictates" tie-break, the no-mutual-top case
        // at 2x2 gives every student their top choice, so relabeling never
        // changes the outcome; the role swap does (students are favored)
        let rep = check_anonymous(&Mechanism::Alg1, 2, 2, 1e-9, EX).unwrap();
        assert!(rep.pass, "{rep}");
        let rep = check_symmetric(&Mechanism::Alg1, 2, 1e-9, EX).unwrap();
        assert!(!rep.pass);
        assert!((rep.worst_slack + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sd_fixed_ordering_fails_anonymity_with_witness() {
        let mech = Mechanism::parse("sd:s1,s2,s3").unwrap();
        let rep = check_anonymous(&mech, 3, 3, 1e-9, EX).unwrap();
        assert!(!rep.pass);
        let line = rep.to_json_line();
        let w = rep.witness.expect("witness");
        assert!(w.detail.contains("relabeling"));
        assert!(line.contains("\"property\":\"anonymous\""));
        assert!(line.contains("\"pass\":false"));
    }

    #[test]
    fn rsd2_passes_all_audits_3x3() {
        let mech = Mechanism::Rsd2;
        for rep in full_audit(&mech, 3, 3, DEFAULT_AUDIT_TOL, EX).unwrap() {
            assert!(rep.pass, "{rep}");
        }
    }

    #[test]
    fn rsd1_passes_all_audits_3x3() {
        let mech = Mechanism::Rsd1;
        for rep in full_audit(&mech, 3, 3, DEFAULT_AUDIT_TOL, EX).unwrap() {
            assert!(rep.pass, "{rep}");
        }
    }

    #[test]
    fn fixed_side_rsd_fails_symmetry() {
        // randomizing the student side only favors students on the conflict
        // profile, breaking Eq-style role symmetry
        let mech = Mechanism::parse("sd:s1,s2").unwrap();
        let rep = check_symmetric(&mech, 2, 1e-9, EX).unwrap();
        assert!(!rep.pass);
    }

    /// Deliberately manipulable rule: student 1 receives her second-ranked
    /// school, the other student takes the leftover. Reporting a swapped
    /// ranking hands student 1 her true top, a profitable misreport.
    /// (Boston immediate acceptance would not do here: at 2x2 it coincides
    /// with deferred acceptance and is strategy-proof.)
    fn second_choice_rule_2x2() -> Mechanism {
        let mut table = TabularMechanism::new(2, 2, None);
        for i in 0..profile_count(2, 2).unwrap() {
            let p = Profile::decode(ProfileIndex(i), 2, 2).unwrap();
            let c = p.student_pref(0).ranking()[1];
            let mut d = crate::matching::DeterministicMatching::empty(2, 2);
            d.assign(0, c).unwrap();
            d.assign(1, 1 - c).unwrap();
            table.insert(ProfileIndex(i), d.to_matrix());
        }
        Mechanism::Tabular(table)
    }

    #[test]
    fn second_choice_rule_is_manipulable() {
        let rep = check_strategyproof(&second_choice_rule_2x2(), 2, 2, 0.0, EX).unwrap();
        assert!(!rep.pass);
        let w = rep.witness.expect("witness");
        assert!(w.agent.is_some() && w.misreport.is_some());
        assert!(rep.worst_slack <= -1.0 + 1e-12, "slack {}", rep.worst_slack);
    }

    #[test]
    fn anonymize_and_symmetrize_pass_their_audits() {
        let mech = Mechanism::parse("sym(anon(sd:s1,s2))").unwrap();
        let reports = full_audit(&mech, 2, 2, DEFAULT_AUDIT_TOL, EX).unwrap();
        for rep in &reports {
            assert!(rep.pass, "{rep}");
        }
    }

    #[test]
    fn empty_mechanism_fails_nonwastefulness() {
        let mut table = TabularMechanism::new(2, 2, None);
        for i in 0..16 {
            table.insert(ProfileIndex(i), RandomizedMatching::zero(2, 2));
        }
        let rep = check_nonwasteful(&Mechanism::Tabular(table), 2, 2, 1e-9, EX).unwrap();
        assert!(!rep.pass);
        assert!((rep.worst_slack + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sd_objectives_match_reference_row() {
        let obj = evaluate_objectives(&Mechanism::parse("sd:nat").unwrap(), 3, 3, EX).unwrap();
        assert!((obj.average_stv - 0.6666).abs() < 1e-3, "avg {}", obj.average_stv);
        assert_eq!(obj.worst_stv, 3.0);
        assert_eq!(obj.average_waste, 0.0);
    }

    #[test]
    fn reduced_table_audit_matches_materialized() {
        // audits see identical numbers whether the mechanism is stored in
        // full or expanded from orbit representatives on the fly
        let orbit = Arc::new(build_orbit_table(3, 3, true).unwrap());
        let mut reduced = TabularMechanism::new(3, 3, Some(orbit.clone()));
        for &rep in orbit.reps() {
            let p = Profile::decode(ProfileIndex(rep), 3, 3).unwrap();
            reduced.insert(ProfileIndex(rep), Mechanism::Rsd2.evaluate(&p).unwrap());
        }
        let a = evaluate_objectives(&Mechanism::Tabular(reduced), 3, 3, EX).unwrap();
        let b = evaluate_objectives(&Mechanism::Rsd2, 3, 3, EX).unwrap();
        assert!((a.average_stv - b.average_stv).abs() < 1e-9);
        assert!((a.worst_stv - b.worst_stv).abs() < 1e-9);
        assert!((a.average_waste - b.average_waste).abs() < 1e-9);
    }

    #[test]
    fn sampled_scope_runs_at_n4() {
        let scope = AuditScope::Sampled { seed: 5, profiles: 40 };
        let rep =
            check_strategyproof(&Mechanism::parse("alg3:nat").unwrap(), 4, 4, 0.0, scope).unwrap();
        assert!(rep.pass, "{rep}");
        assert!(rep.coverage.contains("sampled 40"));
        // deterministic given the seed
        let again =
            check_strategyproof(&Mechanism::parse("alg3:nat").unwrap(), 4, 4, 0.0, scope).unwrap();
        assert_eq!(rep.worst_slack, again.worst_slack);
        assert_eq!(rep.checked, again.checked);
    }

    #[test]
    fn exhaustive_scope_refuses_oversized_markets() {
        // (4!)^8 profiles exceed the enumeration cap
        let err = check_nonwasteful(&Mechanism::parse("sd:nat").unwrap(), 4, 4, 1e-9, EX);
        assert!(matches!(err, Err(Error::SizeGate(_))));
        // (5!)^10 does not even fit the index type
        let err = check_nonwasteful(&Mechanism::parse("sd:nat").unwrap(), 5, 5, 1e-9, EX);
        assert!(matches!(err, Err(Error::IndexOverflow { .. })));
    }

    #[test]
    fn objective_summary_invariance_under_relabeled_tables() {
        // relabeling the mechanism (conjugation by a fixed group element)
        // leaves both objectives unchanged
        use crate::prefs::GroupElement;
        let g = GroupElement::new(vec![1, 2, 0], vec![2, 0, 1], false).unwrap();
        let base = Mechanism::parse("sd:nat").unwrap().materialize(3, 3).unwrap();
        let mut conj = TabularMechanism::new(3, 3, None);
        for i in 0..profile_count(3, 3).unwrap() {
            let p = Profile::decode(ProfileIndex(i), 3, 3).unwrap();
            let moved = base.evaluate(g.apply(&p).unwrap().encode()).unwrap();
            conj.insert(ProfileIndex(i), moved.transport(&g.inverse()));
        }
        let a = evaluate_objectives(&Mechanism::Tabular(conj), 3, 3, EX).unwrap();
        let b = evaluate_objectives(&Mechanism::Tabular(base), 3, 3, EX).unwrap();
        assert!((a.average_stv - b.average_stv).abs() < 1e-9);
        assert!((a.worst_stv - b.worst_stv).abs() < 1e-9);
    }

    #[test]
    fn upper_contour_mass_walks_true_preference() {
        let p = Profile::new(
            vec![
                Preference::new(vec![2, 0, 1]).unwrap(),
                Preference::identity(3),
                Preference::identity(3),
            ],
            vec![Preference::identity(3); 3],
        )
        .unwrap();
        let mut r = RandomizedMatching::zero(3, 3);
        r.set(0, 2, 0.5);
        r.set(0, 0, 0.25);
        r.set(0, 1, 0.25);
        let s0 = AgentId::student(0);
        assert!((upper_contour_mass(&r, &p, s0, 0) - 0.5).abs() < 1e-12);
        assert!((upper_contour_mass(&r, &p, s0, 1) - 0.75).abs() < 1e-12);
        assert!((upper_contour_mass(&r, &p, s0, 2) - 1.0).abs() < 1e-12);
    }
}
