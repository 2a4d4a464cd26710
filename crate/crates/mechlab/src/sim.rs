//! Seeded Monte Carlo benchmarking of mechanisms on random markets.
//!
//! Every replication draws one market that all mechanisms evaluate, so
//! per-instance differences are meaningful. Randomness is split by
//! counter-derived stream identifiers, making results independent of the
//! parallel schedule.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::matching::{total_violation, waste};
use crate::mechanisms::Mechanism;
use crate::prefs::{Preference, Profile};
use crate::{Error, Result};

/// Monte Carlo draws used when a mixture is too large to enumerate.
pub const SIM_SAMPLE_DRAWS: u32 = 400;

/// A uniformly random full-acceptability profile.
pub fn random_profile<R: Rng>(rng: &mut R, n: usize, m: usize) -> Profile {
    use rand::seq::SliceRandom;
    let draw = |rng: &mut R, k: usize| {
        let mut v: Vec<usize> = (0..k).collect();
        v.shuffle(rng);
        Preference::new(v).unwrap()
    };
    let students = (0..n).map(|_| draw(rng, m)).collect();
    let schools = (0..m).map(|_| draw(rng, n)).collect();
    Profile::new(students, schools).unwrap()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Inclusive range of balanced market sizes.
    pub n_min: usize,
    pub n_max: usize,
    pub reps: usize,
    pub seed: u64,
    /// Mechanism descriptors, evaluated on the same draws.
    pub mechanisms: Vec<String>,
    /// Output path prefix; None keeps results in memory only.
    pub output: Option<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_min: 2,
            n_max: 10,
            reps: 1000,
            seed: 42,
            mechanisms: vec!["sd:nat".into(), "alg3:nat".into()],
            output: None,
        }
    }
}

impl SimConfig {
    /// Parses `key=value` lines; `#` starts a comment.  Keys: n_min,
    /// n_max, reps, seed, mechanisms (comma separated), output.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::SimConfig(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "n_min" => cfg.n_min = value.parse().map_err(|_| bad("bad n_min"))?,
                "n_max" => cfg.n_max = value.parse().map_err(|_| bad("bad n_max"))?,
                "reps" => cfg.reps = value.parse().map_err(|_| bad("bad reps"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("bad seed"))?,
                "mechanisms" => {
                    cfg.mechanisms = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                "output" => cfg.output = Some(value.to_string()),
                other => {
                    return Err(Error::SimConfig(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_min < 2 || self.n_max < self.n_min {
            return Err(Error::SimConfig(format!(
                "invalid size range {}..={}",
                self.n_min, self.n_max
            )));
        }
        if self.reps == 0 {
            return Err(Error::SimConfig("reps must be positive".into()));
        }
        if self.mechanisms.is_empty() {
            return Err(Error::SimConfig("no mechanisms listed".into()));
        }
        for d in &self.mechanisms {
            Mechanism::parse(d)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SimRecord {
    pub n: usize,
    pub rep: usize,
    pub mechanism: String,
    pub stv: f64,
    pub waste: f64,
}

#[derive(Clone, Debug)]
pub struct Aggregate {
    pub n: usize,
    pub mechanism: String,
    pub mean_stv: f64,
    pub max_stv: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SimResults {
    pub records: Vec<SimRecord>,
    pub aggregates: Vec<Aggregate>,
}

/// Stream identifier for the market draw of replication (n, rep).
fn market_stream(n: usize, rep: usize) -> u64 {
    (n as u64) << 40 | rep as u64
}

/// Stream identifier for mechanism sampling in replication (n, rep).
fn sample_stream(n: usize, rep: usize, mech: usize) -> u64 {
    1 << 62 | (mech as u64) << 48 | (n as u64) << 40 | rep as u64
}

pub fn run_comparison(cfg: &SimConfig) -> Result<SimResults> {
    cfg.validate()?;
    let mechanisms: Vec<Mechanism> = cfg
        .mechanisms
        .iter()
        .map(|d| Mechanism::parse(d))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (cfg.n_min..=cfg.n_max)
        .flat_map(|n| (0..cfg.reps).map(move |rep| (n, rep)))
        .collect();

    let records: Vec<Vec<SimRecord>> = jobs
        .par_iter()
        .map(|&(n, rep)| -> Result<Vec<SimRecord>> {
            let mut market_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            market_rng.set_stream(market_stream(n, rep));
            let profile = random_profile(&mut market_rng, n, n);
            let mut out = Vec::with_capacity(mechanisms.len());
            for (mi, mech) in mechanisms.iter().enumerate() {
                let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                eval_rng.set_stream(sample_stream(n, rep, mi));
                let matrix = mech.evaluate_or_sample(&profile, &mut eval_rng, SIM_SAMPLE_DRAWS)?;
                out.push(SimRecord {
                    n,
                    rep,
                    mechanism: cfg.mechanisms[mi].clone(),
                    stv: total_violation(&matrix, &profile),
                    waste: waste(&matrix),
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let records: Vec<SimRecord> = records.into_iter().flatten().collect();

    let aggregates = summarize(&records);
    let results = SimResults { records, aggregates };
    if let Some(prefix) = &cfg.output {
        write_outputs(&results, Path::new(prefix))?;
    }
    Ok(results)
}

pub fn summarize(records: &[SimRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(usize, &str), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.n, r.mechanism.as_str()))
            .or_default()
            .push(r.stv);
    }
    groups
        .into_iter()
        .map(|((n, mechanism), vals)| {
            let k = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / k;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            Aggregate {
                n,
                mechanism: mechanism.to_string(),
                mean_stv: mean,
                max_stv: vals.iter().cloned().fold(0.0, f64::max),
                stderr: (var / k).sqrt(),
            }
        })
        .collect()
}

pub fn records_csv(records: &[SimRecord]) -> String {
    let mut out = String::from("n,rep,mechanism,stv,waste\n");
    for r in records {
        writeln!(out, "{},{},{},{:.6},{:.6}", r.n, r.rep, r.mechanism, r.stv, r.waste).unwrap();
    }
    out
}

pub fn aggregates_csv(aggregates: &[Aggregate]) -> String {
    let mut out = String::from("n,mechanism,mean_stv,max_stv,stderr\n");
    for a in aggregates {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            a.n, a.mechanism, a.mean_stv, a.max_stv, a.stderr
        )
        .unwrap();
    }
    out
}

/// Writes `<prefix>_records.csv`, `<prefix>_summary.csv`, and one
/// two-column `<prefix>_<mechanism>.dat` plot file per mechanism.
pub fn write_outputs(results: &SimResults, prefix: &Path) -> Result<()> {
    let with_suffix = |suffix: &str| {
        let mut name = prefix.file_name().map_or(String::new(), |f| {
            f.to_string_lossy().into_owned()
        });
        name.push_str(suffix);
        prefix.with_file_name(name)
    };
    std::fs::write(with_suffix("_records.csv"), records_csv(&results.records))?;
    std::fs::write(
        with_suffix("_summary.csv"),
        aggregates_csv(&results.aggregates),
    )?;
    let mut by_mech: BTreeMap<&str, String> = BTreeMap::new();
    for a in &results.aggregates {
        let entry = by_mech.entry(a.mechanism.as_str()).or_default();
        writeln!(entry, "{} {:.6}", a.n, a.mean_stv).unwrap();
    }
    for (mech, body) in by_mech {
        let safe: String = mech
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
            .collect();
        std::fs::write(with_suffix(&format!("_{safe}.dat")), body)?;
    }
    Ok(())
}

/// Per-size mean of the first mechanism's violations minus the second's,
/// computed on the shared draws.
pub fn mean_gap(results: &SimResults, a: &str, b: &str) -> BTreeMap<usize, f64> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut lookup: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for r in &results.records {
        if r.mechanism == b {
            lookup.insert((r.n, r.rep), r.stv);
        }
    }
    for r in &results.records {
        if r.mechanism == a {
            if let Some(other) = lookup.get(&(r.n, r.rep)) {
                let e = sums.entry(r.n).or_default();
                e.0 += r.stv - other;
                e.1 += 1;
            }
        }
    }
    sums.into_iter()
        .map(|(n, (s, k))| (n, s / k as f64))
        .collect()
}
