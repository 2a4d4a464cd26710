//! Preferences, profiles, dense profile indexing and the relabeling group.
//!
//! A market has `n` students and `m` schools. Every agent holds a strict
//! ranking over the entire opposite side (being unmatched is implicitly the
//! worst outcome for everyone). Profiles are densely indexable: each
//! ranking is encoded by its lexicographic permutation rank and the per-agent
//! ranks form mixed-radix digits, so profile index 0 is the all-identity
//! profile and the largest index is the all-reversed one.

use std::fmt;
use std::sync::Arc;

use crate::{Error, Result};

/// One agent's strict ranking of the opposite side, most-preferred first.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Preference {
    ranking: Vec<usize>,
}

impl Preference {
    /// Builds a preference, checking that `ranking` permutes `0..k`.
    pub fn new(ranking: Vec<usize>) -> Result<Self> {
        let k = ranking.len();
        let mut seen = vec![false; k];
        for &x in &ranking {
            if x >= k || seen[x] {
                return Err(Error::InvalidPreference(format!(
                    "ranking {:?} is not a permutation of 0..{}",
                    ranking, k
                )));
            }
            seen[x] = true;
        }
        Ok(Self { ranking })
    }

    /// The identity ranking `0, 1, ..., k-1`.
    pub fn identity(k: usize) -> Self {
        Self {
            ranking: (0..k).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ranking.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranking.is_empty()
    }

    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }

    /// Most preferred partner.
    pub fn top(&self) -> usize {
        self.ranking[0]
    }

    /// Position of `x` in the ranking (0 = most preferred).
    pub fn rank_of(&self, x: usize) -> usize {
        self.ranking.iter().position(|&y| y == x).expect("partner in range")
    }

    /// True iff `a` is strictly preferred to `b`.
    pub fn prefers(&self, a: usize, b: usize) -> bool {
        self.rank_of(a) < self.rank_of(b)
    }

    /// The most preferred partner among `alive`, if any.
    pub fn top_among(&self, alive: &[bool]) -> Option<usize> {
        self.ranking.iter().copied().find(|&x| alive[x])
    }

    /// Lexicographic rank of this ranking among all permutations of `0..k`.
    pub fn lex_rank(&self) -> u64 {
        let k = self.ranking.len();
        let mut rank = 0u64;
        for i in 0..k {
            let smaller = self.ranking[i + 1..]
                .iter()
                .filter(|&&x| x < self.ranking[i])
                .count() as u64;
            rank = rank * (k - i) as u64 + smaller;
        }
        rank
    }

    /// Inverse of [`Preference::lex_rank`]: the `rank`-th permutation of `0..k`.
    pub fn from_lex_rank(k: usize, mut rank: u64) -> Result<Self> {
        let total = factorial(k).ok_or(Error::IndexOverflow { n: k, m: 0 })?;
        if rank >= total {
            return Err(Error::IndexOutOfRange { index: rank, count: total });
        }
        let mut pool: Vec<usize> = (0..k).collect();
        let mut ranking = Vec::with_capacity(k);
        for i in 0..k {
            let f = factorial(k - 1 - i).unwrap();
            let d = (rank / f) as usize;
            rank %= f;
            ranking.push(pool.remove(d));
        }
        Ok(Self { ranking })
    }

    /// Renames every entry `x` to `pi[x]`, keeping positions.
    pub fn rename(&self, pi: &[usize]) -> Self {
        Self {
            ranking: self.ranking.iter().map(|&x| pi[x]).collect(),
        }
    }

    /// All `k!` rankings in lexicographic order.
    pub fn all(k: usize) -> Vec<Self> {
        let total = factorial(k).expect("k small");
        (0..total)
            .map(|r| Self::from_lex_rank(k, r).unwrap())
            .collect()
    }
}

impl fmt::Debug for Preference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pref{:?}", self.ranking)
    }
}

/// Comma-joined 0-based ranking, matching the profile line format.
impl fmt::Display for Preference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ranks: Vec<String> = self.ranking.iter().map(|x| x.to_string()).collect();
        write!(f, "{}", ranks.join(","))
    }
}

pub(crate) fn factorial(k: usize) -> Option<u64> {
    let mut acc = 1u64;
    for i in 2..=k as u64 {
        acc = acc.checked_mul(i)?;
    }
    Some(acc)
}

/// Which side of the market an agent belongs to.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Side {
    Student,
    School,
}

/// An agent: side plus 0-based index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct AgentId {
    pub side: Side,
    pub index: usize,
}

impl AgentId {
    pub fn student(index: usize) -> Self {
        Self { side: Side::Student, index }
    }

    pub fn school(index: usize) -> Self {
        Self { side: Side::School, index }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // 1-based in all human-facing output
        match self.side {
            Side::Student => write!(f, "s{}", self.index + 1),
            Side::School => write!(f, "c{}", self.index + 1),
        }
    }
}

/// Joint preference list of all students and schools.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Profile {
    n: usize,
    m: usize,
    student_prefs: Vec<Preference>,
    school_prefs: Vec<Preference>,
}

/// Dense index of a profile within the `(m!)^n * (n!)^m` enumeration.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ProfileIndex(pub u64);

/// Returns `(m!)^n * (n!)^m`, the number of profiles of an `n x m` market.
pub fn profile_count(n: usize, m: usize) -> Result<u64> {
    let overflow = || Error::IndexOverflow { n, m };
    let fm = factorial(m).ok_or_else(overflow)?;
    let fn_ = factorial(n).ok_or_else(overflow)?;
    let mut acc = 1u64;
    for _ in 0..n {
        acc = acc.checked_mul(fm).ok_or_else(overflow)?;
    }
    for _ in 0..m {
        acc = acc.checked_mul(fn_).ok_or_else(overflow)?;
    }
    Ok(acc)
}

impl Profile {
    pub fn new(
        student_prefs: Vec<Preference>,
        school_prefs: Vec<Preference>,
    ) -> Result<Self> {
        let n = student_prefs.len();
        let m = school_prefs.len();
        if n == 0 || m == 0 {
            return Err(Error::InvalidProfile("empty side".into()));
        }
        for p in &student_prefs {
            if p.len() != m {
                return Err(Error::InvalidProfile(format!(
                    "student ranking length {} != m={}",
                    p.len(),
                    m
                )));
            }
        }
        for p in &school_prefs {
            if p.len() != n {
                return Err(Error::InvalidProfile(format!(
                    "school ranking length {} != n={}",
                    p.len(),
                    n
                )));
            }
        }
        Ok(Self { n, m, student_prefs, school_prefs })
    }

    /// The all-identity profile (index 0).
    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            student_prefs: vec![Preference::identity(m); n],
            school_prefs: vec![Preference::identity(n); m],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn student_pref(&self, s: usize) -> &Preference {
        &self.student_prefs[s]
    }

    pub fn school_pref(&self, c: usize) -> &Preference {
        &self.school_prefs[c]
    }

    pub fn pref_of(&self, agent: AgentId) -> &Preference {
        match agent.side {
            Side::Student => self.student_pref(agent.index),
            Side::School => self.school_pref(agent.index),
        }
    }

    /// Mixed-radix encoding: students first (student 0 most significant),
    /// then schools, each digit a lexicographic permutation rank.
    pub fn encode(&self) -> ProfileIndex {
        let fm = factorial(self.m).expect("in range");
        let fn_ = factorial(self.n).expect("in range");
        let mut idx = 0u64;
        for p in &self.student_prefs {
            idx = idx * fm + p.lex_rank();
        }
        for p in &self.school_prefs {
            idx = idx * fn_ + p.lex_rank();
        }
        ProfileIndex(idx)
    }

    pub fn decode(index: ProfileIndex, n: usize, m: usize) -> Result<Self> {
        let count = profile_count(n, m)?;
        if index.0 >= count {
            return Err(Error::IndexOutOfRange { index: index.0, count });
        }
        let fm = factorial(m).unwrap();
        let fn_ = factorial(n).unwrap();
        let mut digits = Vec::with_capacity(n + m);
        let mut rest = index.0;
        // peel digits least-significant (schools, reversed) first
        for _ in 0..m {
            digits.push(rest % fn_);
            rest /= fn_;
        }
        for _ in 0..n {
            digits.push(rest % fm);
            rest /= fm;
        }
        let student_prefs = (0..n)
            .map(|s| Preference::from_lex_rank(m, digits[n + m - 1 - s]))
            .collect::<Result<Vec<_>>>()?;
        let school_prefs = (0..m)
            .map(|c| Preference::from_lex_rank(n, digits[m - 1 - c]))
            .collect::<Result<Vec<_>>>()?;
        Profile::new(student_prefs, school_prefs)
    }

    /// Replaces one agent's preference, leaving everyone else untouched.
    pub fn misreport(&self, agent: AgentId, new_pref: Preference) -> Result<Self> {
        let expected = match agent.side {
            Side::Student => self.m,
            Side::School => self.n,
        };
        if new_pref.len() != expected {
            return Err(Error::InvalidPreference(format!(
                "misreport for {} must rank {} partners, got {}",
                agent,
                expected,
                new_pref.len()
            )));
        }
        let mut out = self.clone();
        match agent.side {
            Side::Student => out.student_prefs[agent.index] = new_pref,
            Side::School => out.school_prefs[agent.index] = new_pref,
        }
        Ok(out)
    }

    /// Exchanges the roles of the two sides: student `i` of the output holds
    /// the ranking school `i` held, and vice versa. Requires `n == m`.
    pub fn swap_roles(&self) -> Result<Self> {
        if self.n != self.m {
            return Err(Error::SwapUnbalanced { n: self.n, m: self.m });
        }
        Ok(Self {
            n: self.n,
            m: self.m,
            student_prefs: self.school_prefs.clone(),
            school_prefs: self.student_prefs.clone(),
        })
    }

    /// Parses the text line format `n m | s1:2,0,1 ... | c1:1,0 ...`.
    pub fn parse_line(line: &str) -> Result<Self> {
        let mut parts = line.split('|');
        let head = parts
            .next()
            .ok_or_else(|| Error::InvalidProfile("empty line".into()))?;
        let dims: Vec<usize> = head
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::InvalidProfile(format!("bad dimension `{t}`")))
            })
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::InvalidProfile("expected `n m` before first |".into()));
        }
        let (n, m) = (dims[0], dims[1]);
        let parse_side = |chunk: Option<&str>, label: char, count: usize, k: usize| -> Result<Vec<Preference>> {
            let chunk = chunk.ok_or_else(|| {
                Error::InvalidProfile(format!("missing {label}-side section"))
            })?;
            let mut prefs = vec![None; count];
            for tok in chunk.split_whitespace() {
                let (name, ranks) = tok.split_once(':').ok_or_else(|| {
                    Error::InvalidProfile(format!("bad token `{tok}`"))
                })?;
                let idx: usize = name
                    .strip_prefix(label)
                    .and_then(|d| d.parse().ok())
                    .filter(|&i| (1..=count).contains(&i))
                    .ok_or_else(|| Error::InvalidProfile(format!("bad agent name `{name}`")))?;
                let ranking: Vec<usize> = ranks
                    .split(',')
                    .map(|r| {
                        r.parse()
                            .map_err(|_| Error::InvalidProfile(format!("bad rank `{r}`")))
                    })
                    .collect::<Result<_>>()?;
                prefs[idx - 1] = Some(Preference::new(ranking)?);
                let _ = k;
            }
            prefs
                .into_iter()
                .enumerate()
                .map(|(i, p)| {
                    p.ok_or_else(|| {
                        Error::InvalidProfile(format!("missing {label}{}", i + 1))
                    })
                })
                .collect()
        };
        let student_prefs = parse_side(parts.next(), 's', n, m)?;
        let school_prefs = parse_side(parts.next(), 'c', m, n)?;
        Profile::new(student_prefs, school_prefs)
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} |", self.n, self.m)?;
        for (i, p) in self.student_prefs.iter().enumerate() {
            let ranks: Vec<String> = p.ranking().iter().map(|x| x.to_string()).collect();
            write!(f, " s{}:{}", i + 1, ranks.join(","))?;
        }
        write!(f, " |")?;
        for (j, p) in self.school_prefs.iter().enumerate() {
            let ranks: Vec<String> = p.ranking().iter().map(|x| x.to_string()).collect();
            write!(f, " c{}:{}", j + 1, ranks.join(","))?;
        }
        Ok(())
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// An element of the relabeling group: permutations of each side plus an
/// optional role swap (balanced markets only).
///
/// The action on a profile is: optionally swap roles first, then student
/// `pi_s[s]` of the output holds student `s`'s ranking with each school `c`
/// renamed to `pi_c[c]` (dually for schools).
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct GroupElement {
    pi_s: Vec<usize>,
    pi_c: Vec<usize>,
    swap: bool,
}

fn check_perm(pi: &[usize]) -> Result<()> {
    let mut seen = vec![false; pi.len()];
    for &x in pi {
        if x >= pi.len() || seen[x] {
            return Err(Error::InvalidProfile(format!("{pi:?} is not a permutation")));
        }
        seen[x] = true;
    }
    Ok(())
}

fn compose_perm(outer: &[usize], inner: &[usize]) -> Vec<usize> {
    // (outer . inner)(x) = outer[inner[x]]
    inner.iter().map(|&x| outer[x]).collect()
}

fn invert_perm(pi: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; pi.len()];
    for (i, &x) in pi.iter().enumerate() {
        inv[x] = i;
    }
    inv
}

impl GroupElement {
    pub fn new(pi_s: Vec<usize>, pi_c: Vec<usize>, swap: bool) -> Result<Self> {
        check_perm(&pi_s)?;
        check_perm(&pi_c)?;
        if swap && pi_s.len() != pi_c.len() {
            return Err(Error::SwapUnbalanced { n: pi_s.len(), m: pi_c.len() });
        }
        Ok(Self { pi_s, pi_c, swap })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            pi_s: (0..n).collect(),
            pi_c: (0..m).collect(),
            swap: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.swap
            && self.pi_s.iter().enumerate().all(|(i, &x)| i == x)
            && self.pi_c.iter().enumerate().all(|(i, &x)| i == x)
    }

    pub fn pi_s(&self) -> &[usize] {
        &self.pi_s
    }

    pub fn pi_c(&self) -> &[usize] {
        &self.pi_c
    }

    pub fn swap(&self) -> bool {
        self.swap
    }

    /// Composition such that `compose(a, b).apply(p) == a.apply(b.apply(p))`.
    pub fn compose(a: &GroupElement, b: &GroupElement) -> GroupElement {
        // Action = Perm(pi_s, pi_c) . Swap^sigma, and
        // Swap . Perm(pi_s, pi_c) = Perm(pi_c, pi_s) . Swap.
        let (b_s, b_c) = if a.swap {
            (&b.pi_c, &b.pi_s)
        } else {
            (&b.pi_s, &b.pi_c)
        };
        GroupElement {
            pi_s: compose_perm(&a.pi_s, b_s),
            pi_c: compose_perm(&a.pi_c, b_c),
            swap: a.swap ^ b.swap,
        }
    }

    pub fn inverse(&self) -> GroupElement {
        if self.swap {
            // (P . S)^-1 = S . P^-1 = Perm(inv(pi_c), inv(pi_s)) . S
            GroupElement {
                pi_s: invert_perm(&self.pi_c),
                pi_c: invert_perm(&self.pi_s),
                swap: true,
            }
        } else {
            GroupElement {
                pi_s: invert_perm(&self.pi_s),
                pi_c: invert_perm(&self.pi_c),
                swap: false,
            }
        }
    }

    /// Applies the relabeling (and optional role swap) to a profile.
    pub fn apply(&self, profile: &Profile) -> Result<Profile> {
        let p = if self.swap {
            profile.swap_roles()?
        } else {
            profile.clone()
        };
        if self.pi_s.len() != p.n() || self.pi_c.len() != p.m() {
            return Err(Error::InvalidProfile(format!(
                "group element sized {}x{} applied to {}x{} profile",
                self.pi_s.len(),
                self.pi_c.len(),
                p.n(),
                p.m()
            )));
        }
        let mut student_prefs = vec![Preference::identity(p.m()); p.n()];
        let mut school_prefs = vec![Preference::identity(p.n()); p.m()];
        for s in 0..p.n() {
            student_prefs[self.pi_s[s]] = p.student_pref(s).rename(&self.pi_c);
        }
        for c in 0..p.m() {
            school_prefs[self.pi_c[c]] = p.school_pref(c).rename(&self.pi_s);
        }
        Profile::new(student_prefs, school_prefs)
    }

    /// For matrices transported along this element: the cell of the source
    /// matrix that lands at `(s, c)` of the transported matrix.
    ///
    /// If `q = g.apply(r)` and `M_q` is the transported matrix of `M_r`, then
    /// `M_q[s][c] = M_r[g.source_cell(s, c)]`.
    pub fn source_cell(&self, s: usize, c: usize) -> (usize, usize) {
        let s0 = invert_at(&self.pi_s, s);
        let c0 = invert_at(&self.pi_c, c);
        if self.swap {
            (c0, s0)
        } else {
            (s0, c0)
        }
    }
}

fn invert_at(pi: &[usize], y: usize) -> usize {
    pi.iter().position(|&x| x == y).expect("permutation")
}

/// Enumerates the full relabeling group of an `n x m` market; with
/// `with_swap` (requires `n == m`) the role-swap coset is included.
pub fn enumerate_group(n: usize, m: usize, with_swap: bool) -> Result<Vec<GroupElement>> {
    if with_swap && n != m {
        return Err(Error::SwapUnbalanced { n, m });
    }
    let perms_s = Preference::all(n);
    let perms_c = Preference::all(m);
    let mut out = Vec::new();
    for swap in [false, true] {
        if swap && !with_swap {
            continue;
        }
        for ps in &perms_s {
            for pc in &perms_c {
                out.push(GroupElement::new(
                    ps.ranking().to_vec(),
                    pc.ranking().to_vec(),
                    swap,
                )?);
            }
        }
    }
    Ok(out)
}

/// Orbit partition of the profile space under the relabeling group.
///
/// Canonical representative = minimum profile index in the orbit. For every
/// profile the table stores a witness group element carrying the
/// representative to that profile.
pub struct OrbitTable {
    n: usize,
    m: usize,
    use_symmetry: bool,
    group: Arc<Vec<GroupElement>>,
    reps: Vec<u64>,
    rep_pos: Vec<u32>,
    witness: Vec<u16>,
    orbit_size: Vec<u64>,
}

/// Hard cap on exhaustive profile enumeration.
pub const PROFILE_ENUM_CAP: u64 = 100_000_000;

pub fn build_orbit_table(n: usize, m: usize, use_symmetry: bool) -> Result<OrbitTable> {
    if use_symmetry && n != m {
        return Err(Error::SwapUnbalanced { n, m });
    }
    let count = profile_count(n, m)?;
    if count > PROFILE_ENUM_CAP {
        return Err(Error::SizeGate(format!(
            "profile count {count} exceeds enumeration cap {PROFILE_ENUM_CAP}"
        )));
    }
    let group = enumerate_group(n, m, use_symmetry)?;
    if group.len() > u16::MAX as usize {
        return Err(Error::SizeGate(format!("group order {} too large", group.len())));
    }
    let mut reps = Vec::new();
    let mut orbit_size = Vec::new();
    let mut rep_pos = vec![u32::MAX; count as usize];
    let mut witness = vec![0u16; count as usize];
    for p in 0..count {
        if rep_pos[p as usize] != u32::MAX {
            continue;
        }
        let profile = Profile::decode(ProfileIndex(p), n, m)?;
        // images of p under the whole group
        let mut images: Vec<(u64, usize)> = Vec::with_capacity(group.len());
        for (gi, g) in group.iter().enumerate() {
            images.push((g.apply(&profile)?.encode().0, gi));
        }
        let &(rep, rep_gi) = images.iter().min().unwrap();
        // ascending sweep: the first unvisited profile of an orbit is its minimum
        debug_assert_eq!(rep, p);
        let pos = reps.len() as u32;
        reps.push(rep);
        let g_rep_inv = group[rep_gi].inverse();
        let mut size = 0u64;
        for &(img, gi) in &images {
            if rep_pos[img as usize] != u32::MAX {
                continue;
            }
            rep_pos[img as usize] = pos;
            // witness w with w.apply(rep_profile) == image: w = g_i . g_rep^-1
            let w = GroupElement::compose(&group[gi], &g_rep_inv);
            let wid = group
                .iter()
                .position(|h| *h == w)
                .expect("group closed under composition") as u16;
            witness[img as usize] = wid;
            size += 1;
        }
        orbit_size.push(size);
    }
    Ok(OrbitTable {
        n,
        m,
        use_symmetry,
        group: Arc::new(group),
        reps,
        rep_pos,
        witness,
        orbit_size,
    })
}

impl OrbitTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn use_symmetry(&self) -> bool {
        self.use_symmetry
    }

    pub fn group(&self) -> &[GroupElement] {
        &self.group
    }

    /// Canonical representatives, in increasing index order.
    pub fn reps(&self) -> &[u64] {
        &self.reps
    }

    pub fn orbit_sizes(&self) -> &[u64] {
        &self.orbit_size
    }

    pub fn profile_total(&self) -> u64 {
        self.rep_pos.len() as u64
    }

    /// Representative of `p`'s orbit plus the witness element `g` with
    /// `g.apply(representative) == p`.
    pub fn rep_of(&self, p: ProfileIndex) -> (ProfileIndex, &GroupElement) {
        let pos = self.rep_pos[p.0 as usize] as usize;
        (
            ProfileIndex(self.reps[pos]),
            &self.group[self.witness[p.0 as usize] as usize],
        )
    }

    /// Position of `p`'s representative within [`OrbitTable::reps`].
    pub fn rep_position(&self, p: ProfileIndex) -> usize {
        self.rep_pos[p.0 as usize] as usize
    }

    pub fn orbit_size_of_rep(&self, rep_position: usize) -> u64 {
        self.orbit_size[rep_position]
    }

    /// Group elements fixing the given profile (identity included).
    pub fn stabilizer(&self, p: &Profile) -> Result<Vec<&GroupElement>> {
        let idx = p.encode();
        let mut out = Vec::new();
        for g in self.group.iter() {
            if g.apply(p)?.encode() == idx {
                out.push(g);
            }
        }
        Ok(out)
    }
}

/// All misreports available to `agent` at `profile`, excluding the truth.
pub fn misreports(profile: &Profile, agent: AgentId) -> Vec<Preference> {
    let k = match agent.side {
        Side::Student => profile.m(),
        Side::School => profile.n(),
    };
    let truth = profile.pref_of(agent);
    Preference::all(k)
        .into_iter()
        .filter(|p| p != truth)
        .collect()
}

/// All agents of the market, students first.
pub fn all_agents(n: usize, m: usize) -> Vec<AgentId> {
    (0..n)
        .map(AgentId::student)
        .chain((0..m).map(AgentId::school))
        .collect()
}
