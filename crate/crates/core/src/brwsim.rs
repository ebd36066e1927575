//! Branching random walk simulation and the generation-`n` minimum.
//!
//! Every node's offspring count and child labels are drawn from a generator
//! keyed by the node itself; each child's key is the next output of its
//! parent's generator. A tree is therefore a pure function of its root seed,
//! and [`Strategy::ExactDfs`], [`Strategy::Beam`] and
//! [`Strategy::FullEnumeration`] all see the same labels and the same
//! floating-point partial sums.

use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pathlab::WalkPath;
use crate::rng;
use crate::stepdist::{validate_spec, DistInfo, StepSampler, StepSpec};
use crate::util::{float_or_inf, proportion};

/// `FullEnumeration` refuses trees with more than this many leaves.
pub const FULL_ENUMERATION_LIMIT: u64 = 1 << 24;
/// `frontier_profile` tracks exact populations up to this depth.
pub const PROFILE_MAX_DEPTH: usize = 40;
pub const DEFAULT_MAX_RESTARTS: u32 = 1000;
/// Beam genealogy is compacted every this many generations.
const COMPACT_EVERY: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum OffspringSpec {
    /// Exactly `d` children.
    Deterministic { d: u32 },
    /// `k` children with probability `probs[k]`, `k = 0..=d`.
    Bounded { probs: Vec<f64> },
}

impl OffspringSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidOffspring(m));
        match self {
            OffspringSpec::Deterministic { d } if *d < 2 => bad(format!("d must be at least 2, got {d}")),
            OffspringSpec::Deterministic { .. } => Ok(()),
            OffspringSpec::Bounded { probs } => {
                if probs.len() < 3 {
                    return bad("need probabilities p_0..p_d with d ≥ 2".into());
                }
                if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return bad("probabilities must be finite and non-negative".into());
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("probabilities sum to {total}, not 1"));
                }
                let mean = self.mean();
                if mean <= 1.0 {
                    return bad(format!("mean offspring {mean} is not supercritical"));
                }
                Ok(())
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            OffspringSpec::Deterministic { d } => *d as f64,
            OffspringSpec::Bounded { probs } => probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum(),
        }
    }

    /// The largest possible number of children, `d`.
    pub fn max_children(&self) -> u32 {
        match self {
            OffspringSpec::Deterministic { d } => *d,
            OffspringSpec::Bounded { probs } => (probs.len() - 1) as u32,
        }
    }

    pub fn extinction_possible(&self) -> bool {
        matches!(self, OffspringSpec::Bounded { probs } if probs[0] > 0.0)
    }

    /// `P{B = k}` for `k = 0..=d`.
    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            OffspringSpec::Deterministic { d } => {
                let mut p = vec![0.0; *d as usize + 1];
                p[*d as usize] = 1.0;
                p
            }
            OffspringSpec::Bounded { probs } => probs.clone(),
        }
    }

    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            OffspringSpec::Deterministic { d } => *d,
            OffspringSpec::Bounded { probs } => {
                let mut u: f64 = rng.random();
                for (k, p) in probs.iter().enumerate() {
                    if u < *p {
                        return k as u32;
                    }
                    u -= p;
                }
                (probs.len() - 1) as u32
            }
        }
    }

    /// Short descriptor used in CSV rows, e.g. `deterministic(2)`.
    pub fn descriptor(&self) -> String {
        match self {
            OffspringSpec::Deterministic { d } => format!("deterministic({d})"),
            OffspringSpec::Bounded { probs } => {
                let ps: Vec<String> = probs.iter().map(|p| p.to_string()).collect();
                format!("bounded({})", ps.join(";"))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    ExactDfs,
    Beam { k: usize },
    FullEnumeration,
}

impl Strategy {
    pub fn descriptor(&self) -> &'static str {
        match self {
            Strategy::ExactDfs => "exact_dfs",
            Strategy::Beam { .. } => "beam",
            Strategy::FullEnumeration => "full_enumeration",
        }
    }

    /// Beam width, or 0 for the exact strategies.
    pub fn beam_k(&self) -> usize {
        match self {
            Strategy::Beam { k } => *k,
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurvivalPolicy {
    #[default]
    Unconditional,
    ConditionOnSurvival {
        #[serde(default = "default_max_restarts")]
        max_restarts: u32,
    },
}

fn default_max_restarts() -> u32 {
    DEFAULT_MAX_RESTARTS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrwConfig {
    pub offspring: OffspringSpec,
    pub step: StepSpec,
    pub n: usize,
    pub strategy: Strategy,
    pub seed: u64,
    #[serde(default)]
    pub survival_policy: SurvivalPolicy,
}

impl BrwConfig {
    /// Checks the config invariants and returns the step's summary.
    pub fn validate(&self) -> Result<DistInfo> {
        self.offspring.validate()?;
        let info = validate_spec(&self.step)?;
        match self.strategy {
            Strategy::Beam { k: 0 } => Err(Error::Config("beam width K must be at least 1".into())),
            Strategy::ExactDfs if !info.ess_inf.is_finite() => Err(Error::Config(format!(
                "exact_dfs needs a step bounded below; {} has ess inf −∞ (use beam)",
                self.step.descriptor()
            ))),
            Strategy::FullEnumeration => {
                let d = self.offspring.max_children() as u64;
                let fits = u32::try_from(self.n).ok().and_then(|n| d.checked_pow(n)).is_some_and(|l| l <= FULL_ENUMERATION_LIMIT);
                if fits {
                    Ok(info)
                } else {
                    Err(Error::ResourceGuard(format!(
                        "full enumeration of {d}^{} leaves exceeds the limit {FULL_ENUMERATION_LIMIT}",
                        self.n
                    )))
                }
            }
            _ => Ok(info),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        BrwConfig { seed, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinRecord {
    pub n: usize,
    /// `+∞` when the process is extinct by generation `n`.
    #[serde(with = "float_or_inf")]
    pub m_n: f64,
    pub survived: bool,
    /// Partial sums along a minimizing root-to-leaf path; `[0]` when extinct.
    pub argmin_path: WalkPath,
    /// Set for every beam result: `m_n` is then an upper bound on the true minimum.
    pub frontier_truncated: bool,
    pub particles_expanded: u64,
}

/// Displacements of one generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub generation: usize,
    /// Ascending; at most `K` entries under beam truncation.
    pub displacements: Vec<f64>,
    /// Exact `|N_i|` when known.
    pub population: Option<u64>,
}

/// Callbacks for a depth-first traversal of a tree.
pub trait Visitor {
    /// Whether to explore below a node at `depth` with displacement `sum`.
    fn descend(&mut self, _depth: usize, _sum: f64) -> bool {
        true
    }
    /// Called for each node at the target depth with its partial sums.
    fn leaf(&mut self, path: &[f64]);
    /// Stops the traversal early.
    fn done(&self) -> bool {
        false
    }
    /// Visit siblings in ascending displacement instead of sampled order.
    fn smallest_first(&self) -> bool {
        false
    }
}

/// A branching random walk realized lazily from a root key.
#[derive(Clone, Debug)]
pub struct Tree {
    offspring: OffspringSpec,
    sampler: StepSampler,
    root: u64,
}

impl Tree {
    pub fn new(offspring: &OffspringSpec, step: &StepSpec, root: u64) -> Result<Self> {
        offspring.validate()?;
        Ok(Tree { offspring: offspring.clone(), sampler: StepSampler::new(step)?, root })
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Generates the children of the node `key` at displacement `sum`,
    /// calling `f(ordinal, child_sum, child_key)` for each.
    #[inline]
    pub fn expand(&self, key: u64, sum: f64, mut f: impl FnMut(u32, f64, u64)) -> u32 {
        let mut rng = rng::node_rng(key);
        let count = self.offspring.sample(&mut rng);
        for ordinal in 0..count {
            let x = self.sampler.sample(&mut rng);
            let child = rng.next_u64();
            f(ordinal, sum + x, child);
        }
        count
    }

    /// Depth-first traversal to depth `n`; returns the number of nodes expanded.
    pub fn visit<V: Visitor>(&self, n: usize, v: &mut V) -> u64 {
        if n == 0 {
            v.leaf(&[0.0]);
            return 0;
        }
        let mut frames: Vec<Vec<(f64, u64)>> = vec![Vec::new(); n];
        let mut cursor = vec![0usize; n];
        let mut path = Vec::with_capacity(n + 1);
        path.push(0.0);
        let ordered = v.smallest_first();
        self.expand(self.root, 0.0, |_, s, k| frames[0].push((s, k)));
        if ordered {
            frames[0].sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let mut expanded = 1u64;
        let mut depth = 1;
        while depth > 0 && !v.done() {
            let f = depth - 1;
            if cursor[f] == frames[f].len() {
                depth -= 1;
                path.pop();
                continue;
            }
            let (s, k) = frames[f][cursor[f]];
            cursor[f] += 1;
            if depth == n {
                path.push(s);
                v.leaf(&path);
                path.pop();
                continue;
            }
            if !v.descend(depth, s) {
                continue;
            }
            path.push(s);
            let next = &mut frames[depth];
            next.clear();
            self.expand(k, s, |_, cs, ck| next.push((cs, ck)));
            if ordered {
                next.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
            cursor[depth] = 0;
            expanded += 1;
            depth += 1;
        }
        expanded
    }

    /// Whether some node exists at depth `n`.
    pub fn survives_to(&self, n: usize) -> bool {
        struct Found(bool);
        impl Visitor for Found {
            fn descend(&mut self, _: usize, _: f64) -> bool {
                !self.0
            }
            fn leaf(&mut self, _: &[f64]) {
                self.0 = true;
            }
            fn done(&self) -> bool {
                self.0
            }
        }
        if !self.offspring.extinction_possible() {
            return true;
        }
        let mut found = Found(false);
        self.visit(n, &mut found);
        found.0
    }

    /// Partial sums along the path that takes child `ordinals[i]` at depth `i`.
    pub fn replay(&self, ordinals: &[u32]) -> WalkPath {
        let mut sums = Vec::with_capacity(ordinals.len() + 1);
        sums.push(0.0);
        let (mut key, mut sum) = (self.root, 0.0);
        for &want in ordinals {
            let mut next = None;
            self.expand(key, sum, |o, s, k| {
                if o == want {
                    next = Some((s, k));
                }
            });
            let (s, k) = next.expect("ordinal exceeds the offspring count");
            sums.push(s);
            key = k;
            sum = s;
        }
        WalkPath::from_sums(sums).expect("replayed sums are finite")
    }
}

struct MinVisitor {
    n: usize,
    floor: Option<f64>,
    best: f64,
    best_path: Vec<f64>,
}

impl Visitor for MinVisitor {
    #[inline]
    fn descend(&mut self, depth: usize, sum: f64) -> bool {
        match self.floor {
            Some(ess_inf) if self.best.is_finite() => {
                let rest = (self.n - depth) as f64 * ess_inf;
                // Rounding allowance for the bound; exact ties cannot improve the incumbent.
                let slack = 64.0 * f64::EPSILON * (sum.abs() + rest.abs() + self.best.abs());
                sum + rest < self.best - slack
            }
            _ => true,
        }
    }

    #[inline]
    fn leaf(&mut self, path: &[f64]) {
        let s = path[path.len() - 1];
        if s < self.best {
            self.best = s;
            self.best_path.clear();
            self.best_path.extend_from_slice(path);
        }
    }

    fn smallest_first(&self) -> bool {
        self.floor.is_some()
    }
}

fn extinct_record(n: usize, truncated: bool, expanded: u64) -> MinRecord {
    MinRecord {
        n,
        m_n: f64::INFINITY,
        survived: false,
        argmin_path: WalkPath::from_sums(vec![0.0]).expect("root path"),
        frontier_truncated: truncated,
        particles_expanded: expanded,
    }
}

fn depth_first_min(tree: &Tree, n: usize, floor: Option<f64>) -> MinRecord {
    let mut v = MinVisitor { n, floor, best: f64::INFINITY, best_path: Vec::new() };
    let expanded = tree.visit(n, &mut v);
    if v.best_path.is_empty() {
        return extinct_record(n, false, expanded);
    }
    MinRecord {
        n,
        m_n: v.best,
        survived: true,
        argmin_path: WalkPath::from_sums(v.best_path).expect("finite sums"),
        frontier_truncated: false,
        particles_expanded: expanded,
    }
}

#[derive(Clone, Copy)]
struct Link {
    parent: u32,
    ordinal: u32,
}

#[derive(Clone, Copy)]
struct Particle {
    sum: f64,
    key: u64,
    slot: u32,
}

#[derive(Clone, Copy)]
struct Candidate {
    sum: f64,
    key: u64,
    parent: u32,
    ordinal: u32,
    idx: u32,
}

/// Drops genealogy entries that no current particle descends from.
fn compact(layers: &mut [Vec<Link>], frontier: &mut [Particle]) {
    let Some(last) = layers.len().checked_sub(1) else { return };
    let mut remap = vec![u32::MAX; layers[last].len()];
    for p in frontier.iter() {
        remap[p.slot as usize] = 0;
    }
    retain_marked(&mut layers[last], &mut remap);
    for p in frontier.iter_mut() {
        p.slot = remap[p.slot as usize];
    }
    for l in (0..last).rev() {
        let (lower, upper) = layers.split_at_mut(l + 1);
        let (layer, child) = (&mut lower[l], &mut upper[0]);
        let mut remap = vec![u32::MAX; layer.len()];
        for c in child.iter() {
            remap[c.parent as usize] = 0;
        }
        retain_marked(layer, &mut remap);
        for c in child.iter_mut() {
            c.parent = remap[c.parent as usize];
        }
    }
}

/// Keeps entries whose `remap` slot is marked and stores their new indices there.
fn retain_marked(layer: &mut Vec<Link>, remap: &mut [u32]) {
    let mut w = 0;
    for r in 0..layer.len() {
        if remap[r] != u32::MAX {
            layer[w] = layer[r];
            remap[r] = w as u32;
            w += 1;
        }
    }
    layer.truncate(w);
}

struct BeamOutcome {
    record: MinRecord,
    frontier: Vec<f64>,
}

fn beam(tree: &Tree, n: usize, k: usize) -> BeamOutcome {
    if n == 0 {
        let record = MinRecord {
            n,
            m_n: 0.0,
            survived: true,
            argmin_path: WalkPath::from_sums(vec![0.0]).expect("root path"),
            frontier_truncated: true,
            particles_expanded: 0,
        };
        return BeamOutcome { record, frontier: vec![0.0] };
    }
    let mut frontier = vec![Particle { sum: 0.0, key: tree.root, slot: 0 }];
    let mut layers: Vec<Vec<Link>> = Vec::with_capacity(n);
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut expanded = 0u64;
    for generation in 1..=n {
        candidates.clear();
        for (pi, p) in frontier.iter().enumerate() {
            tree.expand(p.key, p.sum, |ordinal, sum, key| {
                let idx = candidates.len() as u32;
                candidates.push(Candidate { sum, key, parent: pi as u32, ordinal, idx });
            });
        }
        expanded += frontier.len() as u64;
        if candidates.is_empty() {
            return BeamOutcome { record: extinct_record(n, true, expanded), frontier: Vec::new() };
        }
        if candidates.len() > k {
            candidates.select_nth_unstable_by(k - 1, |a, b| a.sum.total_cmp(&b.sum).then(a.idx.cmp(&b.idx)));
            candidates.truncate(k);
            candidates.sort_unstable_by_key(|c| c.idx);
        }
        layers.push(
            candidates
                .iter()
                .map(|c| Link { parent: frontier[c.parent as usize].slot, ordinal: c.ordinal })
                .collect(),
        );
        frontier.clear();
        frontier.extend(candidates.iter().enumerate().map(|(i, c)| Particle { sum: c.sum, key: c.key, slot: i as u32 }));
        if generation % COMPACT_EVERY == 0 {
            compact(&mut layers, &mut frontier);
        }
    }
    let best = frontier
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.sum.total_cmp(&b.sum).then(i.cmp(j)))
        .map(|(_, p)| *p)
        .expect("non-empty frontier");
    let mut ordinals = Vec::with_capacity(n);
    let mut slot = best.slot;
    for layer in layers.iter().rev() {
        let link = layer[slot as usize];
        ordinals.push(link.ordinal);
        slot = link.parent;
    }
    ordinals.reverse();
    let argmin_path = tree.replay(&ordinals);
    debug_assert_eq!(argmin_path.last(), best.sum);
    let mut displacements: Vec<f64> = frontier.iter().map(|p| p.sum).collect();
    displacements.sort_by(f64::total_cmp);
    BeamOutcome {
        record: MinRecord {
            n,
            m_n: best.sum,
            survived: true,
            argmin_path,
            frontier_truncated: true,
            particles_expanded: expanded,
        },
        frontier: displacements,
    }
}

/// Beam search that widens itself if the kept particles die out while the tree survives.
fn surviving_beam(tree: &Tree, n: usize, k: usize) -> BeamOutcome {
    let mut width = k;
    loop {
        let out = beam(tree, n, width);
        if out.record.survived || !tree.survives_to(n) {
            return out;
        }
        width = width.saturating_mul(2);
    }
}

/// The generation-`n` minimum of the tree rooted at `config.seed`.
pub fn simulate_min(config: &BrwConfig) -> Result<MinRecord> {
    let info = config.validate()?;
    let tree = Tree::new(&config.offspring, &config.step, config.seed)?;
    Ok(match config.strategy {
        Strategy::ExactDfs => depth_first_min(&tree, config.n, Some(info.ess_inf)),
        Strategy::FullEnumeration => depth_first_min(&tree, config.n, None),
        Strategy::Beam { k } => surviving_beam(&tree, config.n, k).record,
    })
}

/// Displacements of generation `n` (all of them, or the `K` smallest under beam).
pub fn simulate_frontier(config: &BrwConfig) -> Result<Frontier> {
    config.validate()?;
    let tree = Tree::new(&config.offspring, &config.step, config.seed)?;
    let n = config.n;
    let exact_population = || match config.offspring {
        OffspringSpec::Deterministic { d } => u32::try_from(n).ok().and_then(|n| (d as u64).checked_pow(n)),
        OffspringSpec::Bounded { .. } => None,
    };
    match config.strategy {
        Strategy::Beam { k } => {
            let out = surviving_beam(&tree, n, k);
            Ok(Frontier { generation: n, displacements: out.frontier, population: exact_population() })
        }
        Strategy::FullEnumeration => {
            struct Collect(Vec<f64>);
            impl Visitor for Collect {
                fn leaf(&mut self, path: &[f64]) {
                    self.0.push(path[path.len() - 1]);
                }
            }
            let mut c = Collect(Vec::new());
            tree.visit(n, &mut c);
            c.0.sort_by(f64::total_cmp);
            let population = Some(c.0.len() as u64);
            Ok(Frontier { generation: n, displacements: c.0, population })
        }
        Strategy::ExactDfs => Err(Error::Config("exact_dfs prunes subtrees and has no full frontier; use beam or full_enumeration".into())),
    }
}

/// One replicate of a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub rep: u64,
    /// Root seed of the attempt that produced `record`.
    pub seed: u64,
    pub restarts: u32,
    /// Every attempt went extinct under `ConditionOnSurvival`.
    pub failed: bool,
    pub record: MinRecord,
}

/// Replicate `rep` of `config`, applying the survival policy.
pub fn run_replicate(config: &BrwConfig, rep: u64) -> Result<ReplicateOutcome> {
    let (conditioned, max_restarts) = match config.survival_policy {
        SurvivalPolicy::Unconditional => (false, 0),
        SurvivalPolicy::ConditionOnSurvival { max_restarts } => (true, max_restarts),
    };
    let mut attempt = 0;
    loop {
        let seed = rng::replicate_seed(config.seed, rep, attempt);
        let record = simulate_min(&config.with_seed(seed))?;
        if record.survived || !conditioned || attempt == max_restarts {
            let failed = conditioned && !record.survived;
            return Ok(ReplicateOutcome { rep, seed, restarts: attempt, failed, record });
        }
        attempt += 1;
    }
}

/// `replicates` independent runs, ordered by replicate index.
pub fn batch_min(config: &BrwConfig, replicates: u64) -> Result<Vec<ReplicateOutcome>> {
    if replicates == 0 {
        return Err(Error::OutOfRange("replicates must be at least 1".into()));
    }
    config.validate()?;
    (0..replicates).into_par_iter().map(|rep| run_replicate(config, rep)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThinnedSurvival {
    /// Survival probability of the tree of essential-infimum edges.
    pub p0: f64,
    /// Its extinction probability `1 − p0`.
    pub q: f64,
    /// Mean offspring of the thinned tree, `atom · E B`.
    pub thinned_mean: f64,
    pub supercritical: bool,
}

/// Offspring probabilities after keeping each child independently with probability `a`.
pub fn thinned_probabilities(offspring: &OffspringSpec, a: f64) -> Vec<f64> {
    let probs = offspring.probabilities();
    let d = probs.len() - 1;
    let mut out = vec![0.0; d + 1];
    for (j, pj) in probs.iter().enumerate() {
        if *pj == 0.0 {
            continue;
        }
        // Binomial(j, a) weights.
        let mut c = 1.0;
        for k in 0..=j {
            out[k] += pj * c * a.powi(k as i32) * (1.0 - a).powi((j - k) as i32);
            c = c * (j - k) as f64 / (k + 1) as f64;
        }
    }
    out
}

fn pgf(probs: &[f64], s: f64) -> (f64, f64) {
    let (mut g, mut dg) = (0.0, 0.0);
    for p in probs.iter().rev() {
        dg = dg * s + g;
        g = g * s + p;
    }
    (g, dg)
}

/// Survival probability of the subtree reached through steps equal to the essential infimum.
pub fn thinned_survival(offspring: &OffspringSpec, info: &DistInfo) -> Result<ThinnedSurvival> {
    offspring.validate()?;
    let a = if info.ess_inf.is_finite() { info.atom_at_essinf } else { 0.0 };
    let thinned_mean = a * offspring.mean();
    if thinned_mean <= 1.0 + 1e-12 {
        return Ok(ThinnedSurvival { p0: 0.0, q: 1.0, thinned_mean, supercritical: false });
    }
    let probs = thinned_probabilities(offspring, a);
    let mut s = 0.0;
    for _ in 0..1_000_000 {
        let next = pgf(&probs, s).0;
        let done = (next - s).abs() < 1e-12;
        s = next;
        if done {
            break;
        }
    }
    for _ in 0..4 {
        let (g, dg) = pgf(&probs, s);
        let step = (g - s) / (dg - 1.0);
        if !step.is_finite() {
            break;
        }
        s -= step;
    }
    let q = s.clamp(0.0, 1.0);
    Ok(ThinnedSurvival { p0: 1.0 - q, q, thinned_mean, supercritical: true })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStat {
    pub generation: usize,
    /// Frequency of `0 < |N_i| ≤ growth_base^i`.
    pub event_frequency: f64,
    pub event_se: f64,
    /// Frequency of `|N_i| > 0`.
    pub survival_frequency: f64,
    pub mean_population: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierProfile {
    pub growth_base: f64,
    pub replicates: u64,
    pub generations: Vec<GenerationStat>,
}

/// Per-generation frequency of small-but-alive populations, from exact Galton–Watson counts.
pub fn frontier_profile(config: &BrwConfig, growth_base: f64, replicates: u64) -> Result<FrontierProfile> {
    config.offspring.validate()?;
    let n = config.n;
    if n > PROFILE_MAX_DEPTH {
        return Err(Error::OutOfRange(format!("exact population tracking is limited to n ≤ {PROFILE_MAX_DEPTH}")));
    }
    if !(growth_base > 1.0) {
        return Err(Error::OutOfRange(format!("growth base must exceed 1, got {growth_base}")));
    }
    if replicates == 0 {
        return Err(Error::OutOfRange("replicates must be at least 1".into()));
    }
    let d = config.offspring.max_children() as u64;
    if d.checked_pow(n as u32).is_none_or(|m| m > 1 << 62) {
        return Err(Error::ResourceGuard(format!("population bound {d}^{n} overflows the counter")));
    }
    let probs = config.offspring.probabilities();
    let populations: Vec<Vec<u64>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(config.seed, rep);
            let mut pop = 1u64;
            let mut out = Vec::with_capacity(n + 1);
            out.push(pop);
            for _ in 0..n {
                pop = next_generation(&probs, pop, &mut rng);
                out.push(pop);
            }
            out
        })
        .collect();
    let generations = (0..=n)
        .map(|i| {
            let bound = growth_base.powi(i as i32);
            let col = populations.iter().map(|p| p[i]);
            let hits = col.clone().filter(|&c| c > 0 && c as f64 <= bound).count() as u64;
            let alive = col.clone().filter(|&c| c > 0).count() as u64;
            let (event_frequency, event_se) = proportion(hits, replicates);
            GenerationStat {
                generation: i,
                event_frequency,
                event_se,
                survival_frequency: alive as f64 / replicates as f64,
                mean_population: col.map(|c| c as f64).sum::<f64>() / replicates as f64,
            }
        })
        .collect();
    Ok(FrontierProfile { growth_base, replicates, generations })
}

/// Total children of `pop` individuals, via sequential conditional binomials.
fn next_generation<R: Rng + ?Sized>(probs: &[f64], pop: u64, rng: &mut R) -> u64 {
    let mut left = pop;
    let mut mass = 1.0;
    let mut children = 0u64;
    for (k, p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        let c = if k + 1 == probs.len() || *p >= mass {
            left
        } else {
            Binomial::new(left, (p / mass).clamp(0.0, 1.0)).expect("valid binomial").sample(rng)
        };
        children += k as u64 * c;
        left -= c;
        mass -= p;
    }
    children
}
