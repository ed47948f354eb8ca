//! Ground-truth instances, the counting OR-test oracle, and subset bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Index of a driver within its population.
pub type ItemId = usize;

/// An ordered set of item ids. Members are kept sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Subset(Vec<ItemId>);

impl Subset {
    /// Builds a subset of a population of size `n`, rejecting duplicates and
    /// out-of-range members.
    pub fn new(mut members: Vec<ItemId>, n: usize) -> Result<Self> {
        members.sort_unstable();
        for w in members.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateMember(w[0]));
            }
        }
        if let Some(&last) = members.last() {
            if last >= n {
                return Err(Error::InvalidSubset { index: last, n });
            }
        }
        Ok(Self(members))
    }

    /// Sorts and deduplicates without a range check.
    pub fn from_members(mut members: Vec<ItemId>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self(members)
    }

    pub fn range(start: ItemId, end: ItemId) -> Self {
        Self((start..end).collect())
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn members(&self) -> &[ItemId] {
        &self.0
    }

    pub fn into_members(self) -> Vec<ItemId> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.0.binary_search(&item).is_ok()
    }

    pub fn is_subset_of(&self, other: &Subset) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    pub fn is_disjoint(&self, other: &Subset) -> bool {
        !self.0.iter().any(|&i| other.contains(i))
    }

    pub fn union(&self, other: &Subset) -> Subset {
        let mut all = self.0.clone();
        all.extend_from_slice(&other.0);
        Subset::from_members(all)
    }

    pub fn difference(&self, other: &Subset) -> Subset {
        Subset(self.0.iter().copied().filter(|&i| !other.contains(i)).collect())
    }
}

impl FromIterator<ItemId> for Subset {
    fn from_iter<I: IntoIterator<Item = ItemId>>(iter: I) -> Self {
        Subset::from_members(iter.into_iter().collect())
    }
}

/// Per-driver probabilities of being malicious, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidProbability { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Expected number of malicious drivers, `d = sum p_i`.
    pub fn mass(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// A ground-truth malicious vector together with the probabilities it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    x: Vec<bool>,
    p: ProbVector,
    seed: u64,
}

/// Draws `X_i ~ Bernoulli(p_i)` independently, in index order, one uniform per item.
pub fn sample_instance(p: &ProbVector, seed: u64) -> Result<Instance> {
    if p.is_empty() {
        return Err(Error::InvalidPopulation);
    }
    let mut rng = SplitMix64::new(seed);
    let x = p.values().iter().map(|&pi| rng.next_f64() < pi).collect();
    Ok(Instance { x, p: p.clone(), seed })
}

impl Instance {
    /// An instance with an explicit ground truth, for enumeration and replay.
    pub fn from_truth(x: Vec<bool>, p: ProbVector) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidPopulation);
        }
        if x.len() != p.len() {
            return Err(Error::LengthMismatch { left: x.len(), right: p.len() });
        }
        Ok(Self { x, p, seed: 0 })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn truth(&self) -> &[bool] {
        &self.x
    }

    pub fn p(&self) -> &ProbVector {
        &self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn malicious(&self) -> Subset {
        Subset(self.x.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect())
    }

    pub fn num_malicious(&self) -> usize {
        self.x.iter().filter(|&&b| b).count()
    }

    /// Non-counting OR predicate. Out-of-range members are ignored.
    pub fn any_malicious(&self, members: &[ItemId]) -> bool {
        members.iter().any(|&i| self.x.get(i).copied().unwrap_or(false))
    }
}

/// Exact-recovery check.
pub fn verify_detection(instance: &Instance, reported: &Subset) -> bool {
    *reported == instance.malicious()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRecord {
    pub subset: Subset,
    pub positive: bool,
}

/// Ordered log of every test issued against an instance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript(Vec<TestRecord>);

impl Transcript {
    pub fn records(&self) -> &[TestRecord] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Items that appeared in at least one negative test.
    pub fn cleared(&self) -> Subset {
        self.0
            .iter()
            .filter(|r| !r.positive)
            .flat_map(|r| r.subset.members().iter().copied())
            .collect()
    }

    /// Outcome of testing `s` if it follows from the log: negative when every
    /// member is cleared, positive when some positive test lies inside `s` once
    /// its cleared members are removed.
    pub fn implied_outcome(&self, s: &Subset) -> Option<bool> {
        let cleared = self.cleared();
        if s.is_subset_of(&cleared) {
            return Some(false);
        }
        let positive = self
            .0
            .iter()
            .filter(|r| r.positive)
            .any(|r| r.subset.difference(&cleared).is_subset_of(s));
        positive.then_some(true)
    }

    /// Replays every record against `instance` with the pure predicate.
    pub fn replays_on(&self, instance: &Instance) -> bool {
        self.0.iter().all(|r| instance.any_malicious(r.subset.members()) == r.positive)
    }
}

/// The counting oracle: one instance, a monotone test counter, and the transcript.
#[derive(Debug, Clone)]
pub struct TestSession<'a> {
    instance: &'a Instance,
    transcript: Transcript,
    strict: bool,
}

impl<'a> TestSession<'a> {
    /// A strict session: testing an empty subset is an error.
    pub fn new(instance: &'a Instance) -> Self {
        Self { instance, transcript: Transcript::default(), strict: true }
    }

    pub fn lenient(instance: &'a Instance) -> Self {
        Self { strict: false, ..Self::new(instance) }
    }

    pub fn instance(&self) -> &'a Instance {
        self.instance
    }

    pub fn tests_used(&self) -> usize {
        self.transcript.len()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    /// Tests `s`: positive iff it holds at least one malicious member.
    pub fn or_test(&mut self, s: &Subset) -> Result<bool> {
        if let Some(&last) = s.members().last() {
            if last >= self.instance.n() {
                return Err(Error::InvalidSubset { index: last, n: self.instance.n() });
            }
        } else if self.strict {
            return Err(Error::EmptyTest);
        }
        let positive = self.instance.any_malicious(s.members());
        self.transcript.0.push(TestRecord { subset: s.clone(), positive });
        Ok(positive)
    }
}
