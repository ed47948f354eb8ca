//! Laminar Algorithm: maximum-entropy probabilistic group testing driven by
//! advice probabilities.
//!
//! The first stage greedily cuts the population into groups whose clean
//! probability `prod (1 - q_i)` is as close to 1/2 as the greedy rule gets.
//! Every positive group is then split in two, choosing the left part whose
//! conditional probability of holding a defective, given the parent is
//! positive, is closest to 1/2. Only the left part is tested; when it comes
//! back negative the right part is known positive and descended without a test.
//!
//! Greedy rule, shared by both stages: sort candidates by descending advice
//! (ties by id) and grow a prefix while each extra item strictly improves the
//! objective. All masses are carried in log space.

use crate::advice::AdviceVector;
use crate::error::{Error, Result};
use crate::oracle::{ItemId, Subset, TestSession};

/// A node of the splitting tree.
#[derive(Debug, Clone, PartialEq)]
pub struct LaminarNode {
    pub items: Subset,
    /// Advice probability that every item is clean, `prod (1 - q_i)`.
    pub q_mass: f64,
    /// Index of the parent node in the run's arena.
    pub parent: Option<usize>,
    pub stage: u32,
}

impl LaminarNode {
    pub fn new(items: Subset, q: &AdviceVector, parent: Option<usize>, stage: u32) -> Self {
        let q_mass = log_clean(items.members(), q).exp();
        Self { items, q_mass, parent, stage }
    }

    pub fn root(items: Subset, q: &AdviceVector) -> Self {
        Self::new(items, q, None, 1)
    }
}

fn log_clean_term(q: f64) -> f64 {
    (-q).ln_1p()
}

fn log_clean(items: &[ItemId], q: &AdviceVector) -> f64 {
    items.iter().map(|&i| log_clean_term(q.get(i))).sum()
}

/// `1 - exp(log_clean)`, accurate when the clean probability is near one.
fn positive_prob(log_clean: f64) -> f64 {
    -log_clean.exp_m1()
}

fn sorted_by_advice(items: &[ItemId], q: &AdviceVector) -> Vec<ItemId> {
    let mut order = items.to_vec();
    order.sort_by(|&a, &b| q.get(b).total_cmp(&q.get(a)).then(a.cmp(&b)));
    order
}

/// Length of the greedy prefix of `order` (at least one, at most `max_len`).
fn greedy_prefix(order: &[ItemId], q: &AdviceVector, max_len: usize, objective: impl Fn(f64) -> f64) -> usize {
    let mut log_mass = log_clean_term(q.get(order[0]));
    let mut best = objective(log_mass);
    let mut len = 1;
    while len < max_len {
        let next = log_mass + log_clean_term(q.get(order[len]));
        let score = objective(next);
        if score < best {
            best = score;
            log_mass = next;
            len += 1;
        } else {
            break;
        }
    }
    len
}

/// First stage: disjoint groups covering `items`, each grown to bring its
/// clean probability closest to 1/2.
pub fn greedy_partition(items: &Subset, q: &AdviceVector) -> Vec<Subset> {
    let order = sorted_by_advice(items.members(), q);
    let mut groups = Vec::new();
    let mut rest = &order[..];
    while !rest.is_empty() {
        let len = greedy_prefix(rest, q, rest.len(), |log_mass| (log_mass.exp() - 0.5).abs());
        groups.push(Subset::from_members(rest[..len].to_vec()));
        rest = &rest[len..];
    }
    groups
}

/// Splits a positive node into a left part (to be tested) and the remainder.
pub fn split_positive(node: &LaminarNode, q: &AdviceVector) -> Result<(Subset, Subset)> {
    let items = node.items.members();
    if items.len() < 2 {
        return Err(Error::CannotSplit);
    }
    let parent_positive = positive_prob(log_clean(items, q));
    let order = sorted_by_advice(items, q);
    let len = greedy_prefix(&order, q, order.len() - 1, |log_mass| {
        (positive_prob(log_mass) / parent_positive - 0.5).abs()
    });
    let left = Subset::from_members(order[..len].to_vec());
    let right = Subset::from_members(order[len..].to_vec());
    Ok((left, right))
}

enum Task {
    /// Node known positive, by test or by inference.
    Descend(usize),
    /// Node whose status is unknown; test first.
    Test(usize),
}

/// Runs the Laminar Algorithm on `items` and returns the malicious members.
pub fn run_la(session: &mut TestSession<'_>, items: &Subset, q: &AdviceVector) -> Result<Subset> {
    if let Some(&i) = items.members().iter().find(|&&i| i >= q.len() || q.get(i) <= 0.0) {
        return Err(Error::PreconditionViolated(format!("advice for item {i} must be positive")));
    }
    let mut arena: Vec<LaminarNode> = Vec::new();
    let mut stack: Vec<Task> = Vec::new();
    for group in greedy_partition(items, q).into_iter().rev() {
        arena.push(LaminarNode::root(group, q));
        stack.push(Task::Test(arena.len() - 1));
    }

    let mut found = Vec::new();
    while let Some(task) = stack.pop() {
        let id = match task {
            Task::Test(id) => {
                if !session.or_test(&arena[id].items)? {
                    continue;
                }
                id
            }
            Task::Descend(id) => id,
        };
        let node = &arena[id];
        if node.items.len() == 1 {
            found.push(node.items.members()[0]);
            continue;
        }
        let (left, right) = split_positive(node, q)?;
        let stage = node.stage + 1;
        arena.push(LaminarNode::new(left, q, Some(id), stage));
        let left_id = arena.len() - 1;
        arena.push(LaminarNode::new(right, q, Some(id), stage));
        let right_id = arena.len() - 1;

        if session.or_test(&arena[left_id].items)? {
            stack.push(Task::Test(right_id));
            stack.push(Task::Descend(left_id));
        } else {
            stack.push(Task::Descend(right_id));
        }
    }
    Ok(Subset::from_members(found))
}
