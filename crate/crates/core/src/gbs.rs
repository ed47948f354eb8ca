//! Generalized binary splitting: advice-free adaptive detection.
//!
//! With `n` items left and an estimate of `d` defectives, test the lowest
//! `2^alpha` items, `alpha = floor(log2((n - d + 1) / d))`. A negative group is
//! discarded; a positive one is binary-searched down to a single defective and
//! the untested upper halves go back to the pool. When the estimate runs out,
//! one test on the whole remaining pool decides whether to stop or continue
//! with a fresh estimate of one, so recovery never depends on the estimate.

use crate::error::{Error, Result};
use crate::oracle::{ItemId, Subset, TestSession};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchOutcome {
    pub defective: ItemId,
    /// Items proven clean by negative tests.
    pub cleared: Subset,
    /// Items split off without being resolved.
    pub remainder: Subset,
}

/// Binary search for one defective in a group already known to be positive.
pub fn binary_search_defective(session: &mut TestSession<'_>, group: &Subset) -> Result<SearchOutcome> {
    if group.is_empty() || session.transcript().implied_outcome(group) != Some(true) {
        return Err(Error::PreconditionViolated(
            "group is not known positive from the transcript".into(),
        ));
    }
    search_known_positive(session, group.members())
}

fn search_known_positive(session: &mut TestSession<'_>, group: &[ItemId]) -> Result<SearchOutcome> {
    let mut live = group;
    let mut cleared = Vec::new();
    let mut remainder = Vec::new();
    while live.len() > 1 {
        let (lower, upper) = live.split_at(live.len() / 2);
        if session.or_test(&Subset::from_members(lower.to_vec()))? {
            remainder.extend_from_slice(upper);
            live = lower;
        } else {
            cleared.extend_from_slice(lower);
            live = upper;
        }
    }
    Ok(SearchOutcome {
        defective: live[0],
        cleared: Subset::from_members(cleared),
        remainder: Subset::from_members(remainder),
    })
}

/// Largest `alpha` with `d * 2^alpha <= n - d + 1`. Requires `n >= 2d - 1`, `d >= 1`.
pub fn group_exponent(n: usize, d: usize) -> u32 {
    debug_assert!(d >= 1 && n + 1 >= 2 * d);
    let ratio = (n - d + 1) / d;
    ratio.max(1).ilog2()
}

/// Detects every malicious member of `items`, starting from the estimate `d_hat`.
pub fn run_gbs(session: &mut TestSession<'_>, items: &Subset, d_hat: usize) -> Result<Subset> {
    let mut pool: Vec<ItemId> = items.members().to_vec();
    let mut budget = d_hat;
    let mut found = Vec::new();
    // The whole current pool is known to hold a defective.
    let mut pool_positive = false;

    while !pool.is_empty() {
        let n = pool.len();
        if budget == 0 {
            if !session.or_test(&Subset::from_members(pool.clone()))? {
                break;
            }
            budget = 1;
            pool_positive = true;
            continue;
        }

        let d = budget;
        if n + 2 <= 2 * d {
            for &item in &pool {
                if session.or_test(&Subset::from_members(vec![item]))? {
                    found.push(item);
                }
            }
            break;
        }

        let size = (1usize << group_exponent(n, d)).min(n);
        let group = &pool[..size];
        let positive = if pool_positive && size == n {
            true
        } else {
            session.or_test(&Subset::from_members(group.to_vec()))?
        };
        if !positive {
            pool.drain(..size);
            continue;
        }

        let outcome = search_known_positive(session, group)?;
        found.push(outcome.defective);
        let mut next: Vec<ItemId> = pool[size..].to_vec();
        next.extend_from_slice(outcome.remainder.members());
        next.sort_unstable();
        pool = next;
        budget -= 1;
        pool_positive = false;
    }
    Ok(Subset::from_members(found))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Instance, ProbVector};

    fn inst(n: usize, bad: &[usize]) -> Instance {
        let mut x = vec![false; n];
        for &b in bad {
            x[b] = true;
        }
        Instance::from_truth(x, ProbVector::uniform(n, 0.1).unwrap()).unwrap()
    }

    #[test]
    fn traced_single_defective() {
        let x = inst(7, &[3]);
        let mut s = TestSession::new(&x);
        let found = run_gbs(&mut s, &Subset::range(0, 7), 1).unwrap();
        assert_eq!(found, Subset::from_members(vec![3]));
        let tested: Vec<Vec<usize>> =
            s.transcript().records().iter().map(|r| r.subset.members().to_vec()).collect();
        assert_eq!(tested, vec![vec![0, 1, 2, 3], vec![0, 1], vec![2], vec![4, 5, 6]]);
    }

    #[test]
    fn empty_items() {
        let x = inst(3, &[1]);
        let mut s = TestSession::new(&x);
        assert!(run_gbs(&mut s, &Subset::empty(), 2).unwrap().is_empty());
        assert_eq!(s.tests_used(), 0);
    }

    #[test]
    fn zero_estimate_all_clean() {
        let x = inst(50, &[]);
        let mut s = TestSession::new(&x);
        assert!(run_gbs(&mut s, &Subset::range(0, 50), 0).unwrap().is_empty());
        assert_eq!(s.tests_used(), 1);
    }

    #[test]
    fn estimate_too_low_still_exact() {
        let x = inst(64, &[2, 17, 40, 63]);
        let mut s = TestSession::new(&x);
        let found = run_gbs(&mut s, &Subset::range(0, 64), 1).unwrap();
        assert_eq!(found, x.malicious());
    }

    #[test]
    fn estimate_too_high_still_exact() {
        let x = inst(20, &[5]);
        let mut s = TestSession::new(&x);
        assert_eq!(run_gbs(&mut s, &Subset::range(0, 20), 20).unwrap(), x.malicious());
    }

    #[test]
    fn search_singleton_known_positive() {
        let x = inst(8, &[5]);
        let mut s = TestSession::new(&x);
        let five = Subset::from_members(vec![5]);
        s.or_test(&five).unwrap();
        let before = s.tests_used();
        let out = binary_search_defective(&mut s, &five).unwrap();
        assert_eq!(out.defective, 5);
        assert!(out.cleared.is_empty() && out.remainder.is_empty());
        assert_eq!(s.tests_used(), before);
    }

    #[test]
    fn search_pair_by_inference() {
        let x = inst(4, &[1]);
        let mut s = TestSession::new(&x);
        let pair = Subset::range(0, 2);
        s.or_test(&pair).unwrap();
        let out = binary_search_defective(&mut s, &pair).unwrap();
        assert_eq!(out.defective, 1);
        assert_eq!(out.cleared, Subset::from_members(vec![0]));
        assert_eq!(s.tests_used(), 2);
    }

    #[test]
    fn search_eight_uses_three_tests() {
        for pos in 0..8 {
            let x = inst(8, &[pos]);
            let mut s = TestSession::new(&x);
            let group = Subset::range(0, 8);
            s.or_test(&group).unwrap();
            let out = binary_search_defective(&mut s, &group).unwrap();
            assert_eq!(out.defective, pos);
            assert!(s.tests_used() - 1 <= 3);
        }
    }

    #[test]
    fn search_requires_known_positive() {
        let x = inst(8, &[5]);
        let mut s = TestSession::new(&x);
        let err = binary_search_defective(&mut s, &Subset::range(0, 8)).unwrap_err();
        assert!(matches!(err, Error::PreconditionViolated(_)));
    }

    #[test]
    fn exponent_matches_floor_log() {
        assert_eq!(group_exponent(7, 1), 2);
        assert_eq!(group_exponent(1000, 10), 6);
        assert_eq!(group_exponent(2, 1), 1);
        assert_eq!(group_exponent(3, 2), 0);
    }
}
