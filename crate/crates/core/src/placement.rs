//! Exact PMU placement: minimum-cardinality bus cover under a binary
//! connectivity matrix, solved by branch and bound with a greedy incumbent
//! and a disjoint-rows lower bound, then tie-broken to the
//! lexicographically smallest optimal bus set.

use crate::network::{BusId, ConnectivityMatrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("bus {0} cannot be covered by any PMU (zero row in the connectivity matrix)")]
    Infeasible(BusId),
}

/// A proven-minimal PMU placement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementSolution {
    decision: Vec<bool>,
    pmu_buses: Vec<BusId>,
}

impl PlacementSolution {
    /// Binary decision vector indexed by bus (entry b-1 for bus b).
    pub fn decision(&self) -> &[bool] {
        &self.decision
    }

    /// Sorted 1-based ids of the PMU buses.
    pub fn pmu_buses(&self) -> &[BusId] {
        &self.pmu_buses
    }

    /// Number of PMUs placed.
    pub fn count(&self) -> usize {
        self.pmu_buses.len()
    }
}

/// True iff every bus is covered by at least one selected PMU
/// (elementwise C d >= 1).
pub fn verify_coverage(c: &ConnectivityMatrix, decision: &[bool]) -> bool {
    assert_eq!(decision.len(), c.size(), "decision length must match matrix");
    (1..=c.size()).all(|bus| c.coverers_of(bus).any(|cov| decision[cov - 1]))
}

/// Fixed-width bitset over bus indices.
#[derive(Clone, Copy, PartialEq, Eq)]
struct Mask128(u128);

impl Mask128 {
    const EMPTY: Mask128 = Mask128(0);

    fn set(&mut self, i: usize) {
        self.0 |= 1u128 << i;
    }

    fn contains(self, i: usize) -> bool {
        self.0 & (1u128 << i) != 0
    }

    fn union(self, other: Mask128) -> Mask128 {
        Mask128(self.0 | other.0)
    }

    fn intersects(self, other: Mask128) -> bool {
        self.0 & other.0 != 0
    }

    fn count(self) -> u32 {
        self.0.count_ones()
    }
}

struct Instance {
    size: usize,
    all: Mask128,
    /// cover[b] = buses covered by a PMU at bus b+1 (column b of C).
    cover: Vec<Mask128>,
    /// coverers[u] = buses whose PMU would cover bus u+1 (row u of C).
    coverers: Vec<Mask128>,
}

impl Instance {
    #[allow(clippy::needless_range_loop)]
    fn build(c: &ConnectivityMatrix) -> Result<Instance, PlacementError> {
        let size = c.size();
        assert!(
            size <= 128,
            "placement solver supports up to 128 buses, got {size}"
        );
        let mut cover = vec![Mask128::EMPTY; size];
        let mut coverers = vec![Mask128::EMPTY; size];
        for i in 0..size {
            for j in 0..size {
                if c.covers(i + 1, j + 1) {
                    coverers[i].set(j);
                    cover[j].set(i);
                }
            }
        }
        if let Some(u) = (0..size).find(|&u| coverers[u] == Mask128::EMPTY) {
            return Err(PlacementError::Infeasible(u + 1));
        }
        let mut all = Mask128::EMPTY;
        for i in 0..size {
            all.set(i);
        }
        Ok(Instance {
            size,
            all,
            cover,
            coverers,
        })
    }

    fn greedy_size(&self) -> usize {
        let mut covered = Mask128::EMPTY;
        let mut picks = 0;
        while covered != self.all {
            let best = (0..self.size)
                .max_by_key(|&b| self.cover[b].union(covered).count())
                .unwrap();
            covered = covered.union(self.cover[best]);
            picks += 1;
        }
        picks
    }

    /// Admissible lower bound: uncovered buses whose coverer sets are
    /// pairwise disjoint each force a distinct PMU.
    fn disjoint_rows_bound(&self, covered: Mask128) -> usize {
        let mut blocked = Mask128::EMPTY;
        let mut bound = 0;
        for u in 0..self.size {
            if !covered.contains(u) && !self.coverers[u].intersects(blocked) {
                bound += 1;
                blocked = blocked.union(self.coverers[u]);
            }
        }
        bound
    }

    /// Uncovered bus with the fewest candidate coverers.
    fn tightest_row(&self, covered: Mask128) -> Option<usize> {
        (0..self.size)
            .filter(|&u| !covered.contains(u))
            .min_by_key(|&u| self.coverers[u].count())
    }

    /// Phase 1: exact minimum cover size, search tree exhausted.
    fn optimal_size(&self) -> usize {
        let mut best = self.greedy_size();
        self.search_size(Mask128::EMPTY, 0, &mut best);
        best
    }

    fn search_size(&self, covered: Mask128, chosen: usize, best: &mut usize) {
        if covered == self.all {
            *best = (*best).min(chosen);
            return;
        }
        if chosen + self.disjoint_rows_bound(covered) >= *best {
            return;
        }
        let row = self.tightest_row(covered).unwrap();
        let mut candidates: Vec<usize> = (0..self.size)
            .filter(|&b| self.coverers[row].contains(b))
            .collect();
        candidates.sort_by_key(|&b| std::cmp::Reverse(self.cover[b].union(covered).count()));
        for b in candidates {
            self.search_size(covered.union(self.cover[b]), chosen + 1, best);
        }
    }

    /// Phase 2: lexicographically smallest cover of exactly `budget` buses.
    /// Include-first depth-first search over ascending bus ids returns the
    /// lex-smallest feasible selection first.
    fn lex_smallest(&self, budget: usize) -> Vec<usize> {
        let mut chosen = Vec::new();
        let found = self.search_lex(0, Mask128::EMPTY, budget, &mut chosen);
        debug_assert!(found, "a cover of optimal size must exist");
        chosen
    }

    fn search_lex(
        &self,
        next: usize,
        covered: Mask128,
        budget: usize,
        chosen: &mut Vec<usize>,
    ) -> bool {
        if covered == self.all {
            return true;
        }
        if chosen.len() == budget || chosen.len() + self.disjoint_rows_bound(covered) > budget {
            return false;
        }
        // every uncovered bus must still have a coverer at index >= next
        let future = if next >= 128 {
            Mask128::EMPTY
        } else {
            Mask128(u128::MAX >> next << next)
        };
        for u in 0..self.size {
            if !covered.contains(u) && !self.coverers[u].intersects(future) {
                return false;
            }
        }
        for b in next..self.size {
            chosen.push(b);
            if self.search_lex(b + 1, covered.union(self.cover[b]), budget, chosen) {
                return true;
            }
            chosen.pop();
        }
        false
    }
}

/// Solves the covering program exactly: minimize the PMU count subject to
/// every bus being covered, returning the lexicographically smallest bus
/// set among the minimum-cardinality covers.
pub fn solve_placement(c: &ConnectivityMatrix) -> Result<PlacementSolution, PlacementError> {
    let inst = Instance::build(c)?;
    let optimal = inst.optimal_size();
    let picks = inst.lex_smallest(optimal);
    let mut decision = vec![false; inst.size];
    for &b in &picks {
        decision[b] = true;
    }
    let pmu_buses: Vec<BusId> = picks.iter().map(|&b| b + 1).collect();
    let solution = PlacementSolution {
        decision,
        pmu_buses,
    };
    debug_assert!(verify_coverage(c, solution.decision()));
    Ok(solution)
}
