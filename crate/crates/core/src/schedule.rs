//! Transmission ordering for placed PMUs: SVD of the placement submatrix,
//! slot assignment by scaled left-singular-vector magnitudes, and the
//! conflict rule that assigns each slot the strongest not-yet-scheduled bus.

use crate::network::BusId;
use crate::Method;
use nalgebra::DMatrix;
use thiserror::Error;

/// Relative tolerance for treating singular values or scaled magnitudes as
/// tied; exact ties are common for binary submatrices and must break
/// deterministically.
const TIE_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("placement set is empty")]
    EmptyPlacement,
    #[error("bus {bus} outside 1..={bus_count}")]
    BusOutOfRange { bus: BusId, bus_count: usize },
    #[error("bus {0} appears twice in the placement set")]
    DuplicateBus(BusId),
}

/// SVD of the placement submatrix with columns sorted by descending
/// singular value, plus the per-entry magnitudes of the scaled left
/// singular vectors that drive the slot assignment.
///
/// Right singular vectors are retained for completeness but do not enter
/// the ordering policy.
#[derive(Debug, Clone)]
pub struct SvdOrdering {
    singular_values: Vec<f64>,
    left: DMatrix<f64>,
    right: DMatrix<f64>,
    scaled_magnitudes: DMatrix<f64>,
}

impl SvdOrdering {
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn left_vectors(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right
    }

    /// Entry (i, n): magnitude of row i of the n-th scaled left singular
    /// vector, sigma_n |u_n[i]|.
    pub fn scaled_magnitudes(&self) -> &DMatrix<f64> {
        &self.scaled_magnitudes
    }
}

/// A transmission schedule: one placed bus per slot, with the slot-end
/// times partitioning the frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    order: Vec<BusId>,
    source: Method,
    slot_boundaries: Vec<usize>,
}

impl Schedule {
    /// Bus transmitting in each slot, starting with slot 1.
    pub fn order(&self) -> &[BusId] {
        &self.order
    }

    pub fn source(&self) -> Method {
        self.source
    }

    /// Slot-end times round(n T / N), the last equal to the frame length.
    pub fn slot_boundaries(&self) -> &[usize] {
        &self.slot_boundaries
    }

    pub fn slot_count(&self) -> usize {
        self.order.len()
    }

    pub fn frame_len(&self) -> usize {
        *self.slot_boundaries.last().expect("schedule is non-empty")
    }
}

/// Rows and columns of `m` for the placed buses, in ascending bus-id
/// order, so row n of the result belongs to the n-th smallest placed bus.
pub fn scheduling_submatrix(
    m: &DMatrix<f64>,
    buses: &[BusId],
) -> Result<DMatrix<f64>, ScheduleError> {
    let sorted = sorted_buses(m.nrows(), buses)?;
    let n = sorted.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        m[(sorted[i] - 1, sorted[j] - 1)]
    }))
}

fn sorted_buses(bus_count: usize, buses: &[BusId]) -> Result<Vec<BusId>, ScheduleError> {
    if buses.is_empty() {
        return Err(ScheduleError::EmptyPlacement);
    }
    let mut sorted = buses.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(ScheduleError::DuplicateBus(pair[0]));
        }
    }
    for &bus in &sorted {
        if bus == 0 || bus > bus_count {
            return Err(ScheduleError::BusOutOfRange { bus, bus_count });
        }
    }
    Ok(sorted)
}

/// Full SVD of the placement submatrix with singular values sorted
/// descending. Sign choices of the singular vectors cannot affect the
/// schedule because only entry magnitudes are kept.
pub fn svd_ordering(sub: &DMatrix<f64>) -> SvdOrdering {
    let n = sub.nrows();
    assert_eq!(n, sub.ncols(), "submatrix must be square");
    let svd = sub.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = svd.singular_values;

    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap().then(a.cmp(&b)));

    let singular_values: Vec<f64> = perm.iter().map(|&c| sigma[c]).collect();
    let left = DMatrix::from_fn(n, n, |i, c| u[(i, perm[c])]);
    let right = DMatrix::from_fn(n, n, |i, c| v_t[(perm[c], i)]);
    let scaled_magnitudes =
        DMatrix::from_fn(n, n, |i, c| (singular_values[c] * left[(i, c)]).abs());
    SvdOrdering {
        singular_values,
        left,
        right,
        scaled_magnitudes,
    }
}

/// Assigns slots from the scaled singular-vector magnitudes: columns are
/// visited in decreasing singular-value order (equal values ordered by the
/// bus holding the column's largest entry), and each slot goes to the
/// strongest bus not yet scheduled, smallest bus id on ties.
///
/// `buses` is the placement set; `frame_len` must be at least the set size.
#[allow(clippy::needless_range_loop)]
pub fn build_schedule(
    ord: &SvdOrdering,
    buses: &[BusId],
    frame_len: usize,
    source: Method,
) -> Schedule {
    let n = buses.len();
    assert_eq!(
        n,
        ord.scaled_magnitudes.nrows(),
        "ordering size must match the placement set"
    );
    assert!(frame_len >= n, "frame must have at least one unit per slot");
    let mut sorted = buses.to_vec();
    sorted.sort_unstable();

    let sigma_max = ord.singular_values.first().copied().unwrap_or(0.0);
    let tol = TIE_REL_TOL * sigma_max;

    // argmax bus per column, used to order columns with equal sigma;
    // ascending scan keeps the smallest bus among tolerance-tied entries
    let col_anchor: Vec<BusId> = (0..n)
        .map(|c| {
            let mut best = 0;
            for i in 1..n {
                if ord.scaled_magnitudes[(i, c)] > ord.scaled_magnitudes[(best, c)] + tol {
                    best = i;
                }
            }
            sorted[best]
        })
        .collect();
    // group tolerance-tied sigmas against each group's leader so the sort
    // key is a genuine total order (sigma is already descending)
    let mut group = vec![0usize; n];
    let mut leader = 0;
    for c in 1..n {
        if ord.singular_values[c] < ord.singular_values[leader] - tol {
            group[c] = group[leader] + 1;
            leader = c;
        } else {
            group[c] = group[leader];
        }
    }
    let mut columns: Vec<usize> = (0..n).collect();
    columns.sort_by(|&a, &b| {
        group[a]
            .cmp(&group[b])
            .then(col_anchor[a].cmp(&col_anchor[b]))
            .then(a.cmp(&b))
    });

    let mut assigned = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for &c in &columns {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if assigned[i] {
                continue;
            }
            best = Some(match best {
                None => i,
                Some(cur) if ord.scaled_magnitudes[(i, c)] > ord.scaled_magnitudes[(cur, c)] + tol => i,
                Some(cur) => cur,
            });
        }
        let pick = best.expect("one unassigned bus per remaining column");
        assigned[pick] = true;
        order.push(sorted[pick]);
    }

    Schedule {
        order,
        source,
        slot_boundaries: boundaries(frame_len, n),
    }
}

/// Keeps the first `keep` slots' buses in order and re-partitions the
/// frame over the remaining transmissions.
pub fn truncate_schedule(schedule: &Schedule, keep: usize) -> Schedule {
    assert!(
        keep >= 1 && keep <= schedule.slot_count(),
        "kept slot count must be in 1..=N"
    );
    let frame_len = schedule.frame_len();
    Schedule {
        order: schedule.order[..keep].to_vec(),
        source: schedule.source,
        slot_boundaries: boundaries(frame_len, keep),
    }
}

fn boundaries(frame_len: usize, slots: usize) -> Vec<usize> {
    (1..=slots)
        .map(|n| ((n * frame_len) as f64 / slots as f64).round() as usize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electrical::resistance_distance;
    use crate::network::case14;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn corner_submatrix() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let sub = scheduling_submatrix(&m, &[1, 3]).unwrap();
        assert_eq!(sub, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 7.0, 9.0]));
        let all = scheduling_submatrix(&m, &[1, 2, 3]).unwrap();
        assert_eq!(all, m);
    }

    #[test]
    fn case14_electrical_submatrix_is_seven_by_seven() {
        let net = case14();
        let l = net.dc_laplacian(&net.nominal_susceptance());
        let e = resistance_distance(&l, 1).unwrap();
        let sub = scheduling_submatrix(e.as_matrix(), &[1, 3, 8, 11, 12, 13, 14]).unwrap();
        assert_eq!((sub.nrows(), sub.ncols()), (7, 7));
        assert_abs_diff_eq!(sub[(0, 0)], 0.0);
        assert_abs_diff_eq!(sub[(2, 2)], 0.0);
    }

    #[test]
    fn out_of_range_bus_rejected() {
        let m = DMatrix::identity(3, 3);
        assert!(matches!(
            scheduling_submatrix(&m, &[1, 4]),
            Err(ScheduleError::BusOutOfRange { bus: 4, .. })
        ));
        assert!(matches!(
            scheduling_submatrix(&m, &[2, 2]),
            Err(ScheduleError::DuplicateBus(2))
        ));
    }

    #[test]
    fn identity_svd() {
        let ord = svd_ordering(&DMatrix::identity(2, 2));
        assert_abs_diff_eq!(ord.singular_values()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ord.singular_values()[1], 1.0, epsilon = 1e-12);
        for v in ord.scaled_magnitudes().iter() {
            assert!(v.abs() < 1e-12 || (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_svd() {
        let ord = svd_ordering(&DMatrix::from_diagonal(&nalgebra::dvector![3.0, 1.0]));
        assert_abs_diff_eq!(ord.singular_values()[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ord.singular_values()[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ord.scaled_magnitudes()[(0, 0)], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ord.scaled_magnitudes()[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_two_by_two_by_hand() {
        // eigenvalues 3 and 1, eigenvectors (1,1)/sqrt2 and (1,-1)/sqrt2
        let ord = svd_ordering(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        assert_abs_diff_eq!(ord.singular_values()[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ord.singular_values()[1], 1.0, epsilon = 1e-12);
        let expected = 3.0 / 2.0f64.sqrt();
        assert_abs_diff_eq!(ord.scaled_magnitudes()[(0, 0)], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(ord.scaled_magnitudes()[(1, 0)], expected, epsilon = 1e-12);
    }

    #[test]
    fn topological_schedule_matches_published_order() {
        // binary connectivity submatrix on the published 4-PMU placement
        let c = case14().topological_connectivity().to_dense();
        let buses = [2, 6, 7, 9];
        let sub = scheduling_submatrix(&c, &buses).unwrap();
        let ord = svd_ordering(&sub);
        let sched = build_schedule(&ord, &buses, 20, Method::Topology);
        assert_eq!(sched.order(), &[7, 2, 6, 9]);
        assert_eq!(sched.slot_boundaries(), &[5, 10, 15, 20]);
    }

    #[test]
    fn electrical_schedule_pinned() {
        // order on this crate's 14-bus electrical placement, frozen from an
        // independent dense-SVD evaluation
        let net = case14();
        let l = net.dc_laplacian(&net.nominal_susceptance());
        let e = resistance_distance(&l, 1).unwrap();
        let buses = [1, 6, 7, 8, 14];
        let sub = scheduling_submatrix(e.as_matrix(), &buses).unwrap();
        let sched = build_schedule(&svd_ordering(&sub), &buses, 20, Method::Electrical);
        assert_eq!(sched.order(), &[8, 14, 1, 6, 7]);
        assert_eq!(sched.slot_boundaries(), &[4, 8, 12, 16, 20]);
    }

    #[test]
    fn single_pmu_schedule() {
        let sub = DMatrix::from_element(1, 1, 5.0);
        let sched = build_schedule(&svd_ordering(&sub), &[9], 20, Method::Topology);
        assert_eq!(sched.order(), &[9]);
        assert_eq!(sched.slot_boundaries(), &[20]);
    }

    #[test]
    fn degenerate_spectrum_orders_by_anchor_bus() {
        let sched = build_schedule(
            &svd_ordering(&DMatrix::identity(3, 3)),
            &[9, 4, 7],
            21,
            Method::Topology,
        );
        assert_eq!(sched.order(), &[4, 7, 9]);
        assert_eq!(sched.slot_boundaries(), &[7, 14, 21]);
    }

    #[test]
    fn truncation_keeps_prefix_and_repartitions() {
        let net = case14();
        let l = net.dc_laplacian(&net.nominal_susceptance());
        let e = resistance_distance(&l, 1).unwrap();
        let buses = [1, 6, 7, 8, 14];
        let sub = scheduling_submatrix(e.as_matrix(), &buses).unwrap();
        let full = build_schedule(&svd_ordering(&sub), &buses, 20, Method::Electrical);

        let four = truncate_schedule(&full, 4);
        assert_eq!(four.order(), &[8, 14, 1, 6]);
        assert_eq!(four.slot_boundaries(), &[5, 10, 15, 20]);

        let three = truncate_schedule(&full, 3);
        assert_eq!(three.order(), &[8, 14, 1]);
        assert_eq!(three.slot_boundaries(), &[7, 13, 20]);

        assert_eq!(&truncate_schedule(&full, full.slot_count()), &full);
    }

    /// Random symmetric matrix over `n` distinct bus ids.
    fn arb_symmetric(n: usize) -> impl Strategy<Value = (DMatrix<f64>, Vec<BusId>)> {
        let entries = proptest::collection::vec(-10.0f64..10.0, n * n);
        let labels = Just((1..=n).map(|i| i * 2).collect::<Vec<_>>());
        (entries, labels).prop_map(move |(vals, buses)| {
            let raw = DMatrix::from_vec(n, n, vals);
            let sym = 0.5 * (&raw + raw.transpose());
            (sym, buses)
        })
    }

    proptest! {
        #[test]
        fn schedule_is_a_permutation((sub, buses) in arb_symmetric(6)) {
            let sched = build_schedule(&svd_ordering(&sub), &buses, 30, Method::Electrical);
            let mut got = sched.order().to_vec();
            got.sort_unstable();
            prop_assert_eq!(got, buses);
        }

        #[test]
        fn svd_matches_symmetric_eigen_oracle((sub, _) in arb_symmetric(5)) {
            // for symmetric matrices the singular values are the
            // eigenvalue magnitudes and |u_n| matches the eigenvectors
            let ord = svd_ordering(&sub);
            let eig = sub.clone().symmetric_eigen();
            let mut mags: Vec<f64> = eig.eigenvalues.iter().map(|l| l.abs()).collect();
            mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for (got, want) in ord.singular_values().iter().zip(mags.iter()) {
                prop_assert!((got - want).abs() < 1e-8 * (1.0 + want.abs()));
            }
        }

        #[test]
        fn positive_scaling_preserves_order(
            (sub, buses) in arb_symmetric(5),
            scale in 0.01f64..100.0
        ) {
            let a = build_schedule(&svd_ordering(&sub), &buses, 25, Method::Electrical);
            let scaled = &sub * scale;
            let b = build_schedule(&svd_ordering(&scaled), &buses, 25, Method::Electrical);
            prop_assert_eq!(a.order(), b.order());
        }

        #[test]
        fn relabeling_buses_permutes_schedule(
            (sub, _) in arb_symmetric(5),
            perm_seed in 0u64..1000
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = sub.nrows();
            let buses: Vec<BusId> = (1..=n).collect();
            let base = build_schedule(&svd_ordering(&sub), &buses, 25, Method::Electrical);

            // relabel bus i as pi(i); rebuild the full matrix accordingly
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
            let mut pi: Vec<BusId> = (1..=n).collect();
            pi.shuffle(&mut rng);
            let relabeled = DMatrix::from_fn(n, n, |i, j| {
                let oi = pi.iter().position(|&p| p == i + 1).unwrap();
                let oj = pi.iter().position(|&p| p == j + 1).unwrap();
                sub[(oi, oj)]
            });
            let new_buses: Vec<BusId> = (1..=n).collect();
            let sub2 = scheduling_submatrix(&relabeled, &new_buses).unwrap();
            let mapped = build_schedule(&svd_ordering(&sub2), &new_buses, 25, Method::Electrical);

            let expect: Vec<BusId> = base.order().iter().map(|&b| pi[b - 1]).collect();
            prop_assert_eq!(mapped.order(), expect.as_slice());
        }
    }
}
