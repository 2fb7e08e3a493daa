//! Electrical structure of the grid: resistance distances obtained by
//! grounding the DC Laplacian at a reference bus, and the thresholded
//! binary adjacency built from the smallest pairwise distances.

use crate::network::{BusId, ConnectivityMatrix};
use nalgebra::DMatrix;
use thiserror::Error;

/// Condition-number cutoff beyond which the grounded Laplacian is treated
/// as numerically singular (disconnected or degenerate network).
const SINGULARITY_CONDITION: f64 = 1e12;

#[derive(Debug, Error)]
pub enum ElectricalError {
    #[error("reference bus {reference} outside 1..={bus_count}")]
    BadReference { reference: BusId, bus_count: usize },
    #[error(
        "grounded Laplacian is numerically singular (condition {condition:.3e}); \
         the network is disconnected or degenerate"
    )]
    Singular { condition: f64 },
    #[error("{requested} branches requested but only {available} bus pairs exist")]
    TooManyBranches { requested: usize, available: usize },
    #[error("distance ties straddle the branch-count cut: {0:?}")]
    TieAtCut(Vec<(BusId, BusId)>),
}

/// Pairwise resistance distances between buses. Symmetric, zero diagonal,
/// and independent of the reference bus used during construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ResistanceDistanceMatrix {
    entries: DMatrix<f64>,
    reference_bus: BusId,
}

impl ResistanceDistanceMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn bus_count(&self) -> usize {
        self.entries.nrows()
    }

    /// Reference bus grounded while building the matrix.
    pub fn reference_bus(&self) -> BusId {
        self.reference_bus
    }

    /// Distance between 1-based buses i and j.
    pub fn distance(&self, i: BusId, j: BusId) -> f64 {
        self.entries[(i - 1, j - 1)]
    }
}

/// Binary electrical connectivity: the `branch_count` closest bus pairs,
/// plus a unit diagonal so a PMU covers its own bus in the placement
/// program.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectricalAdjacency {
    pub matrix: ConnectivityMatrix,
    pub lambda: f64,
}

/// Inverse of the Laplacian with the reference bus row and column removed.
///
/// The result is the (B-1) x (B-1) symmetric positive-definite matrix of
/// voltage responses to unit current injections with bus `reference` held
/// at zero.
pub fn grounded_inverse(
    laplacian: &DMatrix<f64>,
    reference: BusId,
) -> Result<DMatrix<f64>, ElectricalError> {
    let b = laplacian.nrows();
    assert_eq!(b, laplacian.ncols(), "Laplacian must be square");
    if reference == 0 || reference > b {
        return Err(ElectricalError::BadReference {
            reference,
            bus_count: b,
        });
    }
    let grounded = laplacian
        .clone()
        .remove_row(reference - 1)
        .remove_column(reference - 1);
    if grounded.is_empty() {
        return Ok(grounded);
    }
    let eig = grounded.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !min.is_finite() || min <= 0.0 || max / min > SINGULARITY_CONDITION {
        return Err(ElectricalError::Singular {
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        });
    }
    let inv_diag = nalgebra::DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| 1.0 / l),
    );
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eig.eigenvectors.transpose();
    // exact symmetry keeps downstream assembly clean
    Ok(0.5 * (&inv + inv.transpose()))
}

/// Full B x B resistance-distance matrix assembled from the grounded
/// inverse: e(i, j) = g_ii + g_jj - g_ij - g_ji for i, j != r, and the
/// grounded diagonal fills row and column r.
pub fn resistance_distance(
    laplacian: &DMatrix<f64>,
    reference: BusId,
) -> Result<ResistanceDistanceMatrix, ElectricalError> {
    let b = laplacian.nrows();
    let ginv = grounded_inverse(laplacian, reference)?;
    // map grounded index -> bus index (0-based)
    let buses: Vec<usize> = (0..b).filter(|&i| i != reference - 1).collect();
    let mut e = DMatrix::zeros(b, b);
    for (p, &i) in buses.iter().enumerate() {
        for (q, &j) in buses.iter().enumerate() {
            e[(i, j)] = ginv[(p, p)] + ginv[(q, q)] - ginv[(p, q)] - ginv[(q, p)];
        }
        let gamma = ginv[(p, p)];
        e[(reference - 1, i)] = gamma;
        e[(i, reference - 1)] = gamma;
    }
    for i in 0..b {
        e[(i, i)] = 0.0;
    }
    Ok(ResistanceDistanceMatrix {
        entries: e,
        reference_bus: reference,
    })
}

/// Marks the `branch_count` smallest-distance bus pairs as electrically
/// connected; the reported threshold is the midpoint between the last
/// included and first excluded distance.
///
/// Equal distances straddling the cut are an error carrying the tied pairs;
/// [`electrical_connectivity_with_tie_break`] applies the documented
/// lexicographic resolution instead.
pub fn electrical_connectivity(
    e: &ResistanceDistanceMatrix,
    branch_count: usize,
) -> Result<ElectricalAdjacency, ElectricalError> {
    let (pairs, lambda, tied) = threshold_pairs(e, branch_count)?;
    if let Some(tied) = tied {
        return Err(ElectricalError::TieAtCut(tied));
    }
    Ok(assemble(e.bus_count(), &pairs, branch_count, lambda))
}

/// As [`electrical_connectivity`], but a tie at the cut keeps the pairs
/// with lexicographically smallest (i, j) until exactly `branch_count`
/// are included.
pub fn electrical_connectivity_with_tie_break(
    e: &ResistanceDistanceMatrix,
    branch_count: usize,
) -> Result<ElectricalAdjacency, ElectricalError> {
    let (pairs, lambda, _) = threshold_pairs(e, branch_count)?;
    Ok(assemble(e.bus_count(), &pairs, branch_count, lambda))
}

/// Sorted upper-triangular pairs, the threshold, and any tie at the cut.
#[allow(clippy::type_complexity)]
fn threshold_pairs(
    e: &ResistanceDistanceMatrix,
    branch_count: usize,
) -> Result<(Vec<(f64, BusId, BusId)>, f64, Option<Vec<(BusId, BusId)>>), ElectricalError> {
    let b = e.bus_count();
    let available = b * (b - 1) / 2;
    if branch_count > available {
        return Err(ElectricalError::TooManyBranches {
            requested: branch_count,
            available,
        });
    }
    let mut pairs: Vec<(f64, BusId, BusId)> = Vec::with_capacity(available);
    for i in 1..=b {
        for j in (i + 1)..=b {
            pairs.push((e.distance(i, j), i, j));
        }
    }
    // ascending distance, lexicographic (i, j) among equals
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let lambda = if branch_count == 0 {
        0.5 * pairs.first().map(|p| p.0).unwrap_or(1.0)
    } else if branch_count == available {
        1.5 * pairs.last().unwrap().0
    } else {
        0.5 * (pairs[branch_count - 1].0 + pairs[branch_count].0)
    };

    let tied = if branch_count > 0
        && branch_count < available
        && pairs[branch_count - 1].0 == pairs[branch_count].0
    {
        let cut = pairs[branch_count - 1].0;
        Some(
            pairs
                .iter()
                .filter(|p| p.0 == cut)
                .map(|p| (p.1, p.2))
                .collect(),
        )
    } else {
        None
    };
    Ok((pairs, lambda, tied))
}

fn assemble(
    bus_count: usize,
    sorted_pairs: &[(f64, BusId, BusId)],
    branch_count: usize,
    lambda: f64,
) -> ElectricalAdjacency {
    let mut matrix = ConnectivityMatrix::from_edges(bus_count, &[]);
    for &(_, i, j) in sorted_pairs.iter().take(branch_count) {
        matrix.set_pair(i, j);
    }
    ElectricalAdjacency { matrix, lambda }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{case14, PowerNetwork};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_triangle_laplacian() -> DMatrix<f64> {
        let net = PowerNetwork::new(3, [(1, 2, 1.0), (2, 3, 1.0), (1, 3, 1.0)]).unwrap();
        net.dc_laplacian(&net.nominal_susceptance())
    }

    #[test]
    fn two_bus_grounded_inverse() {
        let net = PowerNetwork::new(2, [(1, 2, 0.5)]).unwrap();
        let l = net.dc_laplacian(&net.nominal_susceptance());
        let g = grounded_inverse(&l, 1).unwrap();
        assert_eq!(g.nrows(), 1);
        assert_abs_diff_eq!(g[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn triangle_grounded_inverse_by_hand() {
        // grounding bus 3 of the unit triangle leaves [[2,-1],[-1,2]]
        let g = grounded_inverse(&unit_triangle_laplacian(), 3).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[(0, 1)], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[(1, 0)], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[(1, 1)], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn case14_grounded_inverse_is_positive_definite() {
        let net = case14();
        let l = net.dc_laplacian(&net.nominal_susceptance());
        let g = grounded_inverse(&l, 1).unwrap();
        let eigs = g.symmetric_eigenvalues();
        assert!(eigs.iter().all(|&e| e > 0.0), "eigenvalues {eigs:?}");
    }

    #[test]
    fn singular_laplacian_detected() {
        // two disconnected components: Laplacian rank B-2
        let mut l = DMatrix::zeros(4, 4);
        for (i, j) in [(0usize, 1usize), (2, 3)] {
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
        }
        assert!(matches!(
            grounded_inverse(&l, 1),
            Err(ElectricalError::Singular { .. })
        ));
    }

    #[test]
    fn two_bus_distance_is_reciprocal_conductance() {
        let net = PowerNetwork::new(2, [(1, 2, 0.5)]).unwrap();
        let l = net.dc_laplacian(&net.nominal_susceptance());
        let e = resistance_distance(&l, 1).unwrap();
        assert_abs_diff_eq!(e.distance(1, 2), 0.5, epsilon = 1e-12);
        assert_eq!(e.distance(1, 1), 0.0);
    }

    #[test]
    fn triangle_distances_are_two_thirds() {
        let e = resistance_distance(&unit_triangle_laplacian(), 1).unwrap();
        for (i, j) in [(1, 2), (1, 3), (2, 3)] {
            assert_abs_diff_eq!(e.distance(i, j), 2.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn case14_reference_invariance() {
        let net = case14();
        let l = net.dc_laplacian(&net.nominal_susceptance());
        let e1 = resistance_distance(&l, 1).unwrap();
        let e14 = resistance_distance(&l, 14).unwrap();
        let diff = (e1.as_matrix() - e14.as_matrix()).abs().max();
        assert!(diff < 1e-9, "max deviation {diff}");
    }

    #[test]
    fn case14_known_entries() {
        let net = case14();
        let l = net.dc_laplacian(&net.nominal_susceptance());
        let e = resistance_distance(&l, 1).unwrap();
        // bus 8 hangs off bus 7 alone, so e(7,8) is that branch's reactance
        assert_abs_diff_eq!(e.distance(7, 8), 0.17615, epsilon = 1e-12);
        assert_abs_diff_eq!(e.distance(1, 2), 0.049586016249, epsilon = 1e-9);
    }

    #[test]
    fn triangle_take_everything() {
        let e = resistance_distance(&unit_triangle_laplacian(), 1).unwrap();
        let adj = electrical_connectivity(&e, 3).unwrap();
        assert_eq!(adj.matrix.edge_count(), 3);
        assert!(adj.lambda > 2.0 / 3.0);
    }

    #[test]
    fn zero_branches_gives_identity() {
        let e = resistance_distance(&unit_triangle_laplacian(), 1).unwrap();
        let adj = electrical_connectivity(&e, 0).unwrap();
        assert_eq!(adj.matrix.edge_count(), 0);
        for i in 1..=3 {
            assert!(adj.matrix.covers(i, i));
        }
    }

    #[test]
    fn case14_adjacency_marks_twenty_pairs() {
        let net = case14();
        let l = net.dc_laplacian(&net.nominal_susceptance());
        let e = resistance_distance(&l, 1).unwrap();
        let adj = electrical_connectivity(&e, 20).unwrap();
        assert_eq!(adj.matrix.edge_count(), 20);
        assert_abs_diff_eq!(adj.lambda, 0.157044718681, epsilon = 1e-9);
    }

    #[test]
    fn tie_at_cut_reported_and_resolved() {
        // star with equal reactances: e(1,k) = 1, e(j,k) = 2 for j,k != 1
        let net = PowerNetwork::new(4, [(1, 2, 1.0), (1, 3, 1.0), (1, 4, 1.0)]).unwrap();
        let l = net.dc_laplacian(&net.nominal_susceptance());
        let e = resistance_distance(&l, 1).unwrap();
        let err = electrical_connectivity(&e, 4).unwrap_err();
        match err {
            ElectricalError::TieAtCut(tied) => {
                assert_eq!(tied, vec![(2, 3), (2, 4), (3, 4)]);
            }
            other => panic!("expected tie error, got {other:?}"),
        }
        let adj = electrical_connectivity_with_tie_break(&e, 4).unwrap();
        assert_eq!(adj.matrix.edge_count(), 4);
        assert!(adj.matrix.covers(2, 3), "lexicographically smallest tied pair");
        assert!(!adj.matrix.covers(2, 4));
        assert!(!adj.matrix.covers(3, 4));
    }

    #[test]
    fn too_many_branches_rejected() {
        let e = resistance_distance(&unit_triangle_laplacian(), 1).unwrap();
        assert!(matches!(
            electrical_connectivity(&e, 4),
            Err(ElectricalError::TooManyBranches { .. })
        ));
    }

    /// Independent oracle: e(i,j) from the Moore-Penrose pseudoinverse of
    /// the full Laplacian. For a connected graph the pseudoinverse equals
    /// (L + J/B)^-1 - J/B with J the all-ones matrix, which an LU solve
    /// computes without touching the eigen path the implementation uses.
    fn pseudoinverse_distances(l: &DMatrix<f64>) -> DMatrix<f64> {
        let b = l.nrows();
        let j = DMatrix::from_element(b, b, 1.0 / b as f64);
        let pinv = (l + &j).try_inverse().expect("shifted Laplacian is nonsingular") - &j;
        DMatrix::from_fn(b, b, |i, j| pinv[(i, i)] + pinv[(j, j)] - 2.0 * pinv[(i, j)])
    }

    #[test]
    fn case14_matches_pseudoinverse_oracle() {
        let net = case14();
        let l = net.dc_laplacian(&net.nominal_susceptance());
        let e = resistance_distance(&l, 1).unwrap();
        let diff = (e.as_matrix() - pseudoinverse_distances(&l)).abs().max();
        assert!(diff < 1e-8, "max deviation {diff}");
    }

    proptest! {
        #[test]
        fn metric_axioms_hold(net in crate::network::tests::arb_network(10)) {
            let l = net.dc_laplacian(&net.nominal_susceptance());
            let e = resistance_distance(&l, 1).unwrap();
            let b = net.bus_count();
            for i in 1..=b {
                prop_assert_eq!(e.distance(i, i), 0.0);
                for j in 1..=b {
                    prop_assert!((e.distance(i, j) - e.distance(j, i)).abs() < 1e-9);
                    if i != j {
                        prop_assert!(e.distance(i, j) > 0.0);
                    }
                    for k in 1..=b {
                        prop_assert!(
                            e.distance(i, j) <= e.distance(i, k) + e.distance(k, j) + 1e-9
                        );
                    }
                }
            }
        }

        #[test]
        fn reference_bus_is_immaterial(net in crate::network::tests::arb_network(10)) {
            let l = net.dc_laplacian(&net.nominal_susceptance());
            let base = resistance_distance(&l, 1).unwrap();
            for r in 2..=net.bus_count() {
                let other = resistance_distance(&l, r).unwrap();
                let diff = (base.as_matrix() - other.as_matrix()).abs().max();
                prop_assert!(diff < 1e-9, "reference {r}: deviation {diff}");
            }
        }

        #[test]
        fn matches_pseudoinverse_oracle(net in crate::network::tests::arb_network(10)) {
            let l = net.dc_laplacian(&net.nominal_susceptance());
            let e = resistance_distance(&l, 1).unwrap();
            let diff = (e.as_matrix() - pseudoinverse_distances(&l)).abs().max();
            prop_assert!(diff < 1e-8, "max deviation {diff}");
        }

        #[test]
        fn adjacency_is_scale_invariant(net in crate::network::tests::arb_network(8)) {
            let l = net.dc_laplacian(&net.nominal_susceptance());
            let e = resistance_distance(&l, 1).unwrap();
            let scaled = ResistanceDistanceMatrix {
                entries: e.as_matrix() * 10.0,
                reference_bus: e.reference_bus(),
            };
            let k = net.branch_count().min(net.bus_count() * (net.bus_count() - 1) / 2);
            let a = electrical_connectivity_with_tie_break(&e, k).unwrap();
            let b = electrical_connectivity_with_tie_break(&scaled, k).unwrap();
            prop_assert_eq!(a.matrix, b.matrix);
        }
    }
}
