//! PMU placement, transmission scheduling, and susceptance-change
//! detection on DC power network models.
//!
//! The crate covers a complete experiment pipeline:
//!
//! 1. [`network`] parses case files and builds the incidence matrix, DC
//!    Laplacian, and topological connectivity of the grid.
//! 2. [`electrical`] derives resistance distances from the Laplacian and
//!    thresholds them into an electrical-structure connectivity matrix.
//! 3. [`placement`] solves the minimum PMU covering program exactly.
//! 4. [`schedule`] orders the placed PMUs into transmission slots using
//!    the SVD of the placement submatrix.
//! 5. [`detector`] implements the TLS-GLRT for susceptance changes with
//!    chi-squared thresholds.
//! 6. [`sim`] replays slotted transmissions against the detector and
//!    estimates probability-of-detection curves by Monte Carlo.
//!
//! The [`pipeline`] module wires the stages together for the common case:
//!
//! ```
//! use pmusched::{case14, pipeline, Method};
//!
//! let net = case14();
//! let placement = pipeline::placement_for(&net, Method::Topology)?;
//! assert_eq!(placement.pmu_buses(), &[2, 6, 7, 9]);
//!
//! let schedule = pipeline::schedule_for(&net, Method::Topology, 20)?;
//! assert_eq!(schedule.order(), &[7, 2, 6, 9]);
//! # Ok::<(), pmusched::pipeline::PipelineError>(())
//! ```

pub mod detector;
pub mod electrical;
pub mod network;
pub mod placement;
pub mod schedule;
pub mod sim;

pub use detector::{Decision, GlrtResult, MeasurementSet, NoiseParams};
pub use network::{case14, BusId, PowerNetwork, SusceptanceVector};
pub use placement::PlacementSolution;
pub use schedule::Schedule;
pub use sim::{PdCurve, SimConfig};

/// Which grid structure drives placement and scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Physical branch adjacency.
    Topology,
    /// Resistance-distance structure.
    Electrical,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Topology => "topology",
            Method::Electrical => "electrical",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "topology" => Ok(Method::Topology),
            "electrical" => Ok(Method::Electrical),
            other => Err(format!(
                "unknown method `{other}`; expected `topology` or `electrical`"
            )),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// End-to-end wiring of the pipeline stages for one network and method.
pub mod pipeline {
    use crate::electrical::{
        electrical_connectivity_with_tie_break, resistance_distance, ElectricalError,
        ResistanceDistanceMatrix,
    };
    use crate::network::{ConnectivityMatrix, PowerNetwork};
    use crate::placement::{solve_placement, PlacementError, PlacementSolution};
    use crate::schedule::{build_schedule, scheduling_submatrix, svd_ordering, Schedule, ScheduleError};
    use crate::Method;
    use nalgebra::DMatrix;
    use thiserror::Error;

    #[derive(Debug, Error)]
    pub enum PipelineError {
        #[error(transparent)]
        Electrical(#[from] ElectricalError),
        #[error(transparent)]
        Placement(#[from] PlacementError),
        #[error(transparent)]
        Schedule(#[from] ScheduleError),
        #[error("frame of {frame_len} time units cannot hold {slots} transmission slots")]
        FrameTooShort { frame_len: usize, slots: usize },
    }

    /// Resistance-distance matrix of the network at nominal susceptances,
    /// grounded at bus 1.
    pub fn distances_for(net: &PowerNetwork) -> Result<ResistanceDistanceMatrix, PipelineError> {
        let laplacian = net.dc_laplacian(&net.nominal_susceptance());
        Ok(resistance_distance(&laplacian, 1)?)
    }

    /// Connectivity matrix for the placement program under `method`. The
    /// electrical variant marks the K closest bus pairs, resolving
    /// distance ties toward the lexicographically smallest pair.
    pub fn connectivity_for(
        net: &PowerNetwork,
        method: Method,
    ) -> Result<ConnectivityMatrix, PipelineError> {
        match method {
            Method::Topology => Ok(net.topological_connectivity()),
            Method::Electrical => {
                let distances = distances_for(net)?;
                let adjacency =
                    electrical_connectivity_with_tie_break(&distances, net.branch_count())?;
                Ok(adjacency.matrix)
            }
        }
    }

    /// Minimum PMU placement under `method`.
    pub fn placement_for(
        net: &PowerNetwork,
        method: Method,
    ) -> Result<PlacementSolution, PipelineError> {
        Ok(solve_placement(&connectivity_for(net, method)?)?)
    }

    /// Matrix whose placement submatrix drives the transmission order:
    /// the binary connectivity matrix for the topological method and the
    /// resistance-distance matrix for the electrical one.
    pub fn scheduling_matrix_for(
        net: &PowerNetwork,
        method: Method,
    ) -> Result<DMatrix<f64>, PipelineError> {
        match method {
            Method::Topology => Ok(net.topological_connectivity().to_dense()),
            Method::Electrical => Ok(distances_for(net)?.as_matrix().clone()),
        }
    }

    /// Placement plus transmission schedule over a frame of `frame_len`
    /// time units.
    pub fn schedule_for(
        net: &PowerNetwork,
        method: Method,
        frame_len: usize,
    ) -> Result<Schedule, PipelineError> {
        let placement = placement_for(net, method)?;
        if frame_len < placement.count() {
            return Err(PipelineError::FrameTooShort {
                frame_len,
                slots: placement.count(),
            });
        }
        let matrix = scheduling_matrix_for(net, method)?;
        let sub = scheduling_submatrix(&matrix, placement.pmu_buses())?;
        Ok(build_schedule(
            &svd_ordering(&sub),
            placement.pmu_buses(),
            frame_len,
            method,
        ))
    }
}
