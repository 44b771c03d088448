//! Period-2 orbits, the index-2 criterion, heterodimensional cycles and
//! their certificates.

pub mod certificate;
pub mod hetdim;
pub mod index;
pub mod period2;
pub mod transverse;

pub use certificate::{replay_certificate, CycleCertificate, CycleMode, ReplayReport};
pub use hetdim::{gap_profile, quasi_connection, solve_hetdim_general, solve_hetdim_symmetric, ConnectionCurve};
pub use index::{dense_spectrum, fixed_point_index, index2_criterion, orbit_index, IndexCheck};
pub use period2::{forward_closure, solve_period2, solve_period2_targeted, PeriodTwoOrbit};
pub use transverse::{verify_transverse_connection, TransverseWitness};
