pub mod auditor;
pub mod elasticity;
pub mod error;
pub mod evolution;
pub mod mesh;
pub mod model;
pub mod nitsche;
pub mod phasefield;
pub mod rigid_korn;
pub mod sparse;
