pub mod adversary;
pub mod bounds;
pub mod games;
pub mod hmp;
pub mod money;
pub mod montecarlo;
pub mod protocol;
pub mod qsim;
pub mod seed;
