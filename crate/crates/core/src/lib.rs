//! Numerical laboratory for the constant-kernel Smoluchowski coagulation
//! equation in physical and self-similar variables.

pub mod grid;
pub mod profiles;
pub mod coagulation;
pub mod evolution;
pub mod observables;
pub mod rates;
pub mod linear;
pub mod inequalities;
pub mod report;
pub mod config;
pub mod experiments;
pub mod acceptance;
