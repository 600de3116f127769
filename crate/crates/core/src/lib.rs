//! Monte Carlo tools for the defocusing energy-critical wave equation with
//! randomized initial data on a periodic box.

mod fft;
pub mod grid;
pub mod randomization;
pub mod propagator;
pub mod solver;
pub mod norms;
pub mod experiments;
pub mod runner;
