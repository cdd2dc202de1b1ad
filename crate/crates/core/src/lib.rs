pub mod autodiff;
pub mod cli;
pub mod dynamics;
pub mod evaluation;
pub mod koopman;
pub mod linalg;
pub mod losses;
pub mod training;
