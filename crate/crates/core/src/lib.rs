pub mod autodiff;
pub mod checks;
pub mod data;
pub mod eval;
pub mod layers;
pub mod model;
pub mod train;
pub mod variations;
