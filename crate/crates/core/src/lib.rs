pub mod autodiff;
pub mod backbone;
pub mod cli;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod heads;
pub mod relgraph;
pub mod synth;
pub mod trainer;
