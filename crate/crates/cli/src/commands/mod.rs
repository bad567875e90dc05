pub mod bench;
pub mod dataset_gen;
pub mod evaluate;
pub mod fit_radii;
pub mod pipeline;
pub mod render;
pub mod sparsity_sweep;
