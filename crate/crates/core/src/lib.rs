pub mod numerics;
pub mod igmm_vae;
pub mod rgp;
pub mod envs;
pub mod planner;
pub mod trainer;
pub mod cli;
