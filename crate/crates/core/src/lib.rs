pub mod autodiff;
pub mod drrn;
pub mod harness;
pub mod kga2c;
pub mod knowledge;
pub mod runlog;
pub mod scorer;
pub mod vocab;
pub mod world;
