pub mod classify;
pub mod control;
pub mod harness;
pub mod neural;
pub mod owe;
pub mod pwp;
pub mod signals;
pub mod simworld;
