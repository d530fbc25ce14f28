pub mod detect;
pub mod eval;
pub mod gradcheck;
pub mod simulate;
pub mod train;
