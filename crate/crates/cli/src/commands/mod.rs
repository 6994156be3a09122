pub mod ablate;
pub mod bench;
pub mod chair;
pub mod inject;
pub mod margin;
pub mod score;
pub mod select;
pub mod simulate;
