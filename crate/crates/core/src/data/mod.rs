//! File formats: MNIST IDX ingestion, checkpoint container, CSV reports,
//! and PGM image grids.

pub mod checkpoint;
pub mod mnist;
pub mod pgm;
pub mod report;
