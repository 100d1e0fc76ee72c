pub mod classifier;
pub mod curvature;
pub mod error;
pub mod exec;
pub mod grid;
pub mod hypersurface;
pub mod report;
pub mod scalarfun;
pub mod spaceform;

pub use error::{GeomError, Result};
