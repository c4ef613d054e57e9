pub mod experiments;
pub mod roll;
pub mod search;
pub mod stats;
