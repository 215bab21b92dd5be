//! Synthetic journeys with planted structure.

mod config;
mod generate;
mod truth;

pub use config::{SynthConfig, INTERVAL_THRESHOLD_DAYS, READMISSION_WINDOW_DAYS, TRIGGER_FORCE};
pub use generate::{category_name, generate, SynthOutput, CATEGORY_FILE, JOURNEY_FILE, TRUTH_FILE};
pub use truth::{PlantedTruth, TRUTH_VERSION};
