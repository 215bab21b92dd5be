//! Shared fixtures for the benchmarks.

use bitenet::data::{make_readmission_samples, parse_journeys, preprocess, LabeledSample, PreprocessConfig};
use bitenet::synth::{generate, SynthConfig};

/// Readmission samples and the vocabulary id space of a synthetic dataset.
pub fn readmission_samples(patients: usize) -> (Vec<LabeledSample>, usize) {
    let out = generate(&SynthConfig {
        num_patients: patients,
        ..SynthConfig::default()
    })
    .expect("default synthetic configuration is valid");
    let raw = parse_journeys(&out.journeys).expect("generated journeys parse");
    let (journeys, vocab) = preprocess(&raw, PreprocessConfig::default()).expect("generated journeys survive");
    (make_readmission_samples(&journeys, 30), vocab.id_space())
}
