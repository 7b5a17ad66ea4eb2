//! Shared fixtures for the benchmarks.

use mmea_core::encoder::{Architecture, EncoderConfig, EncoderParams};
use mmea_core::mmkg::{generate_synthetic, SyntheticSpec};
use mmea_core::training::AlignmentTask;
use mmea_core::{DenseMatrix, Modality, SeedAlignments};

pub struct Fixture {
    pub task: AlignmentTask,
    pub seeds: SeedAlignments,
    pub encoder: EncoderConfig,
    pub params: EncoderParams<DenseMatrix>,
}

/// Synthetic pair of `n` entities per graph with an initialised encoder of width `dim`.
pub fn fixture(n: usize, dim: usize) -> Fixture {
    let spec = SyntheticSpec {
        n,
        ..SyntheticSpec::default()
    };
    let (s, t, seeds) = generate_synthetic(&spec).expect("valid spec");
    let task = AlignmentTask::new(&s, &t, &Modality::ALL, true).expect("matching graphs");
    let encoder = EncoderConfig {
        dim,
        ..EncoderConfig::default()
    };
    let arch = Architecture::new(encoder.clone(), &task.input).expect("valid encoder");
    let params = EncoderParams::init(&arch, 0);
    Fixture {
        task,
        seeds,
        encoder,
        params,
    }
}
