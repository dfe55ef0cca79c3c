#![allow(dead_code)]

use std::sync::Arc;

use federl_core::data::synth::{generate, generate_unlabeled, SynthKind, SynthSpec};
use federl_core::data::{build_corruption_suite, partition_clients, CorruptedTestSuite, CorruptionFilter, CorruptionSpec, LabeledDataset};
use federl_core::fed::{FedConfig, Federation, Method};
use federl_core::image::Shape;
use federl_core::model::Architecture;

pub const SIZE: usize = 8;

pub fn shapes(count: usize, seed: u64) -> LabeledDataset {
    generate(&SynthSpec {
        kind: SynthKind::Shapes,
        count,
        size: SIZE,
        channels: 1,
        seed,
    })
    .unwrap()
}

pub fn suite(test: &LabeledDataset) -> CorruptedTestSuite {
    let specs = [
        CorruptionSpec::new(CorruptionFilter::GaussianNoise, 3).unwrap(),
        CorruptionSpec::new(CorruptionFilter::Contrast, 3).unwrap(),
    ];
    build_corruption_suite(test, &specs, 0).unwrap()
}

pub fn mlp(classes: usize) -> Arc<Architecture> {
    Arc::new(Architecture::mlp(Shape::new(SIZE, SIZE, 1), &[8], classes).unwrap())
}

/// Small federation over procedural shapes with an MLP.
pub fn federation(method: Method, clients: usize, rounds: usize) -> Federation {
    let train = shapes(120, 1);
    let cfg = FedConfig {
        clients,
        global_rounds: rounds,
        batch_size: 16,
        method,
        seed: 7,
        ..FedConfig::default()
    };
    let mut fed = Federation::new(mlp(train.num_classes()), partition_clients(&train, clients, 3).unwrap(), cfg);
    fed.proxy = Some(
        generate_unlabeled(&SynthSpec {
            kind: SynthKind::OodShapes,
            count: 40,
            size: SIZE,
            channels: 1,
            seed: 5,
        })
        .unwrap(),
    );
    fed.dart.max_epochs = 3;
    fed.dart.lr = 0.01;
    fed.dart.batch_size = 16;
    fed
}
