mod common;

use spectraprint::meta::{build_meta, SvddConfig};
use spectraprint::nn::TrainConfig;
use spectraprint::pipeline::PipelineConfig;
use spectraprint::spectrum::SpectrumOptions;
use spectraprint::zoo::{build_arch, train_victims, ArchName};

#[test]
fn victims_reach_desk_accuracy() {
    let ds = common::desk_data(250, 21);
    let cfg = TrainConfig { epochs: 30, ..PipelineConfig::desk().victim_train };
    let victims = train_victims(&ds, &ArchName::ALL, &cfg).unwrap();
    assert_eq!(victims.len(), 3);
    for v in &victims {
        let acc: f64 = v.metadata["train_accuracy"].parse().unwrap();
        assert!(acc >= 0.8, "{}: {acc}", v.metadata["arch"]);
        assert_eq!(v.metadata["dataset"], ds.name);
    }
}

#[test]
fn architectures_have_distinct_sizes() {
    let models: Vec<_> = ArchName::ALL.iter().map(|&a| build_arch(a, &[16, 16, 1], 4, 0).unwrap()).collect();
    for i in 0..3 {
        for j in i + 1..3 {
            assert_ne!(models[i].layers().len(), models[j].layers().len());
            assert_ne!(models[i].param_count(), models[j].param_count());
        }
    }
}

#[test]
fn single_victim_still_builds_a_meta_classifier() {
    let ds = common::desk_data(100, 22);
    let cfg = TrainConfig { epochs: 15, ..PipelineConfig::desk().victim_train };
    let victims = train_victims(&ds, &[ArchName::CnnS], &cfg).unwrap();
    let svdd = SvddConfig { epochs: 5, ..PipelineConfig::desk().svdd };
    let build = build_meta(&ds, &victims, (150, 100, 50), &SpectrumOptions::default(), &svdd).unwrap();
    assert!(build.meta.threshold().is_some());
    assert_eq!(build.test.len(), 50);
}
