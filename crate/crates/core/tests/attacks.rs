mod common;

use spectraprint::attacks::{attack_daa, attack_maa, attack_mfa, attack_mpa, attack_mra, attack_tla, prune_global, AttackConfig, DaaMode, Expectation};
use spectraprint::data::{synth_generate, SynthSpec, TextureFamily};
use spectraprint::nn::{self, Model, TrainConfig};
use spectraprint::persist;
use spectraprint::zoo::{build_arch, ArchName};

fn cfg(epochs: usize, lr: f32, seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: lr, epochs, batch_size: 16, seed, weight_decay: 0.0 }
}

fn victim() -> Model {
    let ds = common::desk_data(60, 41);
    nn::train(&build_arch(ArchName::CnnS, ds.image_shape(), 4, 2).unwrap(), &ds, &cfg(3, 0.05, 1)).unwrap().0
}

fn feature_bits(m: &Model, skip_last: bool) -> Vec<u32> {
    let head = m.output_layer_index().unwrap();
    m.layers()
        .iter()
        .enumerate()
        .filter(|(i, _)| !(skip_last && *i == head))
        .flat_map(|(_, l)| l.weight.iter().chain(&l.bias).flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>())
        .collect()
}

#[test]
fn tla_with_zero_epochs_keeps_feature_layers() {
    let v = victim();
    let target = common::benign_data(10, 42);
    let suspect = attack_tla(&v, &target, &cfg(0, 0.1, 3), false).unwrap();
    assert_eq!(feature_bits(&suspect, true), feature_bits(&v, true));
    assert_eq!(suspect.num_classes(), target.num_classes);
}

#[test]
fn frozen_tla_changes_only_the_head() {
    let v = victim();
    let target = synth_generate(&SynthSpec { num_classes: 3, ..common::desk_spec(10, 43) }).unwrap();
    let suspect = attack_tla(&v, &target, &cfg(2, 0.1, 3), true).unwrap();
    assert_eq!(feature_bits(&suspect, true), feature_bits(&v, true));
    assert_eq!(suspect.num_classes(), 3);
}

#[test]
fn pretrained_daa_at_zero_epochs_keeps_original_logits() {
    let v = victim();
    let base = common::desk_data(10, 44);
    let extra = synth_generate(&SynthSpec { image_size: (16, 16, 1), ..SynthSpec::new(TextureFamily::Ring, 2, 10, 45) }).unwrap();
    let suspect = attack_daa(&base, &extra, DaaMode::Pretrained, ArchName::CnnS, Some(&v), &cfg(0, 0.05, 4)).unwrap();
    assert_eq!(suspect.num_classes(), 6);
    for image in &base.images[..5] {
        let a = v.forward(image).unwrap();
        let b = suspect.forward(image).unwrap();
        assert_eq!(&b.data()[..4], a.data());
    }
    let scratch = attack_daa(&base, &extra, DaaMode::Scratch, ArchName::Mlp2, None, &cfg(1, 0.05, 4)).unwrap();
    assert_eq!(scratch.num_classes(), 6);
}

#[test]
fn mfa_with_zero_learning_rate_is_a_no_op() {
    let v = victim();
    let subset = common::desk_data(5, 46);
    let suspect = attack_mfa(&v, &subset, &cfg(2, 0.0, 5)).unwrap();
    assert!(v.weights().zip(suspect.weights()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn mpa_prunes_exact_count_and_keeps_the_mask() {
    let v = victim();
    let k = (0.2 * v.weight_count() as f64 - 1e-9).ceil() as usize;
    let pruned = prune_global(&v, 0.2).unwrap();
    assert_eq!(pruned.weights().filter(|&w| w == 0.0).count(), k);
    let suspect = attack_mpa(&v, 0.2, &common::desk_data(10, 47), &cfg(2, 0.01, 6)).unwrap();
    for (p, s) in pruned.weights().zip(suspect.weights()) {
        if p == 0.0 {
            assert_eq!(s, 0.0);
        }
    }
}

#[test]
fn retrained_models_differ_by_seed_and_record_config() {
    let ds = common::desk_data(20, 48);
    let a = attack_maa(&ds, ArchName::Mlp2, &cfg(1, 0.05, 7)).unwrap();
    let b = attack_maa(&ds, ArchName::Mlp2, &cfg(1, 0.05, 8)).unwrap();
    assert_ne!(persist::save_model(&a).unwrap(), persist::save_model(&b).unwrap());
    let recorded: AttackConfig = serde_json::from_str(&a.metadata["attack"]).unwrap();
    assert_eq!(recorded, AttackConfig::Maa { arch: ArchName::Mlp2, train: cfg(1, 0.05, 7) });
    let again = attack_maa(&ds, ArchName::Mlp2, &cfg(1, 0.05, 7)).unwrap();
    assert_eq!(persist::save_model(&a).unwrap(), persist::save_model(&again).unwrap());
}

#[test]
fn small_retrain_is_labelled_undetectable() {
    let ds = common::desk_data(20, 49);
    let m = attack_mra(&ds, 0.1, ArchName::Mlp2, &cfg(1, 0.05, 9)).unwrap();
    let recorded: AttackConfig = serde_json::from_str(&m.metadata["attack"]).unwrap();
    assert_eq!(recorded.expectation(), Expectation::ExpectedUndetectable);
    let full = AttackConfig::Mra { fraction: 0.7, arch: ArchName::Mlp2, train: cfg(1, 0.05, 9) };
    assert_eq!(full.expectation(), Expectation::Stolen);
    assert!(attack_mra(&ds, 0.0, ArchName::Mlp2, &cfg(1, 0.05, 9)).is_err());
}
