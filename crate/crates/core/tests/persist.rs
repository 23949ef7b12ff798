use rand::Rng;
use spectraprint::meta::{build_encoder, MetaClassifier};
use spectraprint::nn::{LayerSpec, Model};
use spectraprint::persist::{load_meta, load_model, load_spectra, save_meta, save_meta_file, load_meta_file, save_model, save_spectra};
use spectraprint::spectrum::SpectrumImage;
use spectraprint::zoo::{build_arch, ArchName};
use spectraprint::{seed, Error, Tensor};

/// Writes a model file from the documented layout without touching the library writer.
fn foreign_model_bytes(w: &[f32; 8], b: &[f32; 2]) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(b"DTNN");
    u32le(&mut out, 1);
    u32le(&mut out, 3);
    for d in [2, 2, 1] {
        u32le(&mut out, d);
    }
    u32le(&mut out, 3);
    out.push(5); // flatten
    out.push(0);
    out.push(0); // linear 4 -> 2, with bias
    u32le(&mut out, 4);
    u32le(&mut out, 2);
    out.push(1);
    out.push(3); // leaky relu
    out.extend_from_slice(&0.25f32.to_le_bytes());
    out.push(0);
    for v in w.iter().chain(b) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    u32le(&mut out, 2);
    out.extend_from_slice(b"{}");
    let crc = crc32fast::hash(&out);
    u32le(&mut out, crc);
    out
}

#[test]
fn foreign_writer_file_loads_and_predicts() {
    let w = [0.5, -1.0, 0.25, 2.0, -0.5, 1.5, 1.0, -2.0];
    let b = [0.1, -0.2];
    let bytes = foreign_model_bytes(&w, &b);
    let model = load_model(&bytes).unwrap();
    assert_eq!(save_model(&model).unwrap(), bytes);
    let mut rng = seed::rng(1);
    for _ in 0..20 {
        let x: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let logits: Vec<f32> = (0..2)
            .map(|o| {
                let z = b[o] + (0..4).map(|i| w[o * 4 + i] * x[i]).sum::<f32>();
                if z > 0.0 { z } else { 0.25 * z }
            })
            .collect();
        let out = model.forward(&Tensor::new(vec![2, 2, 1], x.clone()).unwrap()).unwrap();
        for (a, e) in out.data().iter().zip(&logits) {
            assert!((a - e).abs() < 1e-6);
        }
        assert_eq!(model.predict(&Tensor::new(vec![2, 2, 1], x).unwrap()).unwrap(), if logits[1] > logits[0] { 1 } else { 0 });
    }
}

fn random_model(rng: &mut seed::Rng) -> Model {
    let h = rng.gen_range(4..12);
    match rng.gen_range(0..4) {
        0 => build_arch(ArchName::ALL[rng.gen_range(0..3)], &[8, 8, 1], rng.gen_range(2..6), rng.gen()).unwrap(),
        1 => Model::new(
            vec![LayerSpec::Flatten, LayerSpec::linear(h * h, 5), LayerSpec::LeakyRelu { slope: rng.gen_range(0.01..0.9) }, LayerSpec::linear(5, 3)],
            vec![h, h, 1],
            rng.gen(),
        )
        .unwrap(),
        2 => build_encoder(h, h, rng.gen_range(1..8), rng.gen()).unwrap(),
        _ => {
            let mut m = Model::new(vec![LayerSpec::linear(3, 2)], vec![3], rng.gen()).unwrap();
            m.metadata.insert("note".into(), format!("run {}", rng.gen::<u32>()));
            m
        }
    }
}

fn flip_one_byte_everywhere(bytes: &[u8], check: impl Fn(&[u8]) -> bool, rng: &mut seed::Rng) {
    for pos in 0..bytes.len() {
        let mut bad = bytes.to_vec();
        bad[pos] ^= rng.gen_range(1..=255u8);
        assert!(!check(&bad), "flip at byte {pos} went unnoticed");
    }
}

#[test]
fn models_round_trip_bit_identically() {
    let mut rng = seed::rng(2);
    for i in 0..100 {
        let m = random_model(&mut rng);
        let bytes = save_model(&m).unwrap();
        let back = load_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert!(back.weights().zip(m.weights()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(save_model(&back).unwrap(), bytes);
        if i % 10 == 0 && bytes.len() < 4000 {
            flip_one_byte_everywhere(&bytes, |b| load_model(b).is_ok(), &mut rng);
        } else {
            let mut bad = bytes.clone();
            let pos = rng.gen_range(0..bad.len());
            bad[pos] ^= 0x40;
            assert!(matches!(load_model(&bad), Err(Error::Format(_))));
        }
    }
}

fn random_spectra(rng: &mut seed::Rng) -> Vec<SpectrumImage> {
    let (h, w) = (rng.gen_range(1..10), rng.gen_range(1..10));
    (0..rng.gen_range(0..20)).map(|_| SpectrumImage::new(h, w, (0..h * w).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap()).collect()
}

#[test]
fn spectra_round_trip_bit_identically() {
    let mut rng = seed::rng(3);
    for i in 0..100 {
        let s = random_spectra(&mut rng);
        let bytes = save_spectra(&s).unwrap();
        let back = load_spectra(&bytes).unwrap();
        assert_eq!(back, s);
        assert!(back.iter().all(|x| x.values().iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(save_spectra(&back).unwrap(), bytes);
        if i % 10 == 0 {
            flip_one_byte_everywhere(&bytes, |b| load_spectra(b).is_ok(), &mut rng);
        }
    }
}

#[test]
fn full_sized_archive_round_trips() {
    let mut rng = seed::rng(4);
    let s: Vec<SpectrumImage> = (0..4800).map(|_| SpectrumImage::new(16, 16, (0..256).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()).collect();
    assert_eq!(load_spectra(&save_spectra(&s).unwrap()).unwrap(), s);
    assert_eq!(load_spectra(&save_spectra(&[]).unwrap()).unwrap(), vec![]);
}

fn random_meta(rng: &mut seed::Rng) -> MetaClassifier {
    let d = rng.gen_range(1..10);
    let encoder = build_encoder(8, 8, d, rng.gen()).unwrap();
    let centre: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let tau = rng.gen_bool(0.7).then(|| rng.gen_range(0.0..3.0));
    MetaClassifier::new(encoder, centre, tau).unwrap()
}

#[test]
fn meta_files_round_trip_bit_identically() {
    let mut rng = seed::rng(5);
    let probes: Vec<SpectrumImage> = (0..10).map(|_| SpectrumImage::new(8, 8, (0..64).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()).collect();
    for i in 0..100 {
        let m = random_meta(&mut rng);
        let bytes = save_meta(&m).unwrap();
        let back = load_meta(&bytes).unwrap();
        assert_eq!(back.threshold().map(f64::to_bits), m.threshold().map(f64::to_bits));
        assert_eq!(back.center(), m.center());
        assert_eq!(back.scores(&probes).unwrap(), m.scores(&probes).unwrap());
        assert_eq!(save_meta(&back).unwrap(), bytes);
        if i % 25 == 0 {
            flip_one_byte_everywhere(&bytes, |b| load_meta(b).is_ok(), &mut rng);
        }
    }
}

#[test]
fn tampered_centre_fails_the_crc() {
    let mut rng = seed::rng(6);
    let m = MetaClassifier::new(build_encoder(8, 8, 4, 1).unwrap(), vec![0.5; 4], Some(1.0)).unwrap();
    let mut bytes = save_meta(&m).unwrap();
    // centre sits right before the flag byte, the f64 threshold and the CRC
    let centre_start = bytes.len() - 4 - 8 - 1 - 16;
    bytes[centre_start + rng.gen_range(0..16)] ^= 0x01;
    let err = load_meta(&bytes).unwrap_err();
    assert!(err.to_string().contains("CRC"), "{err}");
}

#[test]
fn uncalibrated_meta_keeps_its_flag_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let m = MetaClassifier::new(build_encoder(8, 8, 4, 1).unwrap(), vec![0.5; 4], None).unwrap();
    let path = dir.path().join("m.dtmc");
    save_meta_file(&path, &m).unwrap();
    assert_eq!(load_meta_file(&path).unwrap().threshold(), None);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1, "atomic write leaves no temp files");
}
