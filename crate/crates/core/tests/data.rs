mod common;

use spectraprint::data::{encode_idx, load_idx, parse_idx, subsample, synth_generate, write_idx, Dataset, SynthSpec, TextureFamily};
use spectraprint::{Error, Tensor};

/// Plain logistic regression on raw pixels, trained by full-batch gradient descent.
fn linear_probe_accuracy(a: &Dataset, b: &Dataset) -> f64 {
    let xs: Vec<Vec<f64>> = a.images.iter().chain(&b.images).map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();
    let ys: Vec<f64> = std::iter::repeat_n(0.0, a.len()).chain(std::iter::repeat_n(1.0, b.len())).collect();
    let d = xs[0].len();
    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64).collect();
    let mut w = vec![0.0; d];
    let mut bias = 0.0;
    for _ in 0..300 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let z: f64 = bias + x.iter().zip(&mean).zip(&w).map(|((xi, m), wi)| (xi - m) * wi).sum::<f64>();
            let r = 1.0 / (1.0 + (-z).exp()) - y;
            for j in 0..d {
                gw[j] += r * (x[j] - mean[j]);
            }
            gb += r;
        }
        for j in 0..d {
            w[j] -= 5.0 * gw[j] / xs.len() as f64;
        }
        bias -= 5.0 * gb / xs.len() as f64;
    }
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(x, y)| {
            let z: f64 = bias + x.iter().zip(&mean).zip(&w).map(|((xi, m), wi)| (xi - m) * wi).sum::<f64>();
            (z > 0.0) == (**y > 0.5)
        })
        .count();
    correct as f64 / xs.len() as f64
}

#[test]
fn texture_families_are_linearly_separable() {
    let stripes = common::desk_data(50, 1);
    let blobs = common::benign_data(50, 2);
    let acc = linear_probe_accuracy(&stripes, &blobs);
    assert!(acc >= 0.9, "probe accuracy {acc}");
}

#[test]
fn generated_images_stay_in_unit_range() {
    for family in [TextureFamily::GaborStripes, TextureFamily::Blobs, TextureFamily::Checker, TextureFamily::Ring] {
        let spec = SynthSpec { image_size: (12, 10, 3), noise_std: 0.3, ..SynthSpec::new(family, 3, 5, 9) };
        let ds = synth_generate(&spec).unwrap();
        assert_eq!(ds.image_shape(), &[12, 10, 3]);
        assert!(ds.images.iter().all(|t| t.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
}

fn be(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

#[test]
fn idx_bytes_match_an_independent_reader() {
    let ds = common::desk_data(5, 3);
    let (img, lab) = encode_idx(&ds).unwrap();
    assert_eq!(be(&img, 0), 0x0803);
    assert_eq!(be(&lab, 0), 0x0801);
    let n = be(&img, 4) as usize;
    let (rows, cols) = (be(&img, 8) as usize, be(&img, 12) as usize);
    assert_eq!((n, rows, cols), (ds.len(), 16, 16));
    assert_eq!(be(&lab, 4) as usize, n);
    assert_eq!(img.len(), 16 + n * rows * cols);
    for (k, image) in ds.images.iter().enumerate() {
        assert_eq!(lab[8 + k] as usize, ds.labels[k]);
        for (p, &v) in image.data().iter().enumerate() {
            assert_eq!(img[16 + k * rows * cols + p], (v * 255.0).round() as u8);
        }
    }
}

#[test]
fn idx_written_by_hand_parses() {
    let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
    img.extend([0u8, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 0]);
    let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 1];
    let ds = parse_idx(&img, &lab, "hand").unwrap();
    assert_eq!(ds.labels, vec![7, 1]);
    assert_eq!(ds.num_classes, 8);
    assert_eq!(ds.image_shape(), &[2, 3, 1]);
    assert!((ds.images[0].data()[1] - 0.2).abs() < 1e-6);
    assert_eq!(ds.images[1].data()[0], 1.0);
}

#[test]
fn idx_file_round_trip_preserves_quantized_content() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::desk_data(4, 5);
    write_idx(&ds, dir.path().join("i.idx"), dir.path().join("l.idx")).unwrap();
    let back = load_idx(dir.path().join("i.idx"), dir.path().join("l.idx")).unwrap();
    assert_eq!(back.labels, ds.labels);
    assert_eq!(encode_idx(&back).unwrap(), encode_idx(&ds).unwrap());
    for (a, b) in back.images.iter().zip(&ds.images) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
    }
}

#[test]
fn idx_truncation_is_a_format_error() {
    let ds = common::desk_data(2, 5);
    let (img, lab) = encode_idx(&ds).unwrap();
    assert!(matches!(parse_idx(&img[..img.len() - 1], &lab, "t"), Err(Error::Format(_))));
    assert!(matches!(parse_idx(&img, &lab[..lab.len() - 1], "t"), Err(Error::Format(_))));
}

#[test]
fn subsample_is_class_balanced_without_replacement() {
    let ds = common::desk_data(40, 6);
    for fraction in [0.1, 0.25, 0.5] {
        let sub = subsample(&ds, fraction, 1).unwrap();
        let expect = (40.0 * fraction + 1e-9).floor() as usize;
        assert!(sub.class_counts().iter().all(|&c| c == expect));
        let mut seen: Vec<&Tensor> = sub.images.iter().collect();
        seen.dedup_by(|a, b| a.data() == b.data());
        assert_eq!(seen.len(), sub.len());
    }
}
