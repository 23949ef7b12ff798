#![allow(dead_code)]

use spectraprint::nn::{LayerSpec, Model};

/// Forward pass recomputed in f64 straight from the layer definitions.
pub fn reference_forward(model: &Model, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let mut shape = model.input_shape().to_vec();
    for layer in model.layers() {
        let out_shape = layer.spec.output_shape(&shape).unwrap();
        let weight: Vec<f64> = layer.weight.as_ref().map(|w| w.data().iter().map(|&v| v as f64).collect()).unwrap_or_default();
        let bias: Vec<f64> = layer.bias.as_ref().map(|b| b.data().iter().map(|&v| v as f64).collect()).unwrap_or_default();
        x = match layer.spec {
            LayerSpec::Linear { in_features, out_features, .. } => (0..out_features)
                .map(|o| {
                    let s: f64 = (0..in_features).map(|i| weight[o * in_features + i] * x[i]).sum();
                    s + bias.get(o).copied().unwrap_or(0.0)
                })
                .collect(),
            LayerSpec::Conv2d { in_channels: cin, out_channels: cout, kernel: k, stride, padding, .. } => {
                let (h, w) = (shape[0] as isize, shape[1] as isize);
                let (oh, ow) = (out_shape[0], out_shape[1]);
                let mut out = vec![0.0; oh * ow * cout];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for co in 0..cout {
                            let mut s = bias.get(co).copied().unwrap_or(0.0);
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        s += weight[((co * k + ky) * k + kx) * cin + ci] * x[((iy * w + ix) as usize) * cin + ci];
                                    }
                                }
                            }
                            out[(oy * ow + ox) * cout + co] = s;
                        }
                    }
                }
                out
            }
            LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::LeakyRelu { slope } => x.iter().map(|&v| if v > 0.0 { v } else { slope as f64 * v }).collect(),
            LayerSpec::MaxPool { size } => {
                let (w, c) = (shape[1], shape[2]);
                let (oh, ow) = (out_shape[0], out_shape[1]);
                let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            for dy in 0..size {
                                for dx in 0..size {
                                    let v = x[((oy * size + dy) * w + ox * size + dx) * c + ch];
                                    let o = &mut out[(oy * ow + ox) * c + ch];
                                    *o = o.max(v);
                                }
                            }
                        }
                    }
                }
                out
            }
            LayerSpec::Flatten => x,
        };
        shape = out_shape;
    }
    x
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Central differences of the f64 reference loss.
pub fn finite_difference(model: &Model, input: &[f64], label: usize, h: f64) -> Vec<f64> {
    (0..input.len())
        .map(|i| {
            let mut up = input.to_vec();
            let mut down = input.to_vec();
            up[i] += h;
            down[i] -= h;
            (cross_entropy(&reference_forward(model, &up), label) - cross_entropy(&reference_forward(model, &down), label)) / (2.0 * h)
        })
        .collect()
}

/// Textbook O(N^2) 2-D DFT, returning (re, im) row-major.
pub fn naive_dft(h: usize, w: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let phase = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                    sr += x[y * w + xx] * phase.cos();
                    si += x[y * w + xx] * phase.sin();
                }
            }
            re[u * w + v] = sr;
            im[u * w + v] = si;
        }
    }
    (re, im)
}

use spectraprint::data::{synth_generate, Dataset, SynthSpec};
use spectraprint::pipeline::PipelineConfig;

pub fn desk_spec(per_class: usize, seed: u64) -> SynthSpec {
    SynthSpec { samples_per_class: per_class, seed, ..PipelineConfig::desk().protected }
}

pub fn desk_data(per_class: usize, seed: u64) -> Dataset {
    synth_generate(&desk_spec(per_class, seed)).unwrap()
}

pub fn benign_data(per_class: usize, seed: u64) -> Dataset {
    synth_generate(&SynthSpec { samples_per_class: per_class, seed, ..PipelineConfig::desk().benign }).unwrap()
}
