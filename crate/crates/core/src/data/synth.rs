use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Texture family of a synthetic dataset; classes differ by family parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureFamily {
    /// Oriented sinusoidal gratings; class sets the orientation.
    GaborStripes,
    /// Isotropic Gaussian blobs; class sets the blob position.
    Blobs,
    /// Checkerboards; class sets the square size.
    Checker,
    /// Concentric rings; class sets the radius.
    Ring,
}

impl std::str::FromStr for TextureFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gabor_stripes" | "stripes" => Ok(TextureFamily::GaborStripes),
            "blobs" => Ok(TextureFamily::Blobs),
            "checker" => Ok(TextureFamily::Checker),
            "ring" => Ok(TextureFamily::Ring),
            other => Err(Error::argument(format!("unknown texture family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub num_classes: usize,
    pub samples_per_class: usize,
    /// `(H, W, C)`
    pub image_size: (usize, usize, usize),
    pub family: TextureFamily,
    pub noise_std: f64,
    /// Range the per-image contrast is drawn from.
    #[serde(default = "default_contrast")]
    pub contrast: (f64, f64),
    /// Mean pixel level the texture oscillates around.
    #[serde(default = "default_background")]
    pub background: f64,
    pub seed: u64,
}

fn default_contrast() -> (f64, f64) {
    (0.3, 0.45)
}

fn default_background() -> f64 {
    0.5
}

impl SynthSpec {
    pub fn new(family: TextureFamily, num_classes: usize, samples_per_class: usize, seed: u64) -> Self {
        SynthSpec {
            name: format!("{family:?}").to_lowercase(),
            num_classes,
            samples_per_class,
            image_size: (32, 32, 1),
            family,
            noise_std: 0.05,
            contrast: default_contrast(),
            background: default_background(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.image_size;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::argument(format!("image size {:?} must be positive", self.image_size)));
        }
        if self.num_classes == 0 || self.samples_per_class == 0 {
            return Err(Error::argument("synthetic dataset needs >= 1 class and >= 1 sample per class"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::argument("noise_std must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Intensity in roughly `[-1, 1]` at pixel `(y, x)` for one sample.
struct Pattern {
    family: TextureFamily,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl Pattern {
    fn draw(family: TextureFamily, class: usize, classes: usize, h: usize, w: usize, rng: &mut seed::Rng) -> Self {
        let k = class as f64;
        let n = classes as f64;
        let side = h.min(w) as f64;
        match family {
            TextureFamily::GaborStripes => Pattern {
                family,
                // orientation, phase, spatial frequency (cycles / pixel), unused
                a: PI * k / n + rng.gen_range(-0.08..0.08),
                b: rng.gen_range(0.0..2.0 * PI),
                c: 0.22 + rng.gen_range(-0.02..0.02),
                d: 0.0,
            },
            TextureFamily::Blobs => {
                let angle = 2.0 * PI * k / n;
                Pattern {
                    family,
                    // centre y, centre x, sigma, unused
                    a: h as f64 / 2.0 + 0.25 * side * angle.sin() + rng.gen_range(-1.5..1.5),
                    b: w as f64 / 2.0 + 0.25 * side * angle.cos() + rng.gen_range(-1.5..1.5),
                    c: side / 7.0 * rng.gen_range(0.85..1.15),
                    d: 0.0,
                }
            }
            TextureFamily::Checker => Pattern {
                family,
                // square size, y offset, x offset, unused
                a: (2 + class) as f64,
                b: rng.gen_range(0.0..(2 + class) as f64 * 2.0),
                c: rng.gen_range(0.0..(2 + class) as f64 * 2.0),
                d: 0.0,
            },
            TextureFamily::Ring => Pattern {
                family,
                // centre y, centre x, radius, thickness
                a: h as f64 / 2.0 + rng.gen_range(-1.0..1.0),
                b: w as f64 / 2.0 + rng.gen_range(-1.0..1.0),
                c: side * (0.12 + 0.3 * (k + 0.5) / n) + rng.gen_range(-0.5..0.5),
                d: side / 20.0 + 0.6,
            },
        }
    }

    fn value(&self, y: f64, x: f64) -> f64 {
        match self.family {
            TextureFamily::GaborStripes => {
                let t = x * self.a.cos() + y * self.a.sin();
                (2.0 * PI * self.c * t + self.b).cos()
            }
            TextureFamily::Blobs => {
                let r2 = (y - self.a).powi(2) + (x - self.b).powi(2);
                2.0 * (-r2 / (2.0 * self.c * self.c)).exp() - 1.0
            }
            TextureFamily::Checker => {
                let cy = ((y + self.b) / self.a).floor() as i64;
                let cx = ((x + self.c) / self.a).floor() as i64;
                if (cy + cx).rem_euclid(2) == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            TextureFamily::Ring => {
                let r = ((y - self.a).powi(2) + (x - self.b).powi(2)).sqrt();
                2.0 * (-(r - self.c).powi(2) / (2.0 * self.d * self.d)).exp() - 1.0
            }
        }
    }
}

/// Generates a class-major dataset (`samples_per_class` images of class 0, then class 1, ...).
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let (h, w, c) = spec.image_size;
    let mut rng = seed::rng(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut images = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    let mut labels = Vec::with_capacity(images.capacity());
    for class in 0..spec.num_classes {
        for _ in 0..spec.samples_per_class {
            let pattern = Pattern::draw(spec.family, class, spec.num_classes, h, w, &mut rng);
            let contrast = rng.gen_range(spec.contrast.0..=spec.contrast.1);
            let gains: Vec<f64> = (0..c).map(|ch| 1.0 - 0.15 * ch as f64).collect();
            let mut data = Vec::with_capacity(h * w * c);
            for y in 0..h {
                for x in 0..w {
                    let v = pattern.value(y as f64, x as f64);
                    for gain in &gains {
                        let mut px = spec.background + contrast * gain * v;
                        if spec.noise_std > 0.0 {
                            px += noise.sample(&mut rng);
                        }
                        data.push(px.clamp(0.0, 1.0) as f32);
                    }
                }
            }
            images.push(Tensor::new(vec![h, w, c], data)?);
            labels.push(class);
        }
    }
    Dataset::new(spec.name.clone(), images, labels, spec.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_labels() {
        let mut spec = SynthSpec::new(TextureFamily::Blobs, 2, 5, 1);
        spec.image_size = (8, 8, 1);
        let ds = synth_generate(&spec).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn deterministic_and_in_range() {
        for family in [
            TextureFamily::GaborStripes,
            TextureFamily::Blobs,
            TextureFamily::Checker,
            TextureFamily::Ring,
        ] {
            let mut spec = SynthSpec::new(family, 3, 4, 11);
            spec.image_size = (12, 10, 2);
            spec.noise_std = 0.3;
            let a = synth_generate(&spec).unwrap();
            assert_eq!(a, synth_generate(&spec).unwrap());
            assert!(a.images.iter().all(|im| im.data().iter().all(|v| (0.0..=1.0).contains(v))));
            assert_eq!(a.image_shape(), &[12, 10, 2]);
        }
    }

    #[test]
    fn rejects_zero_sizes() {
        let mut spec = SynthSpec::new(TextureFamily::Ring, 2, 1, 0);
        spec.image_size = (0, 4, 1);
        assert!(synth_generate(&spec).is_err());
        let spec = SynthSpec::new(TextureFamily::Ring, 2, 0, 0);
        assert!(synth_generate(&spec).is_err());
    }
}
