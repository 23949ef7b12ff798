use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a feed-forward model.
///
/// Spatial layers work on `[H, W, C]` activations; `Linear` works on a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Relu,
    LeakyRelu {
        slope: f32,
    },
    /// Non-overlapping max pooling (`stride == size`).
    MaxPool {
        size: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Linear {
            in_features,
            out_features,
            bias: true,
        }
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            bias: true,
        }
    }

    pub fn has_bias(&self) -> bool {
        match self {
            LayerSpec::Linear { bias, .. } | LayerSpec::Conv2d { bias, .. } => *bias,
            _ => false,
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, LayerSpec::Linear { .. } | LayerSpec::Conv2d { .. })
    }

    /// Shape of the weight tensor, if the layer has one.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            } => Some(vec![out_features, in_features]),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, kernel, kernel, in_channels]),
            _ => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Linear {
                out_features,
                bias: true,
                ..
            } => Some(out_features),
            LayerSpec::Conv2d {
                out_channels,
                bias: true,
                ..
            } => Some(out_channels),
            _ => None,
        }
    }

    /// `(fan_in, fan_out)` used by the uniform initializer.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            } => Some((in_features, out_features)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels * kernel * kernel, out_channels * kernel * kernel)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            } => in_features > 0 && out_features > 0,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0,
            LayerSpec::LeakyRelu { slope } => slope > 0.0 && slope < 1.0,
            LayerSpec::MaxPool { size } => size > 0,
            LayerSpec::Relu | LayerSpec::Flatten => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("invalid layer dimensions: {self:?}")))
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        match *self {
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            } => match input {
                [n] if *n == in_features => Ok(vec![out_features]),
                _ => Err(Error::shape(format!(
                    "linear layer expects [{in_features}], got {input:?}"
                ))),
            },
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => match input {
                [h, w, c] if *c == in_channels => {
                    let pad = |d: usize| padding.checked_mul(2).and_then(|p| d.checked_add(p));
                    let (Some(h), Some(w)) = (pad(*h), pad(*w)) else {
                        return Err(Error::shape(format!("padding {padding} overflows")));
                    };
                    if h < kernel || w < kernel {
                        return Err(Error::shape(format!(
                            "conv kernel {kernel} larger than padded input {h}x{w}"
                        )));
                    }
                    Ok(vec![
                        (h - kernel) / stride + 1,
                        (w - kernel) / stride + 1,
                        out_channels,
                    ])
                }
                _ => Err(Error::shape(format!(
                    "conv layer expects [H, W, {in_channels}], got {input:?}"
                ))),
            },
            LayerSpec::MaxPool { size } => match input {
                [h, w, c] if *h >= size && *w >= size => Ok(vec![h / size, w / size, *c]),
                _ => Err(Error::shape(format!(
                    "max-pool of size {size} cannot take {input:?}"
                ))),
            },
            LayerSpec::Flatten => input
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .map(|n| vec![n])
                .ok_or_else(|| Error::shape(format!("flattening {input:?} overflows"))),
            LayerSpec::Relu | LayerSpec::LeakyRelu { .. } => Ok(input.to_vec()),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub oh: usize,
    pub ow: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Input pixel index for output position and kernel offset, if inside the image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad)?;
        (iy < self.h && ix < self.w).then_some(iy * self.w + ix)
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, input: &[f32], weight: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let mut out = vec![0.0f32; g.oh * g.ow * g.cout];
    let kk = g.k * g.k * g.cin;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o = &mut out[(oy * g.ow + ox) * g.cout..][..g.cout];
            if let Some(b) = bias {
                o.copy_from_slice(b);
            }
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let Some(src) = g.source(oy, ox, ky, kx) else {
                        continue;
                    };
                    let px = &input[src * g.cin..][..g.cin];
                    let woff = (ky * g.k + kx) * g.cin;
                    for (oc, ov) in o.iter_mut().enumerate() {
                        *ov += dot(px, &weight[oc * kk + woff..][..g.cin]);
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients (when requested) and returns the input gradient.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    input: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    mut grad_w: Option<&mut [f32]>,
    mut grad_b: Option<&mut [f32]>,
) -> Vec<f32> {
    let mut grad_in = vec![0.0f32; g.h * g.w * g.cin];
    let kk = g.k * g.k * g.cin;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let go = &grad_out[(oy * g.ow + ox) * g.cout..][..g.cout];
            if let Some(gb) = grad_b.as_deref_mut() {
                axpy(1.0, go, gb);
            }
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let Some(src) = g.source(oy, ox, ky, kx) else {
                        continue;
                    };
                    let woff = (ky * g.k + kx) * g.cin;
                    let px = &input[src * g.cin..][..g.cin];
                    let gi = &mut grad_in[src * g.cin..][..g.cin];
                    for (oc, &gv) in go.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let wrow = &weight[oc * kk + woff..][..g.cin];
                        axpy(gv, wrow, gi);
                        if let Some(gw) = grad_w.as_deref_mut() {
                            axpy(gv, px, &mut gw[oc * kk + woff..][..g.cin]);
                        }
                    }
                }
            }
        }
    }
    grad_in
}
