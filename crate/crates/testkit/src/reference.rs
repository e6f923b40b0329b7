//! Slow f64 re-implementations of the network forward pass, written with
//! naive bounds-checked loops. These never share code with the production
//! kernels; they exist to cross-check them.

use maskae_core::model::{Activation, ArchConfig, LayerSpec, ModelParams};
use maskae_core::Tensor;

/// Single-image f64 feature map, (C, H, W) channel-planar.
#[derive(Clone, Debug)]
pub struct RefMap {
    pub data: Vec<f64>,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl RefMap {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        RefMap {
            data: vec![0.0; c * h * w],
            c,
            h,
            w,
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        assert_eq!(t.shape.n, 1, "reference path is single-image");
        RefMap {
            data: t.data.iter().map(|&v| v as f64).collect(),
            c: t.shape.c,
            h: t.shape.h,
            w: t.shape.w,
        }
    }

    fn at(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[(c * self.h + h) * self.w + w]
    }
}

pub fn conv2d(x: &RefMap, weight: &[f64], co: usize, k: usize, bias: &[f64], pad: usize) -> RefMap {
    let ho = x.h + 2 * pad - k + 1;
    let wo = x.w + 2 * pad - k + 1;
    let mut out = RefMap::new(co, ho, wo);
    for oc in 0..co {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = bias[oc];
                for ic in 0..x.c {
                    for dh in 0..k {
                        for dw in 0..k {
                            let ih = oh as isize + dh as isize - pad as isize;
                            let iw = ow as isize + dw as isize - pad as isize;
                            if ih >= 0 && (ih as usize) < x.h && iw >= 0 && (iw as usize) < x.w {
                                let wv = weight[((oc * x.c + ic) * k + dh) * k + dw];
                                acc += wv * x.at(ic, ih as usize, iw as usize);
                            }
                        }
                    }
                }
                out.data[(oc * ho + oh) * wo + ow] = acc;
            }
        }
    }
    out
}

pub fn relu(x: &RefMap) -> RefMap {
    let mut out = x.clone();
    for v in &mut out.data {
        *v = v.max(0.0);
    }
    out
}

pub fn sigmoid(x: &RefMap) -> RefMap {
    let mut out = x.clone();
    for v in &mut out.data {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    out
}

pub fn maxpool2x2(x: &RefMap) -> RefMap {
    let mut out = RefMap::new(x.c, x.h / 2, x.w / 2);
    for c in 0..x.c {
        for oh in 0..out.h {
            for ow in 0..out.w {
                let mut best = f64::NEG_INFINITY;
                for dh in 0..2 {
                    for dw in 0..2 {
                        best = best.max(x.at(c, oh * 2 + dh, ow * 2 + dw));
                    }
                }
                out.data[(c * out.h + oh) * out.w + ow] = best;
            }
        }
    }
    out
}

pub fn upsample2x(x: &RefMap) -> RefMap {
    let mut out = RefMap::new(x.c, x.h * 2, x.w * 2);
    for c in 0..x.c {
        for h in 0..out.h {
            for w in 0..out.w {
                out.data[(c * out.h + h) * out.w + w] = x.at(c, h / 2, w / 2);
            }
        }
    }
    out
}

pub fn mse(a: &RefMap, b: &RefMap) -> f64 {
    assert_eq!(a.data.len(), b.data.len());
    let acc: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    acc / a.data.len() as f64
}

fn run_stack(x: RefMap, layers: &[LayerSpec], params: &mut std::slice::Iter<'_, Vec<f64>>) -> RefMap {
    let mut x = x;
    for layer in layers {
        match layer {
            LayerSpec::Conv {
                out_ch,
                kernel,
                padding,
                act,
                ..
            } => {
                let weight = params.next().expect("weight present");
                let bias = params.next().expect("bias present");
                x = conv2d(&x, weight, *out_ch, *kernel, bias, *padding);
                x = match act {
                    Activation::Relu => relu(&x),
                    Activation::Sigmoid => sigmoid(&x),
                };
            }
            LayerSpec::MaxPool2x2 => x = maxpool2x2(&x),
            LayerSpec::Upsample2x => x = upsample2x(&x),
        }
    }
    x
}

/// Full autoencoder MSE loss against `target`, recomputed in f64 from a
/// flat parameter list in checkpoint order.
pub fn model_loss(arch: &ArchConfig, params: &[Vec<f64>], input: &RefMap, target: &RefMap) -> f64 {
    let mut iter = params.iter();
    let latent = run_stack(input.clone(), &arch.encoder, &mut iter);
    let out = run_stack(latent, &arch.decoder, &mut iter);
    mse(&out, target)
}

pub fn params_to_f64(params: &ModelParams) -> Vec<Vec<f64>> {
    params
        .entries
        .iter()
        .map(|(_, t)| t.data.iter().map(|&v| v as f64).collect())
        .collect()
}

/// Central finite differences of [`model_loss`] with respect to every
/// parameter element.
pub fn finite_diff_param_grads(
    arch: &ArchConfig,
    params: &ModelParams,
    input: &RefMap,
    target: &RefMap,
    h: f64,
) -> Vec<Vec<f64>> {
    let mut flat = params_to_f64(params);
    let mut grads: Vec<Vec<f64>> = flat.iter().map(|p| vec![0.0; p.len()]).collect();
    for pi in 0..flat.len() {
        for j in 0..flat[pi].len() {
            let orig = flat[pi][j];
            flat[pi][j] = orig + h;
            let up = model_loss(arch, &flat, input, target);
            flat[pi][j] = orig - h;
            let down = model_loss(arch, &flat, input, target);
            flat[pi][j] = orig;
            grads[pi][j] = (up - down) / (2.0 * h);
        }
    }
    grads
}
