//! Image-specific class saliency: the magnitude of the positive-class logit
//! gradient with respect to each input pixel, plus overlay rendering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelArtifact;
use crate::nn::Tensor;
use crate::preprocess::{hex_digest, PreparedImage};
use crate::raster::{Raster, RgbRaster};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelReduce {
    #[default]
    MaxAbs,
    SumAbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// H×W×1, min-max normalized to [0, 1].
    pub values: Raster<f64>,
    pub image_id: String,
    pub model_fingerprint: String,
}

/// Digest of a model's configuration and weights.
pub fn model_fingerprint(artifact: &ModelArtifact) -> String {
    let w = &artifact.model.weights;
    let mut bytes = serde_json::to_vec(&artifact.meta).expect("meta serializes");
    for v in w.params.iter().chain(&w.buffers) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    hex_digest(&bytes)
}

/// ∂logit/∂pixel as an H×W×C raster.
pub fn input_gradient(artifact: &ModelArtifact, image: &PreparedImage) -> Result<Raster<f64>> {
    artifact.check_input(image)?;
    let net = &artifact.model.network;
    let mut scratch = vec![0.0; net.n_params];
    let (_, g) = net.forward_backward(
        &artifact.model.weights,
        Tensor::from_raster(&image.raster),
        &mut scratch,
        true,
        |out| Tensor::from_vec(out.shape, vec![1.0]),
    );
    let g = g.expect("input gradient requested");
    let s = g.shape;
    Ok(Raster::from_fn(s.h, s.w, s.c, |y, x, c| g.at(c, y, x)))
}

/// Per-pixel reduction over channels, before normalization.
pub fn reduce_channels(grad: &Raster<f64>, reduce: ChannelReduce) -> Raster<f64> {
    let c = grad.channels();
    Raster::from_fn(grad.height(), grad.width(), 1, |y, x, _| {
        let it = (0..c).map(|k| grad.get(y, x, k).abs());
        match reduce {
            ChannelReduce::MaxAbs => it.fold(0.0, f64::max),
            ChannelReduce::SumAbs => it.sum(),
        }
    })
}

/// Min-max normalization. An identically zero map stays zero; any other
/// constant map becomes all ones.
pub fn normalize(map: &Raster<f64>) -> Raster<f64> {
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        map.map(|v| (v - lo) / (hi - lo))
    } else {
        map.map(|v| if v == 0.0 { 0.0 } else { 1.0 })
    }
}

pub fn saliency_map(
    artifact: &ModelArtifact,
    image: &PreparedImage,
    image_id: &str,
    reduce: ChannelReduce,
) -> Result<SaliencyMap> {
    let grad = input_gradient(artifact, image)?;
    Ok(SaliencyMap {
        values: normalize(&reduce_channels(&grad, reduce)),
        image_id: image_id.to_string(),
        model_fingerprint: model_fingerprint(artifact),
    })
}

/// "Hot" colormap: black → red → yellow → white.
pub fn heat_color(v: f64) -> [f64; 3] {
    let t = 3.0 * v.clamp(0.0, 1.0);
    [t.min(1.0), (t - 1.0).clamp(0.0, 1.0), (t - 2.0).clamp(0.0, 1.0)].map(|c| 255.0 * c)
}

/// Side-by-side composite: the photograph on the left, the photograph with
/// the heat-mapped saliency alpha-blended over it on the right.
pub fn overlay(image: &RgbRaster, map: &Raster<f64>, alpha: f64) -> Result<RgbRaster> {
    let (h, w, c) = image.shape();
    if c != 3 {
        return Err(Error::Channels(c));
    }
    if (map.height(), map.width()) != (h, w) {
        return Err(Error::Input(format!(
            "saliency map is {}×{}, image is {h}×{w}",
            map.height(),
            map.width()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(Raster::from_fn(h, 2 * w, 3, |y, x, k| {
        if x < w {
            return image.get(y, x, k);
        }
        let x = x - w;
        let photo = f64::from(image.get(y, x, k));
        let heat = heat_color(map.get(y, x, 0))[k];
        ((1.0 - alpha) * photo + alpha * heat).round().clamp(0.0, 255.0) as u8
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;
    use crate::model::{build_model, Model, ModelConfig, TrainingConfig};
    use crate::nn::{Layer, NetBuilder, Shape, Weights};
    use crate::seed;
    use rand::Rng;

    fn image(size: usize, s: u64) -> PreparedImage {
        let mut rng = seed::rng(s, &[]);
        PreparedImage {
            raster: Raster::from_fn(size, size, 3, |_, _, _| rng.random_range(0..=255u8)),
            fingerprint: "fp".into(),
        }
    }

    fn linear_artifact(w: Vec<f64>) -> ModelArtifact {
        let mut b = NetBuilder::new(Shape::new(3, 4, 4));
        b.dense(1);
        let network = b.build();
        let model = Model {
            config: ModelConfig::tiny(16, Task::Ga),
            weights: Weights { params: w, buffers: vec![] },
            network,
        };
        ModelArtifact::new(model, "fp".into(), TrainingConfig::default())
    }

    #[test]
    fn linear_model_closed_form() {
        let mut rng = seed::rng(3, &[]);
        let mut w: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        w.push(0.3);
        let art = linear_artifact(w.clone());
        let m = saliency_map(&art, &image(4, 1), "x", ChannelReduce::MaxAbs).unwrap();
        assert_eq!((m.values.height(), m.values.width(), m.values.channels()), (4, 4, 1));
        // Weights are laid out channel-major over the flattened input.
        let raw = Raster::from_fn(4, 4, 1, |y, x, _| (0..3).map(|c| w[c * 16 + y * 4 + x].abs()).fold(0.0, f64::max));
        let expect = normalize(&raw);
        for (a, b) in m.values.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let max = m.values.data().iter().copied().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn zero_head_gives_zero_map() {
        let mut model = build_model(&ModelConfig::tiny(16, Task::Ga), 1).unwrap();
        let net = &model.network;
        let Some(Layer::Dense(d)) = net.layers.last() else { panic!() };
        model.weights.params[d.w_off..d.w_off + d.inputs].fill(0.0);
        let art = ModelArtifact::new(model, "fp".into(), TrainingConfig::default());
        let grad = input_gradient(&art, &image(16, 2)).unwrap();
        assert!(grad.data().iter().all(|&g| g == 0.0));
        let m = saliency_map(&art, &image(16, 2), "x", ChannelReduce::SumAbs).unwrap();
        assert!(m.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = build_model(&ModelConfig::tiny(16, Task::Ga), 4).unwrap();
        let art = ModelArtifact::new(model, "fp".into(), TrainingConfig::default());
        let img = image(16, 5);
        let grad = input_gradient(&art, &img).unwrap();
        let net = &art.model.network;
        let x0 = Tensor::from_raster(&img.raster);
        let f = |x: Tensor| net.forward(&art.model.weights, x).data[0];
        let h = 1e-3;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let i = (c * 16 + y) * 16 + x;
                    let mut xp = x0.clone();
                    xp.data[i] += h;
                    let mut xm = x0.clone();
                    xm.data[i] -= h;
                    let fd = (f(xp) - f(xm)) / (2.0 * h);
                    num += (fd - grad.get(y, x, c)).powi(2);
                    den += fd.powi(2);
                }
            }
        }
        assert!((num / den).sqrt() < 1e-3);
    }

    #[test]
    fn fingerprint_mismatch() {
        let art = linear_artifact(vec![0.0; 49]);
        let mut img = image(4, 1);
        img.fingerprint = "other".into();
        assert!(matches!(saliency_map(&art, &img, "x", ChannelReduce::MaxAbs), Err(Error::Fingerprint { .. })));
    }

    #[test]
    fn overlay_panels() {
        let img = image(6, 7).raster;
        let map = Raster::from_fn(6, 6, 1, |y, x, _| (y * 6 + x) as f64 / 35.0);
        let out = overlay(&img, &map, 0.0).unwrap();
        assert_eq!(out.shape(), (6, 12, 3));
        assert_eq!(out.window(0, 0, 6, 6), img);
        assert_eq!(out.window(0, 6, 6, 6), img);

        let flat = Raster::filled(6, 6, 1, 0.5);
        let out = overlay(&img, &flat, 1.0).unwrap();
        let right = out.window(0, 6, 6, 6);
        let first = [right.get(0, 0, 0), right.get(0, 0, 1), right.get(0, 0, 2)];
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!([right.get(y, x, 0), right.get(y, x, 1), right.get(y, x, 2)], first);
            }
        }
        assert!(overlay(&img, &Raster::filled(5, 6, 1, 0.0), 0.5).is_err());
        assert!(overlay(&img, &flat, 1.5).is_err());
    }

    #[test]
    fn normalization_range() {
        let m = normalize(&Raster::from_vec(1, 3, 1, vec![2.0, 4.0, 3.0]).unwrap());
        assert_eq!(m.data(), &[0.0, 1.0, 0.5]);
        assert_eq!(normalize(&Raster::filled(2, 2, 1, 0.0)).data(), &[0.0; 4]);
    }
}
