//! Procedural fundus photographs with controllable GA lesions, exact lesion
//! masks and matching grades, for desk-scale end-to-end validation.
//!
//! Geometry: fovea at the image centre, optic disc of diameter
//! `disc_diameter_px` (15% of the image width by default) on the nasal side.
//! Lesion areas are calibrated in disc areas, DA = π(dd/2)².

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    write_manifest, AreaCategory, CentralityCategory, Eye, GradeRecord, ImageRecord, StereoSide,
};
use crate::error::{Error, Result};
use crate::par;
use crate::raster::{save_image, Raster, RgbRaster};
use crate::seed::{self, PipelineRng};

/// Area range of each category in disc areas, `[lo, hi)`. The open top
/// category is capped so lesions still fit beside the fovea.
pub fn area_range_da(cat: AreaCategory) -> (f64, f64) {
    match cat {
        AreaCategory::Questionable => (0.0, 1.0 / 64.0),
        AreaCategory::LtI2 => (1.0 / 64.0, 1.0 / 32.0),
        AreaCategory::I2ToO2 => (1.0 / 32.0, 1.0 / 8.0),
        AreaCategory::O2ToHalfDa => (1.0 / 8.0, 0.5),
        AreaCategory::HalfTo1Da => (0.5, 1.0),
        AreaCategory::OneTo2Da => (1.0, 2.0),
        AreaCategory::Ge2Da => (2.0, 4.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub area_category: AreaCategory,
    pub central: bool,
    /// Only meaningful with `central`: grade the centre point as
    /// questionable (rendered with a fainter centre).
    #[serde(default)]
    pub questionable_center: bool,
    /// Strength of the pallor, in (0, 1].
    pub depigmentation: f64,
    pub multifocal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub image_size: usize,
    /// Defaults to 15% of `image_size`.
    pub disc_diameter_px: Option<f64>,
    pub lesion: Option<LesionSpec>,
    #[serde(default)]
    pub nv_amd: bool,
    pub eye: Eye,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(image_size: usize, seed: u64) -> Self {
        SynthSpec {
            image_size,
            disc_diameter_px: None,
            lesion: None,
            nv_amd: false,
            eye: Eye::Right,
            seed,
        }
    }

    pub fn disc_diameter(&self) -> f64 {
        self.disc_diameter_px.unwrap_or(0.15 * self.image_size as f64)
    }

    pub fn disc_area(&self) -> f64 {
        PI * (self.disc_diameter() / 2.0).powi(2)
    }

    /// Admissible lesion pixel counts `[lo, hi)` for a category.
    pub fn pixel_range(&self, cat: AreaCategory) -> (usize, usize) {
        let (lo, hi) = area_range_da(cat);
        let da = self.disc_area();
        (((lo * da).ceil() as usize).max(1), (hi * da).ceil() as usize)
    }

    fn validate(&self) -> Result<()> {
        let s = self.image_size as f64;
        let dd = self.disc_diameter();
        if self.image_size < 8 || !(dd > 0.0 && dd < s / 2.0) {
            return Err(Error::Spec(format!(
                "disc diameter {dd} px must lie in (0, {}) and the image must be at least 8 px",
                s / 2.0
            )));
        }
        if let Some(l) = &self.lesion {
            if !(l.depigmentation > 0.0 && l.depigmentation <= 1.0) {
                return Err(Error::Spec(format!("depigmentation {} outside (0, 1]", l.depigmentation)));
            }
            let (lo, hi) = self.pixel_range(l.area_category);
            if lo >= hi {
                return Err(Error::Spec(format!(
                    "{} lesion needs fewer than one pixel at {} px",
                    l.area_category, self.image_size
                )));
            }
            let field = PI * (FIELD_RADIUS * s).powi(2);
            if hi as f64 > 0.25 * field {
                return Err(Error::Spec(format!(
                    "{} lesion ({lo}–{hi} px) does not fit the fundus field at {} px",
                    l.area_category, self.image_size
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEye {
    pub image: RgbRaster,
    pub grade: GradeRecord,
    /// Single channel, 255 inside the lesion.
    pub mask: Raster<u8>,
}

impl SyntheticEye {
    pub fn lesion_pixels(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m > 0).count()
    }
}

const FIELD_RADIUS: f64 = 0.48;
const BACKGROUND: [f64; 3] = [188.0, 92.0, 48.0];
const DISC: [f64; 3] = [246.0, 198.0, 110.0];
const VESSEL: [f64; 3] = [128.0, 34.0, 26.0];
const PALLOR: [f64; 3] = [228.0, 216.0, 204.0];
const CHOROID: [f64; 3] = [206.0, 112.0, 82.0];
const NV_BLOTCH: [f64; 3] = [74.0, 30.0, 22.0];

fn blend(dst: &mut [f64; 3], src: [f64; 3], a: f64) {
    for k in 0..3 {
        dst[k] += a * (src[k] - dst[k]);
    }
}

struct Canvas {
    size: usize,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn at(&mut self, y: usize, x: usize) -> &mut [f64; 3] {
        &mut self.px[y * self.size + x]
    }

    fn stamp_disc(&mut self, cy: f64, cx: f64, r: f64, color: [f64; 3], a: f64) {
        let s = self.size as f64;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil().min(s - 1.0)).max(0.0) as usize;
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil().min(s - 1.0)).max(0.0) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
                let cover = (r + 0.5 - d).clamp(0.0, 1.0);
                if cover > 0.0 {
                    blend(self.at(y, x), color, a * cover);
                }
            }
        }
    }
}

/// Branching vessels leaving the disc as random-walk polylines.
fn draw_vessels(c: &mut Canvas, rng: &mut PipelineRng, disc: (f64, f64), dd: f64) {
    let s = c.size as f64;
    let base_width = (s / 170.0).max(0.45);
    let mut stack: Vec<(f64, f64, f64, f64, usize)> = (0..4)
        .map(|i| {
            let angle = [0.6, -0.6, PI - 0.6, PI + 0.6][i] + rng.random_range(-0.25..0.25);
            (disc.0, disc.1, angle, base_width, 0)
        })
        .collect();
    while let Some((mut y, mut x, mut angle, width, depth)) = stack.pop() {
        let steps = (s * rng.random_range(0.25..0.5) / (depth + 1) as f64) as usize;
        for i in 0..steps {
            angle += rng.random_range(-0.12..0.12);
            y += angle.sin();
            x += angle.cos();
            if ((y - s / 2.0).powi(2) + (x - s / 2.0).powi(2)).sqrt() > FIELD_RADIUS * s {
                break;
            }
            // Leave the avascular fovea alone.
            if ((y - s / 2.0).powi(2) + (x - s / 2.0).powi(2)).sqrt() < 0.4 * dd {
                break;
            }
            c.stamp_disc(y, x, width, VESSEL, 0.75);
            if depth < 2 && i > 4 && rng.random_bool(0.03) {
                let turn = if rng.random_bool(0.5) { 0.7 } else { -0.7 };
                stack.push((y, x, angle + turn, width * 0.7, depth + 1));
            }
        }
    }
}

/// Pixel set of exactly `count` pixels: those closest to one or more
/// centres under a perturbed elliptical distance.
fn blob(
    size: usize,
    centres: &[(f64, f64, f64)],
    count: usize,
    shape: (f64, f64, f64, f64),
    inside: impl Fn(usize, usize) -> bool,
) -> Option<Vec<usize>> {
    let (ratio, rot, wobble, phase) = shape;
    let (sin, cos) = rot.sin_cos();
    let mut cand: Vec<(f64, usize)> = Vec::new();
    let reach = (count as f64 / PI).sqrt() * 3.0 + 3.0;
    for &(cy, cx, _) in centres {
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(size - 1);
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(size - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if inside(y, x) {
                    cand.push((0.0, y * size + x));
                }
            }
        }
    }
    cand.sort_unstable_by_key(|c| c.1);
    cand.dedup_by_key(|c| c.1);
    for c in cand.iter_mut() {
        let (py, px) = ((c.1 / size) as f64 + 0.5, (c.1 % size) as f64 + 0.5);
        c.0 = centres
            .iter()
            .map(|&(cy, cx, scale)| {
                let (dy, dx) = (py - cy, px - cx);
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                let theta = v.atan2(u);
                ((u / ratio).powi(2) + v * v).sqrt() * (1.0 + wobble * (3.0 * theta + phase).sin()) / scale
            })
            .fold(f64::INFINITY, f64::min);
    }
    if cand.len() < count {
        return None;
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Some(cand[..count].iter().map(|c| c.1).collect())
}

pub fn generate_eye(spec: &SynthSpec) -> Result<SyntheticEye> {
    spec.validate()?;
    let n = spec.image_size;
    let s = n as f64;
    let dd = spec.disc_diameter();
    let mut rng = seed::rng(spec.seed, &[0x5E7]);
    let centre = (s / 2.0, s / 2.0);
    let field_r = FIELD_RADIUS * s;
    let in_field = |y: usize, x: usize| {
        ((y as f64 + 0.5 - centre.0).powi(2) + (x as f64 + 0.5 - centre.1).powi(2)).sqrt() < field_r
    };

    // Background: tinted field with slow illumination waves, vignetting and
    // a darker macula.
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-12.0..12.0));
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(1.0..3.0) * 2.0 * PI / s,
                rng.random_range(0.0..PI),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(2.0..6.0),
            )
        })
        .collect();
    let mut canvas = Canvas {
        size: n,
        px: vec![[0.0; 3]; n * n],
    };
    for y in 0..n {
        for x in 0..n {
            if !in_field(y, x) {
                continue;
            }
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let r = ((fy - centre.0).powi(2) + (fx - centre.1).powi(2)).sqrt() / field_r;
            let wave: f64 = waves
                .iter()
                .map(|&(k, dir, ph, amp)| amp * (k * (fx * dir.cos() + fy * dir.sin()) + ph).sin())
                .sum();
            let shade = 1.0 - 0.25 * r.powi(3) - 0.22 * (-(r * field_r / (0.7 * dd)).powi(2)).exp();
            *canvas.at(y, x) = std::array::from_fn(|k| (BACKGROUND[k] + tint[k] + wave) * shade);
        }
    }

    let disc_side = if spec.eye == Eye::Right { 1.0 } else { -1.0 };
    let disc = (centre.0 + rng.random_range(-0.03..0.03) * s, centre.1 + disc_side * 0.3 * s);
    canvas.stamp_disc(disc.0, disc.1, dd / 2.0, DISC, 0.9);
    canvas.stamp_disc(disc.0, disc.1 + 0.1 * dd * disc_side, dd / 5.0, [250.0, 235.0, 205.0], 0.6);
    draw_vessels(&mut canvas, &mut rng, disc, dd);

    if spec.nv_amd {
        let a: f64 = rng.random_range(0.0..2.0 * PI);
        let d = rng.random_range(0.1..0.25) * s;
        canvas.stamp_disc(centre.0 + d * a.sin(), centre.1 + d * a.cos(), 0.25 * dd, NV_BLOTCH, 0.8);
    }

    let mut mask = Raster::filled(n, n, 1, 0u8);
    let mut grade = GradeRecord::negative();
    grade.nv_amd = spec.nv_amd;
    if let Some(lesion) = &spec.lesion {
        let (lo, hi) = spec.pixel_range(lesion.area_category);
        let count = rng.random_range(lo..hi);
        let shape = (
            rng.random_range(0.6..1.0),
            rng.random_range(0.0..PI),
            rng.random_range(0.0..0.15),
            rng.random_range(0.0..2.0 * PI),
        );
        let r_est = (count as f64 / PI).sqrt();
        let centre_px = (n / 2, n / 2);
        let covers_centre = |px: &[usize]| px.contains(&(centre_px.0 * n + centre_px.1));
        let mut pixels = None;
        for _attempt in 0..50 {
            let first = if lesion.central {
                let a: f64 = rng.random_range(0.0..2.0 * PI);
                let d = rng.random_range(0.0..0.4) * r_est;
                (centre_px.0 as f64 + 0.5 + d * a.sin(), centre_px.1 as f64 + 0.5 + d * a.cos())
            } else {
                // Temporal half-plane, away from the disc and clear of the fovea.
                let a = rng.random_range(0.5 * PI..1.5 * PI) + if disc_side < 0.0 { PI } else { 0.0 };
                let d_lo = 1.8 * r_est + 2.0;
                let d_hi = field_r - 1.3 * r_est;
                if d_lo >= d_hi {
                    break;
                }
                let d = rng.random_range(d_lo..d_hi);
                (centre.0 + d * a.sin(), centre.1 + d * a.cos())
            };
            let mut centres = vec![(first.0, first.1, 1.0)];
            if lesion.multifocal {
                for k in 0..rng.random_range(1..=2usize) {
                    let a: f64 = rng.random_range(0.0..2.0 * PI);
                    let d = r_est * rng.random_range(1.2..1.8);
                    centres.push((first.0 + d * a.sin(), first.1 + d * a.cos(), 0.7 - 0.2 * k as f64));
                }
            }
            if let Some(px) = blob(n, &centres, count, shape, in_field) {
                if covers_centre(&px) == lesion.central {
                    pixels = Some(px);
                    break;
                }
            }
        }
        let pixels = pixels.ok_or_else(|| {
            Error::Spec(format!(
                "could not place a {}{} lesion of {count} px at {} px",
                if lesion.central { "central " } else { "" },
                lesion.area_category,
                n
            ))
        })?;

        let streak_dir: f64 = rng.random_range(0.0..PI);
        let streak_k = 2.0 * PI / (0.09 * dd).max(2.5);
        for &p in &pixels {
            mask.data_mut()[p] = 255;
            let (y, x) = (p / n, p % n);
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut a = lesion.depigmentation;
            if lesion.questionable_center {
                let d = ((fy - centre.0).powi(2) + (fx - centre.1).powi(2)).sqrt();
                a *= 0.5 + 0.5 * (d / (0.25 * dd)).min(1.0);
            }
            let px = canvas.at(y, x);
            blend(px, PALLOR, a);
            let streak = (streak_k * (fx * streak_dir.cos() + fy * streak_dir.sin())).sin();
            if streak > 0.55 {
                blend(px, CHOROID, 0.45 * a);
            }
        }
        grade.ga_present = true;
        grade.area_category = Some(lesion.area_category);
        grade.centrality = match (lesion.central, lesion.questionable_center) {
            (false, _) => CentralityCategory::NonCentral,
            (true, false) => CentralityCategory::DefiniteCenterPoint,
            (true, true) => CentralityCategory::QuestionableCpDefiniteSubfield,
        };
    }

    // Sensor noise.
    let image = Raster::from_fn(n, n, 3, |y, x, k| {
        let v = canvas.px[y * n + x][k];
        if v == 0.0 {
            0
        } else {
            (v + rng.random_range(-3.0..3.0)).round().clamp(0.0, 255.0) as u8
        }
    });
    Ok(SyntheticEye { image, grade, mask })
}

/// Whole-test-set counts per area category in the reference cohort, smallest category first.
pub const DEFAULT_AREA_WEIGHTS: [f64; 7] = [275.0, 38.0, 125.0, 192.0, 297.0, 403.0, 1255.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    pub ga_prevalence: f64,
    /// Fraction of GA-positive images whose lesion is central.
    pub cga_fraction: f64,
    pub seed: u64,
    pub image_size: usize,
    /// Relative frequency of each area category among positives.
    pub area_weights: [f64; 7],
    /// Fraction of central lesions graded with a questionable centre point.
    pub questionable_center_fraction: f64,
    /// Fraction of GA-negative images carrying an nv-AMD blotch.
    pub nv_amd_fraction: f64,
}

impl DatasetSpec {
    pub fn new(n: usize, ga_prevalence: f64, cga_fraction: f64, seed: u64) -> Self {
        DatasetSpec {
            n,
            ga_prevalence,
            cga_fraction,
            seed,
            image_size: 128,
            area_weights: DEFAULT_AREA_WEIGHTS,
            questionable_center_fraction: 158.0 / 1455.0,
            nv_amd_fraction: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.ga_prevalence)
            || !unit(self.cga_fraction)
            || !unit(self.questionable_center_fraction)
            || !unit(self.nv_amd_fraction)
            || self.area_weights.iter().any(|w| !(*w >= 0.0))
            || self.area_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(format!("invalid synthetic dataset spec {self:?}")));
        }
        Ok(())
    }
}

/// Splits `total` into integer parts proportional to `weights` (largest
/// remainder; ties to the earlier index).
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = total - parts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        parts[i] += 1;
    }
    parts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub manifest: PathBuf,
    pub images: usize,
    pub ga_positive: usize,
    pub cga_positive: usize,
    pub area_counts: [usize; 7],
}

const VISITS: [&str; 2] = ["baseline", "yr02"];

/// Writes `images/`, `masks/` and `manifest.csv` under `out_dir`. Each
/// participant contributes up to four images (two eyes, two visits).
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<SynthDataset> {
    spec.validate()?;
    let n = spec.n;
    let n_ga = (n as f64 * spec.ga_prevalence).round() as usize;
    let n_cga = (n_ga as f64 * spec.cga_fraction).round() as usize;
    let n_qcp = (n_cga as f64 * spec.questionable_center_fraction).round() as usize;
    let area_counts: [usize; 7] = apportion(n_ga, &spec.area_weights).try_into().expect("seven categories");

    let mut rng = seed::rng(spec.seed, &[0xDA7A]);
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    let mut areas: Vec<AreaCategory> = area_counts
        .iter()
        .zip(AreaCategory::ALL)
        .flat_map(|(&c, &a)| std::iter::repeat_n(a, c))
        .collect();
    areas.shuffle(&mut rng);
    let mut lesions: Vec<Option<LesionSpec>> = vec![None; n];
    for (j, (&slot, &area)) in slots.iter().zip(&areas).enumerate() {
        lesions[slot] = Some(LesionSpec {
            area_category: area,
            central: j < n_cga,
            questionable_center: j < n_qcp,
            depigmentation: rng.random_range(0.6..=1.0),
            multifocal: rng.random_bool(0.2),
        });
    }
    let nv: Vec<bool> = (0..n)
        .map(|i| lesions[i].is_none() && rng.random_bool(spec.nv_amd_fraction))
        .collect();

    let images_dir = out_dir.join("images");
    let masks_dir = out_dir.join("masks");
    for d in [out_dir, &images_dir, &masks_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let records = par::try_map_range(n, |i| {
        let eye = if (i / 2) % 2 == 0 { Eye::Right } else { Eye::Left };
        let participant_id = format!("S{:05}", i / 4);
        let visit = VISITS[i % 2];
        let eye_spec = SynthSpec {
            image_size: spec.image_size,
            disc_diameter_px: None,
            lesion: lesions[i],
            nv_amd: nv[i],
            eye,
            seed: seed::derive_seed(spec.seed, &[i as u64]),
        };
        let generated = generate_eye(&eye_spec)?;
        let stem = format!("{participant_id}_{eye}_{visit}");
        let rel = PathBuf::from("images").join(format!("{stem}.png"));
        save_image(&generated.image, &out_dir.join(&rel))?;
        save_image(&generated.mask, &masks_dir.join(format!("{stem}.png")))?;
        Ok::<_, Error>(ImageRecord {
            participant_id,
            eye,
            visit: visit.to_string(),
            stereo_side: StereoSide::LeftOfPair,
            image_path: rel,
            grade: generated.grade,
        })
    })?;
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&records, &manifest)?;
    Ok(SynthDataset {
        manifest,
        images: n,
        ga_positive: n_ga,
        cga_positive: n_cga,
        area_counts,
    })
}

/// Mask path written by [`generate_dataset`] for an image path.
pub fn mask_path_for(image_path: &Path) -> Option<PathBuf> {
    let name = image_path.file_name()?;
    Some(image_path.parent()?.parent()?.join("masks").join(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{derive_labels, ingest, parse_manifest, summarize, Task};
    use proptest::prelude::*;

    fn lesion(cat: AreaCategory, central: bool) -> LesionSpec {
        LesionSpec {
            area_category: cat,
            central,
            questionable_center: false,
            depigmentation: 0.8,
            multifocal: false,
        }
    }

    #[test]
    fn no_lesion() {
        let e = generate_eye(&SynthSpec::new(64, 1)).unwrap();
        assert!(!e.grade.ga_present);
        assert_eq!(e.lesion_pixels(), 0);
        assert_eq!(e.image.shape(), (64, 64, 3));
        assert_eq!(e.image.get(0, 0, 0), 0);
    }

    #[test]
    fn large_central_lesion() {
        let mut spec = SynthSpec::new(128, 2);
        spec.lesion = Some(lesion(AreaCategory::Ge2Da, true));
        let e = generate_eye(&spec).unwrap();
        let dd = 0.15 * 128.0;
        assert!(e.lesion_pixels() as f64 >= 2.0 * PI * (dd / 2.0f64).powi(2));
        assert_eq!(e.mask.get(64, 64, 0), 255);
        assert_eq!(e.grade.centrality, CentralityCategory::DefiniteCenterPoint);
        assert_eq!(e.grade.area_category, Some(AreaCategory::Ge2Da));
        assert!(e.grade.validate().is_ok());
    }

    #[test]
    fn deterministic_per_seed() {
        let mut spec = SynthSpec::new(96, 9);
        spec.lesion = Some(LesionSpec {
            multifocal: true,
            ..lesion(AreaCategory::OneTo2Da, false)
        });
        assert_eq!(generate_eye(&spec).unwrap(), generate_eye(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 10;
        assert_ne!(generate_eye(&spec).unwrap().image, generate_eye(&other).unwrap().image);
    }

    #[test]
    fn lesion_is_pale() {
        let mut spec = SynthSpec::new(128, 4);
        spec.lesion = Some(lesion(AreaCategory::HalfTo1Da, false));
        let e = generate_eye(&spec).unwrap();
        let (mut inside, mut n_in) = (0.0, 0.0);
        for y in 0..128 {
            for x in 0..128 {
                if e.mask.get(y, x, 0) > 0 {
                    inside += f64::from(e.image.get(y, x, 1));
                    n_in += 1.0;
                }
            }
        }
        assert!(inside / n_in > 140.0);
    }

    #[test]
    fn impossible_specs() {
        let mut spec = SynthSpec::new(16, 1);
        spec.lesion = Some(lesion(AreaCategory::Questionable, false));
        assert!(matches!(generate_eye(&spec), Err(Error::Spec(_))));
        let mut spec = SynthSpec::new(64, 1);
        spec.disc_diameter_px = Some(40.0);
        assert!(matches!(generate_eye(&spec), Err(Error::Spec(_))));
        let mut spec = SynthSpec::new(64, 1);
        spec.disc_diameter_px = Some(30.0);
        spec.lesion = Some(lesion(AreaCategory::Ge2Da, false));
        assert!(matches!(generate_eye(&spec), Err(Error::Spec(_))));
    }

    #[test]
    fn apportion_matches_largest_remainder() {
        assert_eq!(apportion(500, &DEFAULT_AREA_WEIGHTS).iter().sum::<usize>(), 500);
        assert_eq!(apportion(2585, &DEFAULT_AREA_WEIGHTS), vec![275, 38, 125, 192, 297, 403, 1255]);
        assert_eq!(apportion(3, &[1.0, 1.0]), vec![2, 1]);
        assert_eq!(apportion(0, &[1.0]), vec![0]);
    }

    #[test]
    fn dataset_prevalence_and_hierarchy() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = DatasetSpec::new(1000, 0.043, 0.5, 3);
        spec.image_size = 32;
        spec.area_weights = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0];
        let out = generate_dataset(&spec, dir.path()).unwrap();
        let records = parse_manifest(&out.manifest).unwrap();
        assert_eq!(records.len(), 1000);
        assert_eq!(records.iter().filter(|r| r.grade.ga_present).count(), 43);
        let cga = derive_labels(&records, Task::Cga);
        let ga = derive_labels(&records, Task::Ga);
        assert_eq!(cga.positives(), out.cga_positive);
        for (c, g) in cga.items.iter().zip(&ga.items) {
            assert!(!c.label || g.label);
        }
        let summary = summarize(&ingest(&out.manifest).unwrap());
        assert_eq!(summary.ga_images, out.ga_positive);
        assert_eq!(summary.participants, 250);
        let first = &records[0];
        assert!(first.image_path.exists());
        assert!(mask_path_for(&first.image_path).unwrap().exists());
    }

    #[test]
    fn empty_dataset_has_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate_dataset(&DatasetSpec::new(0, 0.25, 0.5, 1), dir.path()).unwrap();
        let text = std::fs::read_to_string(out.manifest).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("participant_id,eye,visit"));
    }

    #[test]
    fn unwritable_output_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("file");
        std::fs::write(&file, "x").unwrap();
        let err = generate_dataset(&DatasetSpec::new(2, 0.5, 0.0, 1), &file.join("sub")).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Io);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn mask_area_in_calibrated_range(
            s in 0u64..1_000_000,
            cat in 0usize..7,
            central in any::<bool>(),
            multifocal in any::<bool>(),
        ) {
            let mut spec = SynthSpec::new(128, s);
            let cat = AreaCategory::ALL[cat];
            spec.lesion = Some(LesionSpec { multifocal, ..lesion(cat, central) });
            let e = generate_eye(&spec).unwrap();
            let (lo, hi) = area_range_da(cat);
            let da = spec.disc_area();
            let area = e.lesion_pixels() as f64;
            prop_assert!(area >= lo * da && area < hi * da, "{cat}: {area} px, DA {da}");
            prop_assert_eq!(e.mask.get(64, 64, 0) > 0, central);
        }
    }
}
