//! Participant-level k-fold assignment, the train/dev/test rotation, and
//! on-the-fly training augmentation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::preprocess::reflect_index;
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub map: BTreeMap<String, usize>,
}

/// Shuffles the (sorted, de-duplicated) participants with `seed` and cuts the
/// permutation into `k` contiguous chunks whose sizes differ by at most one.
/// No stratification by disease status.
pub fn assign_folds<S: AsRef<str>>(participant_ids: &[S], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Sizing(format!("k must be at least 2, got {k}")));
    }
    let unique: BTreeSet<&str> = participant_ids.iter().map(AsRef::as_ref).collect();
    let mut ids: Vec<&str> = unique.into_iter().collect();
    if ids.len() < k {
        return Err(Error::Sizing(format!(
            "{} participants cannot fill {k} folds",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let mut map = BTreeMap::new();
    let mut start = 0;
    for fold in 0..k {
        let size = n / k + usize::from(fold < n % k);
        for id in &ids[start..start + size] {
            map.insert(id.to_string(), fold);
        }
        start += size;
    }
    Ok(FoldAssignment { k, seed, map })
}

impl FoldAssignment {
    pub fn fold_of(&self, participant_id: &str) -> Option<usize> {
        self.map.get(participant_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.map.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Writes `participant_id,fold` rows.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["participant_id", "fold"])?;
        for (p, f) in &self.map {
            w.write_record([p.as_str(), &f.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        crate::raster::ensure_parent(path)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads a fold file. The seed is not stored in the file and reads back as 0.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut map = BTreeMap::new();
        for row in r.records() {
            let row = row?;
            let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
            let fold = row
                .get(1)
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Parse {
                    row: line,
                    message: "fold must be a non-negative integer".into(),
                })?;
            map.insert(row.get(0).unwrap_or("").to_string(), fold);
        }
        let k = map.values().max().map_or(0, |m| m + 1);
        Ok(FoldAssignment { k, seed: 0, map })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSplit {
    pub run_index: usize,
    pub test_fold: usize,
    pub dev_fold: usize,
    pub train_folds: Vec<usize>,
}

/// Run `r` tests on fold `r`, tunes on fold `(r + 1) mod k`, trains on the rest.
pub fn rotation_schedule(k: usize) -> Result<Vec<RunSplit>> {
    if k < 3 {
        return Err(Error::Sizing(format!(
            "k = {k}: need at least 3 folds for train, dev and test"
        )));
    }
    Ok((0..k)
        .map(|r| {
            let dev = (r + 1) % k;
            RunSplit {
                run_index: r,
                test_fold: r,
                dev_fold: dev,
                train_folds: (0..k).filter(|&f| f != r && f != dev).collect(),
            }
        })
        .collect())
}

/// Record indices for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn partition(
    records: &[ImageRecord],
    folds: &FoldAssignment,
    split: &RunSplit,
) -> Result<SplitIndices> {
    let mut out = SplitIndices::default();
    for (i, r) in records.iter().enumerate() {
        let fold = folds.fold_of(&r.participant_id).ok_or_else(|| {
            Error::Data(format!(
                "participant {} has no fold assignment",
                r.participant_id
            ))
        })?;
        if fold == split.test_fold {
            out.test.push(i);
        } else if fold == split.dev_fold {
            out.dev.push(i);
        } else {
            out.train.push(i);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Rotation angle is drawn uniformly from `[-rotation_degrees, rotation_degrees]`.
    pub rotation_degrees: f64,
    pub width_shift_frac: f64,
    pub height_shift_frac: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_degrees: 360.0,
            width_shift_frac: 0.1,
            height_shift_frac: 0.1,
            horizontal_flip: true,
            vertical_flip: true,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            rotation_degrees: 0.0,
            width_shift_frac: 0.0,
            height_shift_frac: 0.0,
            horizontal_flip: false,
            vertical_flip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| (0.0..1.0).contains(&f);
        if !(0.0..=360.0).contains(&self.rotation_degrees)
            || !frac_ok(self.width_shift_frac)
            || !frac_ok(self.height_shift_frac)
        {
            return Err(Error::Config(format!("invalid augmentation config {self:?}")));
        }
        Ok(())
    }
}

/// Concrete transform drawn for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub angle_degrees: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl AugmentDraw {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, cfg: &AugmentConfig, height: usize, width: usize) -> Self {
        let mut sym = |bound: f64| {
            if bound > 0.0 {
                rng.random_range(-bound..=bound)
            } else {
                0.0
            }
        };
        let angle_degrees = sym(cfg.rotation_degrees);
        let shift_x = sym((cfg.width_shift_frac * width as f64).floor());
        let shift_y = sym((cfg.height_shift_frac * height as f64).floor());
        let flip_horizontal = cfg.horizontal_flip && rng.random_bool(0.5);
        let flip_vertical = cfg.vertical_flip && rng.random_bool(0.5);
        AugmentDraw {
            angle_degrees,
            shift_x,
            shift_y,
            flip_horizontal,
            flip_vertical,
        }
    }
}

/// Rotation about the image center, then translation (at most
/// `floor(frac × size)` pixels per axis), then flips. Resampling
/// is bilinear with reflect fill. Labels are unaffected by construction.
pub fn augment<R: Rng + ?Sized>(image: &Raster<u8>, rng: &mut R, cfg: &AugmentConfig) -> Raster<u8> {
    let draw = AugmentDraw::draw(rng, cfg, image.height(), image.width());
    apply_augment(image, &draw)
}

pub fn apply_augment(image: &Raster<u8>, d: &AugmentDraw) -> Raster<u8> {
    let (h, w, c) = image.shape();
    let mut out = if d.angle_degrees == 0.0 && d.shift_x == 0.0 && d.shift_y == 0.0 {
        image.clone()
    } else {
        let (sin, cos) = d.angle_degrees.to_radians().sin_cos();
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let mut out = Raster::<u8>::new(h, w, c);
        let mut px = [0.0f64; 4];
        for y in 0..h {
            for x in 0..w {
                // Inverse map: undo the shift, then the rotation.
                let ux = x as f64 - d.shift_x - cx;
                let uy = y as f64 - d.shift_y - cy;
                let sx = cos * ux + sin * uy + cx;
                let sy = -sin * ux + cos * uy + cy;
                let x0 = sx.floor();
                let y0 = sy.floor();
                let fx = sx - x0;
                let fy = sy - y0;
                let xs = [
                    reflect_index(x0 as isize, w),
                    reflect_index(x0 as isize + 1, w),
                ];
                let ys = [
                    reflect_index(y0 as isize, h),
                    reflect_index(y0 as isize + 1, h),
                ];
                for ch in 0..c {
                    px[0] = image.get(ys[0], xs[0], ch) as f64;
                    px[1] = image.get(ys[0], xs[1], ch) as f64;
                    px[2] = image.get(ys[1], xs[0], ch) as f64;
                    px[3] = image.get(ys[1], xs[1], ch) as f64;
                    let v = (px[0] * (1.0 - fx) + px[1] * fx) * (1.0 - fy)
                        + (px[2] * (1.0 - fx) + px[3] * fx) * fy;
                    out.set(y, x, ch, v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        out
    };
    if d.flip_horizontal {
        out = Raster::from_fn(h, w, c, |y, x, ch| out.get(y, w - 1 - x, ch));
    }
    if d.flip_vertical {
        out = Raster::from_fn(h, w, c, |y, x, ch| out.get(h - 1 - y, x, ch));
    }
    out
}
