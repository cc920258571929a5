//! Class-balanced augmentation by bounded random affine transforms.
//!
//! The augmented set is a deterministic virtual dataset: element `i` is a
//! pure function of (plan seed, class, instance index), so samples can be
//! generated lazily, in any order and from any thread, and two runs with
//! the same seed see bit-identical images. Classes are the normalized
//! transcriptions, sorted; the per-class counts differ by at most one.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_pixels, DataError, GrayImage};
use crate::diffcore::Array;

/// Transform ranges are symmetric around the identity: rotation and shear
/// in degrees, scale as a multiplicative range, translation as a fraction
/// of the image extent. All-zero-width ranges reproduce the sources.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPlan {
    pub target_total: usize,
    pub rotation_deg: f64,
    pub shear_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub translate_frac: f64,
    pub seed: u64,
}

impl Default for AugmentationPlan {
    fn default() -> Self {
        AugmentationPlan {
            target_total: 10_000,
            rotation_deg: 5.0,
            shear_deg: 5.0,
            scale_min: 0.9,
            scale_max: 1.1,
            translate_frac: 0.05,
            seed: 0,
        }
    }
}

impl AugmentationPlan {
    /// A plan whose transforms are all the identity.
    pub fn identity(target_total: usize, seed: u64) -> AugmentationPlan {
        AugmentationPlan {
            target_total,
            rotation_deg: 0.0,
            shear_deg: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            translate_frac: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.target_total == 0 {
            return Err(DataError::InvalidPlan("target_total must be positive".into()));
        }
        if !(self.rotation_deg >= 0.0 && self.shear_deg >= 0.0 && self.translate_frac >= 0.0) {
            return Err(DataError::InvalidPlan(
                "rotation, shear and translation ranges must be non-negative".into(),
            ));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(DataError::InvalidPlan(format!(
                "scale range [{}, {}] must be positive and ordered",
                self.scale_min, self.scale_max
            )));
        }
        Ok(())
    }
}

struct ClassSources {
    label: String,
    images: Vec<GrayImage>,
}

/// Lazily generated, class-balanced augmented dataset.
pub struct AugmentedSet {
    plan: AugmentationPlan,
    classes: Vec<ClassSources>,
    counts: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl AugmentedSet {
    /// `sources` pairs each normalized transcription with one source
    /// image; multiple images may share a label. Labels must be
    /// non-empty.
    pub fn new(
        sources: Vec<(String, GrayImage)>,
        plan: AugmentationPlan,
    ) -> Result<AugmentedSet, DataError> {
        plan.validate()?;
        if sources.is_empty() {
            return Err(DataError::EmptyClass("<no sources>".into()));
        }
        let mut grouped: BTreeMap<String, Vec<GrayImage>> = BTreeMap::new();
        for (label, image) in sources {
            if label.is_empty() {
                return Err(DataError::EmptyTranscription(label));
            }
            grouped.entry(label).or_default().push(image);
        }
        let classes: Vec<ClassSources> = grouped
            .into_iter()
            .map(|(label, images)| ClassSources { label, images })
            .collect();
        // balance: base count everywhere, the remainder spread over the
        // first classes in label order
        let k = classes.len();
        let base = plan.target_total / k;
        let extra = plan.target_total % k;
        let counts: Vec<usize> = (0..k).map(|c| base + usize::from(c < extra)).collect();
        let mut offsets = Vec::with_capacity(k);
        let mut acc = 0;
        for &c in &counts {
            offsets.push(acc);
            acc += c;
        }
        Ok(AugmentedSet {
            plan,
            classes,
            counts,
            offsets,
            total: acc,
        })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.label.as_str())
    }

    /// Generate element `index` (class-major order): a normalized
    /// `[1, H, W]` image and its label.
    pub fn get(&self, index: usize) -> (Array, &str) {
        assert!(index < self.total, "index {index} out of range");
        let class = match self.offsets.binary_search(&index) {
            Ok(c) => c,
            Err(c) => c - 1,
        };
        let k = index - self.offsets[class];
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.plan.seed, class as u64, k as u64));
        let sources = &self.classes[class].images;
        let source = &sources[rng.gen_range(0..sources.len())];
        (
            random_affine(source, &self.plan, &mut rng),
            &self.classes[class].label,
        )
    }

    /// Class-major stream over the whole set.
    pub fn iter(&self) -> impl Iterator<Item = (Array, &str)> {
        (0..self.total).map(|i| self.get(i))
    }
}

/// Splitmix-style finalizer over (seed, class, instance).
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9).rotate_left(17);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Sample one affine transform from the plan's ranges (in a fixed draw
/// order) and resample the source bilinearly, filling the outside with
/// background (0.0 after normalization).
fn random_affine(source: &GrayImage, plan: &AugmentationPlan, rng: &mut ChaCha8Rng) -> Array {
    let rotation = rng.gen_range(-plan.rotation_deg..=plan.rotation_deg).to_radians();
    let shear = rng.gen_range(-plan.shear_deg..=plan.shear_deg).to_radians().tan();
    let sx = rng.gen_range(plan.scale_min..=plan.scale_max);
    let sy = rng.gen_range(plan.scale_min..=plan.scale_max);
    let w = source.width();
    let h = source.height();
    let tx = rng.gen_range(-plan.translate_frac..=plan.translate_frac) * w as f64;
    let ty = rng.gen_range(-plan.translate_frac..=plan.translate_frac) * h as f64;

    // forward map: rotate . shear . scale about the center, then translate
    let (sin, cos) = rotation.sin_cos();
    let m00 = cos * sx - sin * shear * sx;
    let m01 = cos * shear * sy + sin * sy;
    let m10 = sin * sx + cos * shear * sx;
    let m11 = sin * shear * sy + cos * sy;
    let det = m00 * m11 - m01 * m10;
    // scale_min > 0 keeps the transform invertible
    let (i00, i01, i10, i11) = (m11 / det, -m01 / det, -m10 / det, m00 / det);

    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;

    let norm = normalize_pixels(source);
    let src = norm.data();
    let mut out = Array::zeros(&[1, h, w]);
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx - tx;
            let dy = y as f64 - cy - ty;
            let ux = i00 * dx + i01 * dy + cx;
            let uy = i10 * dx + i11 * dy + cy;
            data[y * w + x] = bilinear(src, h, w, uy, ux);
        }
    }
    out
}

fn bilinear(src: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let sample = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            src[yy as usize * w + xx as usize]
        }
    };
    let v00 = sample(y0, x0);
    let v01 = sample(y0, x0 + 1.0);
    let v10 = sample(y0 + 1.0, x0);
    let v11 = sample(y0 + 1.0, x0 + 1.0);
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}
