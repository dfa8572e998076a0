//! Class-conditioned Gaussian pattern images.
//!
//! Every class owns a smooth random template (a coarse Gaussian grid,
//! bilinearly upsampled and scaled to RMS `separation`). A sample is its class
//! template, optionally shifted circularly by up to `max_shift` pixels, plus
//! i.i.d. `N(0, noise²)` pixel noise. Templates depend only on `seed`; the noise
//! of each split has its own stream.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    #[serde(default)]
    pub test_per_class: Option<usize>,
    /// `[C, H, W]`
    pub image_size: [usize; 3],
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub separation: f64,
    #[serde(default = "one")]
    pub noise: f64,
    /// Coarse grid extent the templates are drawn on.
    #[serde(default = "four")]
    pub grid: usize,
    #[serde(default)]
    pub max_shift: usize,
}

fn one() -> f64 {
    1.0
}

fn four() -> usize {
    4
}

impl SyntheticSpec {
    pub fn new(classes: usize, per_class: usize, image_size: [usize; 3], seed: u64) -> Self {
        SyntheticSpec {
            classes,
            per_class,
            test_per_class: None,
            image_size,
            seed,
            separation: 1.0,
            noise: 1.0,
            grid: 4,
            max_shift: 0,
        }
    }

    /// Class templates, each `C·H·W` long.
    pub fn templates(&self) -> Result<Vec<Vec<f64>>> {
        let [c, h, w] = self.image_size;
        if self.classes == 0 || c == 0 || h == 0 || w == 0 || self.grid == 0 {
            return Err(Error::Invalid(format!(
                "synthetic data needs positive sizes, got {} classes of {:?} on a {} grid",
                self.classes, self.image_size, self.grid
            )));
        }
        let mut r = rng::stream(self.seed, rng::tag("synthetic:templates"));
        let g = self.grid;
        let mut out = Vec::with_capacity(self.classes);
        for _ in 0..self.classes {
            let mut t = Vec::with_capacity(c * h * w);
            for _ in 0..c {
                let coarse: Vec<f64> = (0..g * g).map(|_| StandardNormal.sample(&mut r)).collect();
                for y in 0..h {
                    for x in 0..w {
                        t.push(bilinear(&coarse, g, y, h, x, w));
                    }
                }
            }
            let rms = (t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
            let scale = if rms > 0.0 { self.separation / rms } else { 0.0 };
            t.iter_mut().for_each(|v| *v *= scale);
            out.push(t);
        }
        Ok(out)
    }

    pub fn generate(&self, split: Split) -> Result<Dataset> {
        let templates = self.templates()?;
        let per_class = match split {
            Split::Train => self.per_class,
            Split::Test => self.test_per_class.unwrap_or(self.per_class),
        };
        if !(self.noise >= 0.0) {
            return Err(Error::Invalid(format!("noise must be non-negative, got {}", self.noise)));
        }
        let label = match split {
            Split::Train => "synthetic:train",
            Split::Test => "synthetic:test",
        };
        let mut r = rng::stream(self.seed, rng::tag(label));
        let [c, h, w] = self.image_size;
        let n = per_class * self.classes;
        let mut images = Vec::with_capacity(n * c * h * w);
        let mut labels = Vec::with_capacity(n);
        // interleave classes so any prefix is balanced
        for _ in 0..per_class {
            for (k, t) in templates.iter().enumerate() {
                let s = self.max_shift as i64;
                let (dy, dx) = if s > 0 {
                    (r.random_range(-s..=s) as isize, r.random_range(-s..=s) as isize)
                } else {
                    (0, 0)
                };
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
                            let sx = (x as isize + dx).rem_euclid(w as isize) as usize;
                            let noise: f64 = StandardNormal.sample(&mut r);
                            images.push(t[(ch * h + sy) * w + sx] + self.noise * noise);
                        }
                    }
                }
                labels.push(k);
            }
        }
        Dataset::new(self.image_size, self.classes, images, labels)
    }
}

/// Samples a `g×g` grid at pixel `(y, x)` of an `h×w` image, corners aligned.
fn bilinear(grid: &[f64], g: usize, y: usize, h: usize, x: usize, w: usize) -> f64 {
    let pos = |i: usize, n: usize| if n > 1 { i as f64 * (g - 1) as f64 / (n - 1) as f64 } else { 0.0 };
    let (fy, fx) = (pos(y, h), pos(x, w));
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(g - 1), (x0 + 1).min(g - 1));
    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
    let at = |a: usize, b: usize| grid[a * g + b];
    (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1)) + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1))
}

/// Convenience constructor for the common case.
pub fn synthetic_dataset(classes: usize, per_class: usize, image_size: [usize; 3], seed: u64) -> Result<Dataset> {
    SyntheticSpec::new(classes, per_class, image_size, seed).generate(Split::Train)
}
