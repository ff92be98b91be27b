//! Synthetic action-unit dataset: each class renders a fixed set of localized
//! glyphs ("units") onto a blank canvas, with seeded position, intensity and
//! pixel-noise jitter. The manifest's `aus` column records exactly the units
//! rendered into each image.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetManifest, GrayImage, ManifestEntry};
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Glyph {
    HorizontalBar,
    VerticalBar,
    ArcUp,
    ArcDown,
    Cross,
    DotPair,
    Chevron,
    Ring,
}

impl Glyph {
    pub const LIBRARY: [Glyph; 8] = [
        Glyph::HorizontalBar,
        Glyph::VerticalBar,
        Glyph::ArcUp,
        Glyph::ArcDown,
        Glyph::Cross,
        Glyph::DotPair,
        Glyph::Chevron,
        Glyph::Ring,
    ];

    /// Binary `size × size` mask, row-major, values in {0, 1}.
    pub fn stencil(self, size: usize) -> Vec<f64> {
        let g = size as f64;
        let c = (g - 1.0) / 2.0;
        let stroke = (g / 6.0).max(1.0);
        let radius = g * 0.4;
        let mut mask = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64, y as f64);
                let (dx, dy) = (fx - c, fy - c);
                let r = dx.hypot(dy);
                let on_ring = (r - radius).abs() <= stroke / 2.0;
                let inside = match self {
                    Glyph::HorizontalBar => dy.abs() <= stroke / 2.0 + 0.5,
                    Glyph::VerticalBar => dx.abs() <= stroke / 2.0 + 0.5,
                    Glyph::ArcUp => on_ring && dy <= 0.5,
                    Glyph::ArcDown => on_ring && dy >= -0.5,
                    Glyph::Cross => dx.abs() <= stroke / 2.0 || dy.abs() <= stroke / 2.0,
                    Glyph::DotPair => {
                        let dot = g / 5.0;
                        (fx - g * 0.25 + 0.5).hypot(dy) <= dot
                            || (fx - g * 0.75 + 0.5).hypot(dy) <= dot
                    }
                    Glyph::Chevron => {
                        // "V": two strokes meeting at the bottom centre
                        let target = g - 1.0 - 2.0 * dx.abs();
                        (fy - target).abs() <= stroke && fy >= g * 0.2
                    }
                    Glyph::Ring => on_ring,
                };
                if inside {
                    mask[y * size + x] = 1.0;
                }
            }
        }
        mask
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitSpec {
    pub id: u32,
    pub glyph: Glyph,
    /// Half-open placement region `[x0, y0, x1, y1]` on the canvas.
    pub region: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRule {
    pub label: String,
    pub units: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Maximum shift (pixels, each axis) of a glyph from its region centre.
    pub position: usize,
    /// Glyph intensity drawn uniformly from `[min, max]`.
    pub intensity: [f64; 2],
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub canvas_size: usize,
    pub glyph_size: usize,
    pub background: u8,
    pub units: Vec<UnitSpec>,
    pub classes: Vec<ClassRule>,
    pub samples_per_class: usize,
    pub jitter: Jitter,
    pub seed: u64,
}

/// Where one glyph was drawn: top-left corner on the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub image: usize,
    pub unit: u32,
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<GrayImage>,
    pub placements: Vec<Placement>,
    pub warnings: Vec<String>,
}

impl Default for SyntheticSpec {
    /// Four units in the four canvas quadrants, one unit per class,
    /// 100 images per class on a 48-pixel canvas.
    fn default() -> Self {
        Self::grid(48, 4, 100, 1)
    }
}

impl SyntheticSpec {
    /// `count` units (≤ 8) from the glyph library laid out on a grid of
    /// disjoint regions, with class `k` rendering unit `k + 1` only.
    pub fn grid(canvas_size: usize, count: usize, samples_per_class: usize, seed: u64) -> Self {
        let count = count.clamp(1, Glyph::LIBRARY.len());
        let cols = (count as f64).sqrt().ceil() as usize;
        let rows = count.div_ceil(cols);
        let (cw, ch) = (canvas_size / cols, canvas_size / rows);
        let glyph_size = cw.min(ch) / 2;
        let units = (0..count)
            .map(|k| {
                let (r, c) = (k / cols, k % cols);
                UnitSpec {
                    id: k as u32 + 1,
                    glyph: Glyph::LIBRARY[k],
                    region: [c * cw, r * ch, (c + 1) * cw, (r + 1) * ch],
                }
            })
            .collect();
        let classes = (0..count)
            .map(|k| ClassRule {
                label: format!("class{}", k + 1),
                units: vec![k as u32 + 1],
            })
            .collect();
        Self {
            canvas_size,
            glyph_size,
            background: 30,
            units,
            classes,
            samples_per_class,
            jitter: Jitter {
                position: glyph_size / 3,
                intensity: [170.0, 250.0],
                noise_std: 6.0,
            },
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(|e| DataError::Spec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises")
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn unit(&self, id: u32) -> Option<&UnitSpec> {
        self.units.iter().find(|u| u.id == id)
    }

    /// Checks the spec; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>, DataError> {
        let err = |m: String| Err(DataError::Spec(m));
        if self.canvas_size < 8 {
            return err(format!("canvas_size {} is below 8", self.canvas_size));
        }
        if self.glyph_size == 0 || self.samples_per_class == 0 || self.classes.is_empty() {
            return err("glyph_size, samples_per_class and classes must be nonzero".into());
        }
        let [lo, hi] = self.jitter.intensity;
        if !(0.0..=255.0).contains(&lo)
            || !(lo..=255.0).contains(&hi)
            || self.jitter.noise_std < 0.0
        {
            return err(
                "jitter intensity must satisfy 0 <= min <= max <= 255 and noise_std >= 0".into(),
            );
        }
        let mut ids = BTreeSet::new();
        for u in &self.units {
            if u.id == 0 || !ids.insert(u.id) {
                return err(format!("unit id {} is zero or duplicated", u.id));
            }
            let [x0, y0, x1, y1] = u.region;
            if x1 > self.canvas_size || y1 > self.canvas_size || x0 >= x1 || y0 >= y1 {
                return err(format!(
                    "unit {} region {:?} is not inside the canvas",
                    u.id, u.region
                ));
            }
            if x1 - x0 < self.glyph_size || y1 - y0 < self.glyph_size {
                return err(format!("unit {} region is smaller than the glyph", u.id));
            }
        }
        let mut labels = BTreeSet::new();
        for c in &self.classes {
            if !labels.insert(&c.label) {
                return err(format!("class label '{}' is duplicated", c.label));
            }
            if let Some(missing) = c.units.iter().find(|id| !ids.contains(id)) {
                return err(format!(
                    "class '{}' references undefined unit {missing}",
                    c.label
                ));
            }
        }
        let mut warnings = Vec::new();
        for (i, a) in self.units.iter().enumerate() {
            for b in &self.units[i + 1..] {
                let overlap = a.region[0] < b.region[2]
                    && b.region[0] < a.region[2]
                    && a.region[1] < b.region[3]
                    && b.region[1] < a.region[3];
                if overlap {
                    warnings.push(format!(
                        "placement regions of units {} and {} overlap; the units may be indistinguishable",
                        a.id, b.id
                    ));
                }
            }
        }
        Ok(warnings)
    }

    fn render(&self, image: usize, units: &[u32], placements: &mut Vec<Placement>) -> GrayImage {
        let n = self.canvas_size;
        let g = self.glyph_size;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[0x5e7d, image as u64]));
        let mut canvas = vec![self.background as f64; n * n];
        for &id in units {
            let unit = self.unit(id).expect("validated unit");
            let [x0, y0, x1, y1] = unit.region;
            let j = self.jitter.position as i64;
            let mut shift = || {
                if j > 0 {
                    rng.random_range(-j..=j) as isize
                } else {
                    0
                }
            };
            let (sx, sy) = (shift(), shift());
            let cx = (x0 + (x1 - x0 - g) / 2) as isize + sx;
            let cy = (y0 + (y1 - y0 - g) / 2) as isize + sy;
            let px = cx.clamp(x0 as isize, (x1 - g) as isize) as usize;
            let py = cy.clamp(y0 as isize, (y1 - g) as isize) as usize;
            let [lo, hi] = self.jitter.intensity;
            let intensity = if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            };
            for (k, m) in unit.glyph.stencil(g).into_iter().enumerate() {
                if m > 0.0 {
                    let idx = (py + k / g) * n + px + k % g;
                    canvas[idx] = canvas[idx].max(intensity * m);
                }
            }
            placements.push(Placement {
                image,
                unit: id,
                x: px,
                y: py,
                size: g,
            });
        }
        if self.jitter.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.jitter.noise_std).expect("finite std");
            for v in canvas.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        let px = canvas
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::new(n, n, px).expect("canvas shape")
    }

    /// Renders the dataset in memory. Images are ordered class-major.
    pub fn generate(&self) -> Result<SyntheticDataset, DataError> {
        let warnings = self.validate()?;
        let mut entries = Vec::new();
        let mut images = Vec::new();
        let mut placements = Vec::new();
        for class in &self.classes {
            let units: Vec<u32> = class
                .units
                .iter()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            for _ in 0..self.samples_per_class {
                let index = images.len();
                images.push(self.render(index, &units, &mut placements));
                entries.push(ManifestEntry {
                    path: format!("images/img_{index:05}.pgm"),
                    label: class.label.clone(),
                    aus: units.iter().copied().collect(),
                    subject: "synthetic".into(),
                    sequence: format!("seq{index:05}"),
                    crop: None,
                });
            }
        }
        Ok(SyntheticDataset {
            manifest: DatasetManifest::new(".", entries),
            images,
            placements,
            warnings,
        })
    }

    /// Renders and writes `images/*.pgm`, `manifest.csv`, `placements.csv` and
    /// a copy of the spec under `out_dir`.
    pub fn generate_to(&self, out_dir: &Path) -> Result<SyntheticDataset, DataError> {
        let mut ds = self.generate()?;
        let img_dir = out_dir.join("images");
        std::fs::create_dir_all(&img_dir).map_err(|e| DataError::io(&img_dir, e))?;
        for (entry, img) in ds.manifest.entries().iter().zip(&ds.images) {
            img.write_pgm(&out_dir.join(&entry.path))?;
        }
        ds.manifest = DatasetManifest::new(out_dir, ds.manifest.entries().to_vec());
        ds.manifest.write(&out_dir.join("manifest.csv"))?;
        let mut text = String::from("image,unit,x,y,size\n");
        for p in &ds.placements {
            writeln!(text, "{},{},{},{},{}", p.image, p.unit, p.x, p.y, p.size)
                .expect("string write");
        }
        let placements = out_dir.join("placements.csv");
        std::fs::write(&placements, text).map_err(|e| DataError::io(&placements, e))?;
        let spec_copy = out_dir.join("synthetic_spec.json");
        std::fs::write(&spec_copy, self.to_json()).map_err(|e| DataError::io(&spec_copy, e))?;
        Ok(ds)
    }
}
