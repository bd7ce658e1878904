//! Procedural labeled scenes for tests and demos.
//!
//! Every grid region is painted with one concept's texture, so no region is
//! excluded. Textures differ in color and in structure (smooth gradients,
//! checkers, speckle, stripes), which gives both the color features and the
//! keypoint detector something to separate.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{grid_regions, ConceptSet, Dataset, LabeledImage, DEFAULT_CONCEPTS, GRID, REGIONS};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub images: usize,
    /// Concepts used, as indices into the nine default concepts.
    pub concepts: Vec<usize>,
    pub width: u32,
    pub height: u32,
}

impl SynthParams {
    /// `n` concepts chosen from a fixed preference order (sky, foliage and
    /// sand first).
    pub fn new(seed: u64, n_concepts: usize, images: usize) -> Result<Self> {
        const ORDER: [usize; 9] = [0, 4, 8, 1, 2, 3, 5, 6, 7];
        if n_concepts == 0 || n_concepts > ORDER.len() {
            return Err(Error::InvalidConfig(format!(
                "synthetic concepts must be 1-9, got {n_concepts}"
            )));
        }
        let mut concepts = ORDER[..n_concepts].to_vec();
        concepts.sort_unstable();
        Ok(SynthParams {
            seed,
            images,
            concepts,
            width: 320,
            height: 240,
        })
    }
}

pub const CATEGORIES: [&str; 3] = ["coasts", "forests", "mixed"];

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    pub category: String,
    pub pixels: RgbImage,
    pub labels: Vec<usize>,
}

fn layout(rng: &mut ChaCha8Rng, category: usize, concepts: &[usize], index: usize) -> Vec<usize> {
    let n = concepts.len();
    let pick = |rng: &mut ChaCha8Rng| concepts[rng.gen_range(0..n)];
    let mut labels = vec![concepts[0]; REGIONS];
    match category {
        // Banded: one concept above a horizon, another below.
        0 | 1 => {
            let top = if category == 0 { concepts[0] } else { pick(rng) };
            let mut bottom = pick(rng);
            if n > 1 {
                while bottom == top {
                    bottom = pick(rng);
                }
            }
            let horizon = rng.gen_range(2..=7);
            for (r, l) in labels.iter_mut().enumerate() {
                *l = if r / GRID < horizon { top } else { bottom };
            }
        }
        // Vertical stripes; the first mixed image cycles every concept.
        _ => {
            let mut col = 0;
            while col < GRID {
                let w = rng.gen_range(1..=3).min(GRID - col);
                let c = pick(rng);
                for x in col..col + w {
                    for y in 0..GRID {
                        labels[y * GRID + x] = if index == 0 { concepts[x % n] } else { c };
                    }
                }
                col += w;
            }
        }
    }
    labels
}

fn clamp(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Per-image texture parameters for one concept.
#[derive(Clone, Copy)]
struct Style {
    tint: f64,
    phase: f64,
    salt: u64,
    /// Alternate appearance sharing its palette with another concept
    /// (hazy sky, autumn foliage, wet sand).
    alt: bool,
    light: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(h: u64, k: u32) -> f64 {
    ((splitmix(h ^ k as u64) >> 11) as f64) / (1u64 << 53) as f64
}

/// Strength in [0,1] of soft round blobs on a jittered grid with the given
/// cell size, radius range and occupancy.
fn blobs(x: f64, y: f64, cell: f64, radius: (f64, f64), occupancy: f64, salt: u64) -> f64 {
    let (cx, cy) = ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let mut best: f64 = 0.0;
    for gy in cy - 1..=cy + 1 {
        for gx in cx - 1..=cx + 1 {
            let h = splitmix(salt ^ splitmix((gx as u64) << 32 ^ (gy as u64 & 0xffff_ffff)));
            if unit(h, 0) >= occupancy {
                continue;
            }
            let bx = (gx as f64 + 0.2 + 0.6 * unit(h, 1)) * cell;
            let by = (gy as f64 + 0.2 + 0.6 * unit(h, 2)) * cell;
            let r = radius.0 + (radius.1 - radius.0) * unit(h, 3);
            let d2 = (x - bx).powi(2) + (y - by).powi(2);
            best = best.max((-d2 / (2.0 * r * r)).exp());
        }
    }
    best
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn texel(concept: usize, x: u32, y: u32, h: u32, style: Style, rng: &mut ChaCha8Rng) -> [u8; 3] {
    let (xf, yf) = (x as f64, y as f64);
    let t = style.tint;
    let salt = style.salt;
    let rgb = match concept {
        // sky: smooth vertical blue gradient
        0 if style.alt => {
            let g = yf / h as f64;
            [215.0 + 15.0 * g + t, 195.0 + 10.0 * g, 135.0 + 10.0 * g]
        }
        0 => {
            let g = yf / h as f64;
            [70.0 + 80.0 * g + t, 130.0 + 60.0 * g + t, 235.0 - 10.0 * g]
        }
        // water: horizontal ripples with glints
        1 => {
            let w = 30.0 * (yf * 0.7 + style.phase).sin();
            let glint = blobs(xf, yf, 12.0, (1.5, 2.5), 0.5, salt);
            mix([25.0 + t, 85.0 + w * 0.5, 150.0 + w], [200.0, 220.0, 240.0], glint)
        }
        // grass: vertical blades
        2 => {
            let blade = 0.5 + 0.5 * (xf * 1.3 + style.phase).sin();
            let tuft = blobs(xf, yf, 9.0, (1.5, 3.0), 0.7, salt);
            mix(
                [60.0 + 30.0 * blade, 150.0 + 50.0 * blade + t, 40.0],
                [30.0, 80.0, 20.0],
                tuft,
            )
        }
        // trunks: brown bars with knots
        3 => {
            let bar = (((xf + style.phase) / 6.0).floor() as i64 % 2) as f64;
            let knot = blobs(xf, yf, 10.0, (2.0, 3.0), 0.6, salt);
            mix(
                [90.0 + 50.0 * bar + t, 60.0 + 30.0 * bar, 30.0 + 10.0 * bar],
                [40.0, 25.0, 10.0],
                knot,
            )
        }
        // foliage: dense dark leaves on light green
        4 if style.alt => {
            let leaf = blobs(xf, yf, 7.0, (1.8, 3.0), 0.9, salt);
            mix([200.0 + t, 140.0, 50.0], [120.0, 45.0, 15.0], leaf)
        }
        4 => {
            let leaf = blobs(xf, yf, 7.0, (1.8, 3.0), 0.9, salt);
            mix([95.0, 175.0 + t, 70.0], [15.0, 60.0, 15.0], leaf)
        }
        // field: yellow-green with sparse clods
        5 => {
            let clod = blobs(xf, yf, 14.0, (2.0, 4.0), 0.5, salt);
            mix([170.0 + t, 180.0, 70.0], [110.0, 100.0, 40.0], clod)
        }
        // rocks: gray stones with dark cracks
        6 => {
            let stone = blobs(xf, yf, 11.0, (3.0, 5.0), 0.9, salt);
            let v = 80.0 + 90.0 * stone + t;
            [v, v, v + 5.0]
        }
        // flowers: colored dots on green
        7 => {
            let petal = blobs(xf, yf, 8.0, (1.5, 2.5), 0.8, salt);
            mix([50.0, 120.0 + t, 50.0], [240.0, 60.0, 150.0], petal)
        }
        // sand: pale yellow with brown grains
        _ if style.alt => {
            let grain = blobs(xf, yf, 9.0, (1.4, 2.4), 0.6, salt);
            mix([120.0 + t, 160.0, 225.0], [80.0, 110.0, 170.0], grain)
        }
        _ => {
            let grain = blobs(xf, yf, 9.0, (1.4, 2.4), 0.6, salt);
            mix([225.0, 200.0 + t, 125.0], [150.0, 115.0, 55.0], grain)
        }
    };
    let n = 2.0;
    let l = style.light;
    [
        clamp(l * rgb[0] + rng.gen_range(-n..=n)),
        clamp(l * rgb[1] + rng.gen_range(-n..=n)),
        clamp(l * rgb[2] + rng.gen_range(-n..=n)),
    ]
}

/// Generates `params.images` labeled images.
pub fn generate(params: &SynthParams) -> Result<Vec<SynthImage>> {
    if params.concepts.is_empty() || params.concepts.iter().any(|&c| c >= DEFAULT_CONCEPTS.len()) {
        return Err(Error::InvalidConfig(
            "synthetic concepts must index the default set".into(),
        ));
    }
    let rects = grid_regions(params.width, params.height)?;
    let mut out = Vec::with_capacity(params.images);
    for i in 0..params.images {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(params.seed, &format!("synth/{i}")));
        let category = i % CATEGORIES.len();
        let labels = layout(&mut rng, category, &params.concepts, i / CATEGORIES.len());
        let styles: Vec<Style> = (0..DEFAULT_CONCEPTS.len())
            .map(|_| Style {
                tint: rng.gen_range(-10.0..10.0),
                phase: rng.gen_range(0.0..6.0),
                salt: rng.gen(),
                alt: rng.gen_bool(0.35),
                light: rng.gen_range(0.7..1.15),
            })
            .collect();
        let mut pixels = RgbImage::new(params.width, params.height);
        for rect in &rects {
            let c = labels[rect.index];
            for y in rect.y1..rect.y2 {
                for x in rect.x1..rect.x2 {
                    pixels.put_pixel(x, y, Rgb(texel(c, x, y, params.height, styles[c], &mut rng)));
                }
            }
        }
        out.push(SynthImage {
            id: format!("synth_{i:03}"),
            category: CATEGORIES[category].to_string(),
            pixels,
            labels,
        });
    }
    Ok(out)
}

/// In-memory dataset over the nine default concepts.
pub fn to_dataset(images: &[SynthImage]) -> Result<Dataset> {
    let mut categories = BTreeMap::new();
    let mut labeled = Vec::with_capacity(images.len());
    for img in images {
        categories.insert(img.id.clone(), img.category.clone());
        labeled.push(LabeledImage::in_memory(
            img.id.clone(),
            img.pixels.clone(),
            img.labels.iter().map(|&c| Some(c)).collect(),
        )?);
    }
    Dataset::new(labeled, categories, ConceptSet::default())
}

/// Writes `images/<id>.png`, `labels/<id>.txt` and `categories.txt`.
pub fn write(images: &[SynthImage], dir: &Path) -> Result<()> {
    let img_dir = dir.join("images");
    let lab_dir = dir.join("labels");
    for d in [&img_dir, &lab_dir] {
        fs::create_dir_all(d).map_err(Error::io(format!("creating {}", d.display())))?;
    }
    let mut cats = String::new();
    for img in images {
        img.pixels.save(img_dir.join(format!("{}.png", img.id)))?;
        let text: String = img
            .labels
            .iter()
            .map(|&c| format!("{}\n", DEFAULT_CONCEPTS[c]))
            .collect();
        let p = lab_dir.join(format!("{}.txt", img.id));
        fs::write(&p, text).map_err(Error::io(format!("writing {}", p.display())))?;
        cats.push_str(&format!("{}\t{}\n", img.id, img.category));
    }
    let p = dir.join("categories.txt");
    fs::write(&p, cats).map_err(Error::io(format!("writing {}", p.display())))
}
