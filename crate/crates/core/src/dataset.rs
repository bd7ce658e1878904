//! Images with their 10×10 grids of ground-truth concept labels.
//!
//! On disk a dataset is three things:
//!
//! * an image directory of PNG/JPEG files; the file stem is the image id,
//! * a label directory holding `<id>.txt` per image: exactly 100 lines in
//!   row-major grid order, each a concept name or `EXCLUDED`,
//! * a categories file with one `image_id<TAB>category` line per image.
//!
//! Coordinates are 0-based with x to the right and y downward. Region
//! rectangles are right/bottom exclusive; when a side is not divisible by 10
//! the remainder pixels go to the trailing rows/columns, one each.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::par;

pub const GRID: usize = 10;
pub const REGIONS: usize = GRID * GRID;
pub const EXCLUDED: &str = "EXCLUDED";

/// The nine local concepts of the natural-scene annotation task, in the
/// column order used by the result tables.
pub const DEFAULT_CONCEPTS: [&str; 9] = [
    "sky", "water", "grass", "trunks", "foliage", "field", "rocks", "flowers", "sand",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConceptId {
    pub index: usize,
    pub name: String,
}

/// Ordered, densely indexed set of concept names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptSet {
    concepts: Vec<ConceptId>,
}

impl ConceptSet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut concepts = Vec::with_capacity(names.len());
        for (index, name) in names.iter().enumerate() {
            let name = name.as_ref().trim();
            if name.is_empty() || name == EXCLUDED || concepts.iter().any(|c: &ConceptId| c.name == name) {
                return Err(Error::InvalidConfig(format!("bad or duplicate concept name `{name}`")));
            }
            concepts.push(ConceptId {
                index,
                name: name.to_string(),
            });
        }
        if concepts.is_empty() {
            return Err(Error::InvalidConfig("empty concept list".into()));
        }
        Ok(ConceptSet { concepts })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c.name == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.concepts[index].name
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConceptId> {
        self.concepts.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.concepts.iter().map(|c| c.name.clone()).collect()
    }
}

impl Default for ConceptSet {
    fn default() -> Self {
        ConceptSet::new(&DEFAULT_CONCEPTS).expect("default concepts are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegionRect {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
    pub row: usize,
    pub col: usize,
    pub index: usize,
}

impl RegionRect {
    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x1 as f64 && x < self.x2 as f64 && y >= self.y1 as f64 && y < self.y2 as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Half {
    Upper,
    Lower,
}

impl Half {
    pub const BOTH: [Half; 2] = [Half::Upper, Half::Lower];

    pub fn name(self) -> &'static str {
        match self {
            Half::Upper => "upper",
            Half::Lower => "lower",
        }
    }
}

/// Start offsets of the 10 cells along one axis, plus the end.
fn axis_cuts(len: u32) -> [u32; GRID + 1] {
    let base = len / GRID as u32;
    let rem = (len % GRID as u32) as usize;
    let mut cuts = [0u32; GRID + 1];
    for i in 0..GRID {
        let extra = u32::from(i >= GRID - rem);
        cuts[i + 1] = cuts[i] + base + extra;
    }
    cuts
}

fn axis_cell(pos: u32, len: u32) -> usize {
    let base = len / GRID as u32;
    let rem = len % GRID as u32;
    let uniform = GRID as u32 - rem;
    let split = uniform * base;
    if pos < split {
        (pos / base) as usize
    } else {
        (uniform + (pos - split) / (base + 1)) as usize
    }
}

fn check_size(width: u32, height: u32) -> Result<()> {
    if width < GRID as u32 || height < GRID as u32 {
        return Err(Error::ImageTooSmall {
            width,
            height,
            min: GRID as u32,
        });
    }
    Ok(())
}

/// The 100 grid rectangles of a `width`×`height` image in row-major order.
pub fn grid_regions(width: u32, height: u32) -> Result<Vec<RegionRect>> {
    check_size(width, height)?;
    let xs = axis_cuts(width);
    let ys = axis_cuts(height);
    let mut out = Vec::with_capacity(REGIONS);
    for row in 0..GRID {
        for col in 0..GRID {
            out.push(RegionRect {
                x1: xs[col],
                y1: ys[row],
                x2: xs[col + 1],
                y2: ys[row + 1],
                row,
                col,
                index: row * GRID + col,
            });
        }
    }
    Ok(out)
}

/// Index of the grid region containing pixel position `(x, y)`.
pub fn region_of_point(x: f64, y: f64, width: u32, height: u32) -> Result<usize> {
    check_size(width, height)?;
    if !(x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64) {
        return Err(Error::OutOfBounds { x, y, width, height });
    }
    let col = axis_cell(x.floor() as u32, width);
    let row = axis_cell(y.floor() as u32, height);
    Ok(row * GRID + col)
}

/// Grid rows 0..5 form the upper half, rows 5..10 the lower half.
pub fn half_of_region(region: usize) -> Half {
    debug_assert!(region < REGIONS);
    if region / GRID < GRID / 2 {
        Half::Upper
    } else {
        Half::Lower
    }
}

#[derive(Debug, Clone)]
pub enum ImageSource {
    File(PathBuf),
    Memory(Arc<RgbImage>),
}

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub source: ImageSource,
    /// One entry per grid region; `None` marks an EXCLUDED region.
    pub labels: Vec<Option<usize>>,
}

impl LabeledImage {
    pub fn in_memory(id: impl Into<String>, pixels: RgbImage, labels: Vec<Option<usize>>) -> Result<Self> {
        let id = id.into();
        if labels.len() != REGIONS {
            return Err(Error::MalformedLabelFile {
                path: PathBuf::from(&id),
                line: labels.len(),
                reason: format!("expected {REGIONS} labels"),
            });
        }
        let (width, height) = pixels.dimensions();
        check_size(width, height)?;
        Ok(LabeledImage {
            id,
            width,
            height,
            source: ImageSource::Memory(Arc::new(pixels)),
            labels,
        })
    }

    /// Decoded 8-bit RGB pixels.
    pub fn rgb(&self) -> Result<Cow<'_, RgbImage>> {
        match &self.source {
            ImageSource::Memory(img) => Ok(Cow::Borrowed(img.as_ref())),
            ImageSource::File(path) => {
                let img = image::open(path).map_err(|e| Error::UnreadableImage {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                let rgb = img.to_rgb8();
                if rgb.dimensions() != (self.width, self.height) {
                    return Err(Error::UnreadableImage {
                        path: path.clone(),
                        reason: "image changed size since loading".into(),
                    });
                }
                Ok(Cow::Owned(rgb))
            }
        }
    }

    pub fn labeled_regions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().enumerate().filter_map(|(r, l)| l.map(|c| (r, c)))
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    /// Image id → scene category name.
    pub categories: BTreeMap<String, String>,
    pub concepts: ConceptSet,
}

impl Dataset {
    /// Assembles a dataset, sorting images by id.
    pub fn new(
        mut images: Vec<LabeledImage>,
        categories: BTreeMap<String, String>,
        concepts: ConceptSet,
    ) -> Result<Self> {
        images.sort_by(|a, b| a.id.cmp(&b.id));
        for img in &images {
            if !categories.contains_key(&img.id) {
                return Err(Error::MissingCategory(img.id.clone()));
            }
            if let Some(bad) = img.labels.iter().flatten().find(|&&c| c >= concepts.len()) {
                return Err(Error::UnknownConcept {
                    token: bad.to_string(),
                    path: PathBuf::from(&img.id),
                });
            }
        }
        Ok(Dataset {
            images,
            categories,
            concepts,
        })
    }

    pub fn category_of(&self, image_id: &str) -> &str {
        self.categories.get(image_id).map(String::as_str).unwrap_or("")
    }

    /// Categories that have at least one image, in lexicographic order.
    pub fn category_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .images
            .iter()
            .map(|img| self.category_of(&img.id).to_string())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn labeled_region_count(&self) -> usize {
        self.images.iter().map(|i| i.labeled_regions().count()).sum()
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Parses one label file against `concepts`.
pub fn parse_label_file(path: &Path, text: &str, concepts: &ConceptSet) -> Result<Vec<Option<usize>>> {
    let malformed = |line: usize, reason: &str| Error::MalformedLabelFile {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut labels = Vec::with_capacity(REGIONS);
    for (i, raw) in body.split('\n').enumerate() {
        let token = raw.trim();
        if token.is_empty() {
            return Err(malformed(i + 1, "empty line"));
        }
        if labels.len() == REGIONS {
            return Err(malformed(i + 1, "more than 100 lines"));
        }
        if token == EXCLUDED {
            labels.push(None);
        } else {
            let c = concepts.index_of(token).ok_or_else(|| Error::UnknownConcept {
                token: token.to_string(),
                path: path.to_path_buf(),
            })?;
            labels.push(Some(c));
        }
    }
    if labels.len() != REGIONS {
        return Err(malformed(labels.len(), "fewer than 100 lines"));
    }
    Ok(labels)
}

/// Parses `image_id<TAB>category` lines.
pub fn parse_categories(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, cat) = line.split_once('\t').ok_or(Error::MalformedCategories {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        let (id, cat) = (id.trim(), cat.trim());
        if id.is_empty() || cat.is_empty() {
            return Err(Error::MalformedCategories {
                path: path.to_path_buf(),
                line: i + 1,
            });
        }
        out.insert(id.to_string(), cat.to_string());
    }
    Ok(out)
}

/// Loads a dataset labeled with the nine default concepts.
pub fn load_dataset(images_dir: &Path, labels_dir: &Path, categories_file: &Path) -> Result<Dataset> {
    load_dataset_with(images_dir, labels_dir, categories_file, ConceptSet::default())
}

pub fn load_dataset_with(
    images_dir: &Path,
    labels_dir: &Path,
    categories_file: &Path,
    concepts: ConceptSet,
) -> Result<Dataset> {
    let cat_text =
        fs::read_to_string(categories_file).map_err(Error::io(format!("reading {}", categories_file.display())))?;
    let categories = parse_categories(categories_file, &cat_text)?;

    let mut files: Vec<PathBuf> = fs::read_dir(images_dir)
        .map_err(Error::io(format!("listing {}", images_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();

    let loaded: Vec<Result<LabeledImage>> = par::map(&files, |path| {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let label_path = labels_dir.join(format!("{id}.txt"));
        if !label_path.is_file() {
            return Err(Error::MissingLabelFile(id));
        }
        let text = fs::read_to_string(&label_path).map_err(Error::io(format!("reading {}", label_path.display())))?;
        let labels = parse_label_file(&label_path, &text, &concepts)?;
        let (width, height) = image::image_dimensions(path).map_err(|e| Error::UnreadableImage {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        check_size(width, height)?;
        Ok(LabeledImage {
            id,
            width,
            height,
            source: ImageSource::File(path.clone()),
            labels,
        })
    });
    let images = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    Dataset::new(images, categories, concepts)
}

/// Labeled-region counts per (category, concept).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Census {
    pub categories: Vec<String>,
    pub concepts: Vec<String>,
    /// `counts[category][concept]`
    pub counts: Vec<Vec<u64>>,
}

impl Census {
    pub fn concept_totals(&self) -> Vec<u64> {
        (0..self.concepts.len())
            .map(|c| self.counts.iter().map(|row| row[c]).sum())
            .collect()
    }

    pub fn overall(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Table layout: header, one row per category, a totals row and an
    /// OVERALL row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("category,{}\n", self.concepts.join(","));
        for (cat, row) in self.categories.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&format!("{cat},{}\n", cells.join(",")));
        }
        let totals: Vec<String> = self.concept_totals().iter().map(u64::to_string).collect();
        out.push_str(&format!("# of image regions,{}\n", totals.join(",")));
        out.push_str(&format!("OVERALL,{}\n", self.overall()));
        out
    }
}

pub fn concept_census(dataset: &Dataset) -> Census {
    let categories = dataset.category_names();
    let mut counts = vec![vec![0u64; dataset.concepts.len()]; categories.len()];
    for img in &dataset.images {
        let cat = dataset.category_of(&img.id);
        let row = categories.iter().position(|c| c == cat).expect("category listed");
        for (_, c) in img.labeled_regions() {
            counts[row][c] += 1;
        }
    }
    Census {
        categories,
        concepts: dataset.concepts.names(),
        counts,
    }
}
