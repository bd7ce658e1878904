//! Visual vocabularies: k-means over SIFT descriptors and nearest-word
//! quantization.
//!
//! Four kinds are built. A universal vocabulary clusters every training
//! descriptor at once; an integrated vocabulary clusters each scene category
//! separately and concatenates the blocks in lexicographic category order, so
//! word `i` belongs to category `i / K`. Each kind also exists restricted to
//! keypoints of the upper or lower half of the image grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{half_of_region, region_of_point, Half};
use crate::error::{Error, Result};
use crate::keypoints::{Descriptor, Feature, DESCRIPTOR_LEN};
use crate::{par, seed};

const ASSIGN_CHUNK: usize = 1024;

/// Squared Euclidean distance with four independent accumulators.
#[inline]
pub fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            let d = a[4 * i + l] as f64 - b[4 * i + l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        let d = a[i] as f64 - b[i];
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Relative objective improvement below which iteration stops.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            seed,
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    /// Nearest centroid of every point under the final centroids.
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&0.0)
    }
}

/// Nearest centroid by squared distance; ties go to the lowest index.
fn nearest(p: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign<P: AsRef<[f32]> + Sync>(points: &[P], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    let chunks = par::map_chunks(points, ASSIGN_CHUNK, |_, chunk| {
        chunk.iter().map(|p| nearest(p.as_ref(), centroids)).collect::<Vec<_>>()
    });
    let mut labels = Vec::with_capacity(points.len());
    let mut dists = Vec::with_capacity(points.len());
    for (l, d) in chunks.into_iter().flatten() {
        labels.push(l);
        dists.push(d);
    }
    (labels, dists)
}

fn plus_plus_init<P: AsRef<[f32]> + Sync>(points: &[P], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let to_f64 = |p: &P| p.as_ref().iter().map(|v| *v as f64).collect::<Vec<f64>>();
    let mut centroids = vec![to_f64(&points[rng.gen_range(0..n)])];
    let mut d2: Vec<f64> = par::map(points, |p| sq_dist(p.as_ref(), &centroids[0]));
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = to_f64(&points[pick]);
        par::for_each_mut(&mut d2, |i, d| {
            let nd = sq_dist(points[i].as_ref(), &c);
            if nd < *d {
                *d = nd;
            }
        });
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from a k-means++ seeding.
///
/// Stops when no assignment changes, when the relative objective
/// improvement drops below `tol`, or after `max_iter` iterations. A cluster
/// that loses all its points is re-seeded at the point farthest from its
/// current centroid, so exactly `k` centroids are always returned.
pub fn kmeans<P: AsRef<[f32]> + Sync>(points: &[P], params: &KMeansParams) -> Result<KMeansResult> {
    let k = params.k;
    if k == 0 || points.len() < k {
        return Err(Error::TooFewPoints {
            points: points.len(),
            k: k.max(1),
        });
    }
    let dim = points[0].as_ref().len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut updated_last = false;

    for _ in 0..params.max_iter.max(1) {
        let (new_labels, dists) = assign(points, &centroids);
        let objective: f64 = dists.iter().sum();
        let changed = new_labels.iter().zip(&labels).filter(|(a, b)| a != b).count();
        labels = new_labels;
        let previous = trace.last().copied();
        trace.push(objective);
        iterations += 1;
        updated_last = false;
        if changed == 0 {
            break;
        }

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p.as_ref()) {
                *s += *v as f64;
            }
        }
        let mut far: Vec<usize> = Vec::new();
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s * inv).collect();
            } else {
                if far.is_empty() {
                    far = (0..points.len()).collect();
                    far.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
                    far.reverse();
                }
                let p = far.pop().expect("more points than clusters");
                centroids[j] = points[p].as_ref().iter().map(|v| *v as f64).collect();
            }
        }
        updated_last = true;

        if let Some(prev) = previous {
            if prev <= 0.0 || (prev - objective) <= params.tol * prev {
                break;
            }
        }
    }

    let (final_labels, dists) = assign(points, &centroids);
    if updated_last {
        trace.push(dists.iter().sum());
    }
    Ok(KMeansResult {
        centroids,
        assignments: final_labels,
        objective_trace: trace,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VocabularyMode {
    Universal,
    Integrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VocabularyKind {
    Universal,
    Integrated,
    UniversalHalf(Half),
    IntegratedHalf(Half),
}

impl VocabularyKind {
    pub const ALL: [VocabularyKind; 6] = [
        VocabularyKind::Universal,
        VocabularyKind::Integrated,
        VocabularyKind::UniversalHalf(Half::Upper),
        VocabularyKind::UniversalHalf(Half::Lower),
        VocabularyKind::IntegratedHalf(Half::Upper),
        VocabularyKind::IntegratedHalf(Half::Lower),
    ];

    pub fn new(mode: VocabularyMode, half: Option<Half>) -> Self {
        match (mode, half) {
            (VocabularyMode::Universal, None) => VocabularyKind::Universal,
            (VocabularyMode::Integrated, None) => VocabularyKind::Integrated,
            (VocabularyMode::Universal, Some(h)) => VocabularyKind::UniversalHalf(h),
            (VocabularyMode::Integrated, Some(h)) => VocabularyKind::IntegratedHalf(h),
        }
    }

    pub fn mode(self) -> VocabularyMode {
        match self {
            VocabularyKind::Universal | VocabularyKind::UniversalHalf(_) => VocabularyMode::Universal,
            _ => VocabularyMode::Integrated,
        }
    }

    pub fn half(self) -> Option<Half> {
        match self {
            VocabularyKind::UniversalHalf(h) | VocabularyKind::IntegratedHalf(h) => Some(h),
            _ => None,
        }
    }

    pub fn name(self) -> String {
        let mode = match self.mode() {
            VocabularyMode::Universal => "universal",
            VocabularyMode::Integrated => "integrated",
        };
        match self.half() {
            None => mode.to_string(),
            Some(h) => format!("{mode}-{}", h.name()),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for VocabularyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub kind: VocabularyKind,
    pub k_per_block: usize,
    /// Category order of the integrated blocks; empty for universal kinds.
    pub categories: Vec<String>,
    pub words: Vec<Descriptor>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Category index a word was clustered from (integrated kinds only).
    pub fn provenance(&self, word: usize) -> Option<usize> {
        match self.kind.mode() {
            VocabularyMode::Integrated => Some(word / self.k_per_block),
            VocabularyMode::Universal => None,
        }
    }

    pub fn fingerprint(&self) -> u64 {
        let mut bytes = format!("{};{};{}", self.kind, self.k_per_block, self.categories.join(";")).into_bytes();
        for w in &self.words {
            for v in &w.0 {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        seed::fingerprint(&bytes)
    }

    pub fn quantize(&self, d: &Descriptor) -> usize {
        quantize(d, self)
    }

    /// Header rows `#kind=`, `#K=`, `#categories=` (`;`-separated), then one
    /// row per word: index, provenance category (`-` if none) and 128 values
    /// with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#kind={}", self.kind);
        let _ = writeln!(out, "#K={}", self.k_per_block);
        let _ = writeln!(out, "#categories={}", self.categories.join(";"));
        for (i, w) in self.words.iter().enumerate() {
            let prov = self
                .provenance(i)
                .and_then(|c| self.categories.get(c))
                .map(String::as_str)
                .unwrap_or("-");
            let _ = write!(out, "{i},{prov}");
            for v in &w.0 {
                let _ = write!(out, ",{v:.8e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::MalformedVocabulary(m);
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing #{key}")))?;
            line.strip_prefix(&format!("#{key}="))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected #{key}=, got `{line}`")))
        };
        let kind_s = header("kind")?;
        let kind = VocabularyKind::parse(&kind_s).ok_or_else(|| bad(format!("unknown kind `{kind_s}`")))?;
        let k_per_block: usize = header("K")?.parse().map_err(|_| bad("bad K".into()))?;
        let cats = header("categories")?;
        let categories: Vec<String> = if cats.is_empty() {
            Vec::new()
        } else {
            cats.split(';').map(str::to_string).collect()
        };
        let mut words = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let idx: usize = cells
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad(format!("row {i}: bad index")))?;
            if idx != words.len() {
                return Err(bad(format!("row {i}: index {idx} out of order")));
            }
            cells
                .next()
                .ok_or_else(|| bad(format!("row {i}: missing provenance")))?;
            let mut w = [0.0f32; DESCRIPTOR_LEN];
            let mut n = 0;
            for c in cells {
                if n == DESCRIPTOR_LEN {
                    return Err(Error::DescriptorLengthMismatch {
                        expected: DESCRIPTOR_LEN,
                        found: n + 1,
                    });
                }
                w[n] = c.trim().parse().map_err(|_| bad(format!("row {i}: bad value `{c}`")))?;
                n += 1;
            }
            if n != DESCRIPTOR_LEN {
                return Err(Error::DescriptorLengthMismatch {
                    expected: DESCRIPTOR_LEN,
                    found: n,
                });
            }
            words.push(Descriptor(w));
        }
        let expected = match kind.mode() {
            VocabularyMode::Universal => k_per_block,
            VocabularyMode::Integrated => k_per_block * categories.len(),
        };
        if words.len() != expected {
            return Err(bad(format!("{} words, expected {expected}", words.len())));
        }
        Ok(Vocabulary {
            kind,
            k_per_block,
            categories,
            words,
        })
    }
}

/// Index of the nearest word by squared Euclidean distance; ties go to the
/// lowest index.
pub fn quantize(d: &Descriptor, v: &Vocabulary) -> usize {
    let q: [f64; DESCRIPTOR_LEN] = d.0.map(|x| x as f64);
    let mut best = (0, f64::INFINITY);
    for (j, w) in v.words.iter().enumerate() {
        let dist = sq_dist(&w.0, &q);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabularyParams {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for VocabularyParams {
    fn default() -> Self {
        VocabularyParams {
            k: 200,
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

fn cluster(descriptors: &[Descriptor], params: &VocabularyParams, seed: u64) -> Result<Vec<Descriptor>> {
    let result = kmeans(
        descriptors,
        &KMeansParams {
            k: params.k,
            seed,
            max_iter: params.max_iter,
            tol: params.tol,
        },
    )?;
    Ok(result
        .centroids
        .iter()
        .map(|c| {
            let mut w = [0.0f32; DESCRIPTOR_LEN];
            w.iter_mut().zip(c).for_each(|(o, v)| *o = *v as f32);
            Descriptor(w)
        })
        .collect())
}

/// K words clustered from all `descriptors`.
pub fn build_universal(descriptors: &[Descriptor], params: &VocabularyParams, seed: u64) -> Result<Vocabulary> {
    build_universal_kind(descriptors, params, seed, VocabularyKind::Universal)
}

fn build_universal_kind(
    descriptors: &[Descriptor],
    params: &VocabularyParams,
    seed: u64,
    kind: VocabularyKind,
) -> Result<Vocabulary> {
    Ok(Vocabulary {
        kind,
        k_per_block: params.k,
        categories: Vec::new(),
        words: cluster(descriptors, params, seed)?,
    })
}

/// One K-word block per category, concatenated in the map's (lexicographic)
/// order. Each block gets its own seed derived from `seed` and the category.
pub fn build_integrated(
    per_category: &BTreeMap<String, Vec<Descriptor>>,
    params: &VocabularyParams,
    seed: u64,
) -> Result<Vocabulary> {
    build_integrated_kind(per_category, params, seed, VocabularyKind::Integrated)
}

fn build_integrated_kind(
    per_category: &BTreeMap<String, Vec<Descriptor>>,
    params: &VocabularyParams,
    seed: u64,
    kind: VocabularyKind,
) -> Result<Vocabulary> {
    if per_category.is_empty() {
        return Err(Error::TooFewPoints { points: 0, k: params.k });
    }
    let mut words = Vec::with_capacity(per_category.len() * params.k);
    for (cat, descs) in per_category {
        if descs.is_empty() {
            return Err(Error::EmptyCategory(cat.clone()));
        }
        words.extend(cluster(descs, params, seed::derive(seed, cat))?);
    }
    Ok(Vocabulary {
        kind,
        k_per_block: params.k,
        categories: per_category.keys().cloned().collect(),
        words,
    })
}

/// Detector output of one training image.
#[derive(Debug, Clone, Copy)]
pub struct TrainingImage<'a> {
    pub category: &'a str,
    pub width: u32,
    pub height: u32,
    pub features: &'a [Feature],
}

/// Descriptors of `images` grouped by category, optionally restricted to the
/// keypoints lying in one half of the grid.
pub fn descriptors_by_category(images: &[TrainingImage<'_>], half: Option<Half>) -> BTreeMap<String, Vec<Descriptor>> {
    let mut out: BTreeMap<String, Vec<Descriptor>> = BTreeMap::new();
    for img in images {
        let entry = out.entry(img.category.to_string()).or_default();
        for f in img.features {
            let keep = match half {
                None => true,
                Some(h) => region_of_point(f.keypoint.x as f64, f.keypoint.y as f64, img.width, img.height)
                    .map(|r| half_of_region(r) == h)
                    .unwrap_or(false),
            };
            if keep {
                entry.push(f.descriptor);
            }
        }
    }
    out
}

/// Builds any of the six vocabulary kinds from training images.
pub fn build_vocabulary(
    images: &[TrainingImage<'_>],
    kind: VocabularyKind,
    params: &VocabularyParams,
    seed: u64,
) -> Result<Vocabulary> {
    let grouped = descriptors_by_category(images, kind.half());
    match kind.mode() {
        VocabularyMode::Universal => {
            let all: Vec<Descriptor> = grouped.into_values().flatten().collect();
            build_universal_kind(&all, params, seed, kind)
        }
        VocabularyMode::Integrated => build_integrated_kind(&grouped, params, seed, kind),
    }
}

/// Vocabulary built only from keypoints in `half`.
pub fn build_half_vocabulary(
    images: &[TrainingImage<'_>],
    half: Half,
    mode: VocabularyMode,
    params: &VocabularyParams,
    seed: u64,
) -> Result<Vocabulary> {
    build_vocabulary(images, VocabularyKind::new(mode, Some(half)), params, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::Keypoint;

    fn normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
        (0..n).map(|_| (0..dim).map(|_| rng.gen::<f32>()).collect()).collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = random_points(&mut rng, 57, 128);
        let r = kmeans(&pts, &KMeansParams::new(1, 9)).unwrap();
        for d in 0..128 {
            let mean = pts.iter().map(|p| p[d] as f64).sum::<f64>() / pts.len() as f64;
            assert!((r.centroids[0][d] - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn objective_is_monotone_and_final_assignment_is_fixed() {
        for run in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + run);
            let pts = random_points(&mut rng, 300, 16);
            let r = kmeans(&pts, &KMeansParams::new(7, run)).unwrap();
            for w in r.objective_trace.windows(2) {
                assert!(w[1] <= w[0], "run {run}: {:?}", r.objective_trace);
            }
            assert_eq!(r.centroids.len(), 7);
            assert!(r.centroids.iter().flatten().all(|v| v.is_finite()));
            let (again, _) = assign(&pts, &r.centroids);
            assert_eq!(again, r.assignments);
        }
    }

    #[test]
    fn two_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, sigma, dim) = (200usize, 0.05f64, 128usize);
        let centers = [vec![0.2f64; dim], vec![0.8f64; dim]];
        let mut pts = Vec::new();
        for c in &centers {
            for _ in 0..n {
                pts.push(
                    c.iter()
                        .map(|m| (m + sigma * normal(&mut rng)) as f32)
                        .collect::<Vec<f32>>(),
                );
            }
        }
        let r = kmeans(&pts, &KMeansParams::new(2, 1)).unwrap();
        let bound = 3.0 * sigma / (n as f64).sqrt();
        for c in &centers {
            let best = r
                .centroids
                .iter()
                .map(|k| k.iter().zip(c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min);
            assert!(best < bound, "max coordinate error {best} >= {bound}");
        }
    }

    #[test]
    fn too_few_points() {
        let pts = vec![vec![0.0f32; 4]; 3];
        assert!(matches!(
            kmeans(&pts, &KMeansParams::new(4, 0)),
            Err(Error::TooFewPoints { points: 3, k: 4 })
        ));
    }

    #[test]
    fn duplicate_points_still_give_k_centroids() {
        let mut pts = vec![vec![1.0f32, 1.0]; 10];
        pts.push(vec![5.0, 5.0]);
        let r = kmeans(&pts, &KMeansParams::new(3, 3)).unwrap();
        assert_eq!(r.centroids.len(), 3);
    }

    fn random_descriptors(rng: &mut ChaCha8Rng, n: usize) -> Vec<Descriptor> {
        (0..n)
            .map(|_| {
                let mut d = [0.0f32; DESCRIPTOR_LEN];
                d.iter_mut().for_each(|v| *v = rng.gen::<f32>() * 0.2);
                Descriptor(d)
            })
            .collect()
    }

    fn toy_params(k: usize) -> VocabularyParams {
        VocabularyParams {
            k,
            ..VocabularyParams::default()
        }
    }

    #[test]
    fn universal_size_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let descs = random_descriptors(&mut rng, 100);
        let a = build_universal(&descs, &toy_params(5), 42).unwrap();
        let b = build_universal(&descs, &toy_params(5), 42).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.provenance(3), None);
    }

    #[test]
    fn integrated_block_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut per = BTreeMap::new();
        per.insert("b-forest".to_string(), random_descriptors(&mut rng, 30));
        per.insert("a-coast".to_string(), random_descriptors(&mut rng, 30));
        let v = build_integrated(&per, &toy_params(3), 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.categories, vec!["a-coast", "b-forest"]);
        for i in 0..6 {
            assert_eq!(v.provenance(i), Some(i / 3));
        }
        // Words of block 0 come from the a-coast descriptors.
        let solo = build_universal(&per["a-coast"], &toy_params(3), seed::derive(1, "a-coast")).unwrap();
        assert_eq!(&v.words[..3], &solo.words[..]);

        per.insert("c-empty".to_string(), Vec::new());
        assert!(matches!(
            build_integrated(&per, &toy_params(3), 1),
            Err(Error::EmptyCategory(_))
        ));
    }

    #[test]
    fn block_arithmetic_at_full_scale() {
        let v = Vocabulary {
            kind: VocabularyKind::Integrated,
            k_per_block: 200,
            categories: (0..6).map(|i| format!("c{i}")).collect(),
            words: vec![Descriptor([0.0; DESCRIPTOR_LEN]); 1200],
        };
        assert_eq!(v.provenance(1150), Some(5));
        assert_eq!(v.provenance(199), Some(0));
        assert_eq!(v.provenance(200), Some(1));
    }

    fn feature_at(x: f32, y: f32, d: Descriptor) -> Feature {
        Feature {
            keypoint: Keypoint {
                x,
                y,
                scale: 2.0,
                orientation: 0.0,
            },
            descriptor: d,
        }
    }

    #[test]
    fn half_partition_and_empty_upper() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let descs = random_descriptors(&mut rng, 40);
        let feats: Vec<Feature> = descs
            .iter()
            .enumerate()
            .map(|(i, d)| feature_at((i * 5) as f32, (i * 2) as f32 + 0.5, *d))
            .collect();
        let img = TrainingImage {
            category: "c",
            width: 200,
            height: 100,
            features: &feats,
        };
        let up = descriptors_by_category(&[img], Some(Half::Upper));
        let low = descriptors_by_category(&[img], Some(Half::Lower));
        let all = descriptors_by_category(&[img], None);
        assert_eq!(up["c"].len() + low["c"].len(), all["c"].len());
        assert_eq!(up["c"].len(), 25);

        let lower_only: Vec<Feature> = descs.iter().map(|d| feature_at(10.0, 80.0, *d)).collect();
        let img = TrainingImage {
            features: &lower_only,
            ..img
        };
        assert!(matches!(
            build_half_vocabulary(&[img], Half::Upper, VocabularyMode::Universal, &toy_params(5), 0),
            Err(Error::TooFewPoints { points: 0, .. })
        ));
        let v = build_half_vocabulary(&[img], Half::Lower, VocabularyMode::Integrated, &toy_params(5), 0).unwrap();
        assert_eq!(v.kind, VocabularyKind::IntegratedHalf(Half::Lower));
        assert_eq!(v.len(), 5);
    }

    fn oracle_nearest(d: &Descriptor, v: &Vocabulary) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, w) in v.words.iter().enumerate() {
            let mut s = 0.0f64;
            for i in 0..DESCRIPTOR_LEN {
                let diff = d.0[i] as f64 - w.0[i] as f64;
                s += diff * diff;
            }
            if s < best_d {
                best_d = s;
                best = j;
            }
        }
        best
    }

    #[test]
    fn quantize_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let v = Vocabulary {
            kind: VocabularyKind::Universal,
            k_per_block: 50,
            categories: vec![],
            words: random_descriptors(&mut rng, 50),
        };
        for d in random_descriptors(&mut rng, 500) {
            assert_eq!(quantize(&d, &v), oracle_nearest(&d, &v));
        }
        assert_eq!(quantize(&v.words[7], &v), 7);
    }

    #[test]
    fn quantize_tie_goes_to_lowest_index() {
        let mut words = vec![Descriptor([0.5; DESCRIPTOR_LEN]); 8];
        let mut probe = [0.3f32; DESCRIPTOR_LEN];
        probe[0] = 0.0;
        let mut w2 = probe;
        w2[5] += 0.25;
        let mut w5 = probe;
        w5[5] -= 0.25;
        words[2] = Descriptor(w2);
        words[5] = Descriptor(w5);
        let v = Vocabulary {
            kind: VocabularyKind::Universal,
            k_per_block: 8,
            categories: vec![],
            words,
        };
        assert_eq!(quantize(&Descriptor(probe), &v), 2);
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let v = Vocabulary {
            kind: VocabularyKind::IntegratedHalf(Half::Upper),
            k_per_block: 2,
            categories: vec!["coast".into(), "forest".into()],
            words: random_descriptors(&mut rng, 4),
        };
        let text = v.to_csv();
        assert!(text.starts_with("#kind=integrated-upper\n#K=2\n#categories=coast;forest\n0,coast,"));
        assert_eq!(Vocabulary::from_csv(&text).unwrap(), v);
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(Vocabulary::from_csv(&truncated).is_err());
    }
}
