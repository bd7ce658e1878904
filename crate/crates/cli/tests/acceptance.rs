//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Set `REGIONBOW_DATASET` to a directory holding `images/`, `labels/` and
//! `categories.txt` to run the ordinal checks on a real dataset (slow: all 56
//! experiment cells).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionbow::analysis::{concept_distribution, correlate, keypoint_distribution, AnalysisScope};
use regionbow::annotators::{smo_binary, svm_predict, svm_train, FeatureGram, GramSource, KernelKind, SmoParams};
use regionbow::cbow::{build_half_region_cbows, build_region_cbows};
use regionbow::dataset::{grid_regions, half_of_region, load_dataset, region_of_point, Dataset, Half, GRID, REGIONS};
use regionbow::evaluation::{cross_validate, make_folds, FeatureCombo, OracleAnnotator, Part};
use regionbow::features::{dwt_texture, haar2d, inverse_haar2d, FeatureKind, FeatureVector, HsvRegion, Plane};
use regionbow::keypoints::{Descriptor, Feature, Keypoint, DESCRIPTOR_LEN};
use regionbow::pipeline;
use regionbow::vocabulary::{build_vocabulary, kmeans, KMeansParams, Vocabulary, VocabularyKind, VocabularyParams};
use regionbow_cli::commands::{self, config_for_dataset};
use regionbow_cli::Config;

type Check = Result<String, String>;

struct Report {
    failed: usize,
    skipped: usize,
    passed: usize,
}

impl Report {
    fn line(&mut self, name: &str, outcome: Check) {
        match outcome {
            Ok(detail) => {
                self.passed += 1;
                println!("PASS  {name}: {detail}");
            }
            Err(detail) => {
                self.failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }

    fn skip(&mut self, name: &str, why: &str) {
        self.skipped += 1;
        println!("SKIP  {name}: {why}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(label: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xACCE_0000 + label)
}

// ---------------------------------------------------------------- properties

fn tiling() -> Check {
    let mut r = rng(1);
    for _ in 0..1000 {
        let (w, h) = (r.gen_range(GRID as u32..5000), r.gen_range(GRID as u32..5000));
        let rects = grid_regions(w, h).map_err(|e| e.to_string())?;
        ensure(rects.len() == REGIONS, || format!("{w}x{h}: {} rects", rects.len()))?;
        // the last `len % 10` cells along an axis are one pixel wider
        let start = |len: u32, i: usize| {
            let (base, wide_from) = (len / GRID as u32, GRID as u32 - len % GRID as u32);
            let i = i as u32;
            i * base + i.saturating_sub(wide_from)
        };
        let mut area = 0u64;
        for (i, rect) in rects.iter().enumerate() {
            let (row, col) = (i / GRID, i % GRID);
            ensure(rect.index == i && rect.row == row && rect.col == col, || {
                format!("{w}x{h}: index {i}")
            })?;
            let (x1, x2) = (start(w, col), start(w, col + 1));
            let (y1, y2) = (start(h, row), start(h, row + 1));
            ensure((rect.x1, rect.y1, rect.x2, rect.y2) == (x1, y1, x2, y2), || {
                format!("{w}x{h}: region {i} is {rect:?}, expected ({x1},{y1})-({x2},{y2})")
            })?;
            area += rect.area();
        }
        ensure(area == w as u64 * h as u64, || format!("{w}x{h}: area {area}"))?;
    }
    Ok("1000 random sizes tile exactly, remainder spread over the trailing rows and columns".into())
}

fn point_lookup() -> Check {
    let mut r = rng(2);
    for i in 0..10_000 {
        let (w, h) = (r.gen_range(GRID as u32..3000), r.gen_range(GRID as u32..3000));
        let (x, y) = if i % 2 == 0 {
            (r.gen_range(0.0..w as f64), r.gen_range(0.0..h as f64))
        } else {
            (r.gen_range(0..w) as f64, r.gen_range(0..h) as f64)
        };
        let rects = grid_regions(w, h).map_err(|e| e.to_string())?;
        let hits: Vec<usize> = rects.iter().filter(|q| q.contains(x, y)).map(|q| q.index).collect();
        let got = region_of_point(x, y, w, h).map_err(|e| e.to_string())?;
        ensure(hits == [got], || {
            format!("({x},{y}) in {w}x{h}: scan {hits:?}, lookup {got}")
        })?;
    }
    Ok("10000 random points agree with a rectangle scan".into())
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    let (u1, u2): (f64, f64) = (r.gen_range(f64::EPSILON..1.0), r.gen());
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn kmeans_checks() -> Check {
    let mut r = rng(3);
    for inst in 0..20 {
        let n = r.gen_range(50..300);
        let d = r.gen_range(2..16);
        let k = r.gen_range(2..10);
        let pts: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..d).map(|_| r.gen_range(0.0..1.0)).collect())
            .collect();
        let res = kmeans(&pts, &KMeansParams::new(k, inst)).map_err(|e| e.to_string())?;
        for w in res.objective_trace.windows(2) {
            ensure(w[1] <= w[0] * (1.0 + 1e-12), || {
                format!("instance {inst}: objective rose {} -> {}", w[0], w[1])
            })?;
        }
    }

    let pts: Vec<Vec<f32>> = (0..137)
        .map(|_| (0..5).map(|_| r.gen_range(-3.0..3.0)).collect())
        .collect();
    let res = kmeans(&pts, &KMeansParams::new(1, 9)).map_err(|e| e.to_string())?;
    for j in 0..5 {
        let mean = pts.iter().map(|p| p[j] as f64).sum::<f64>() / pts.len() as f64;
        ensure((res.centroids[0][j] - mean).abs() <= 1e-9, || {
            format!("K=1 centroid {j} off mean")
        })?;
    }

    let (n, sigma) = (400usize, 1.0);
    let centers = [[-10.0, 0.0], [10.0, 5.0]];
    let mut blobs = Vec::new();
    for c in centers {
        for _ in 0..n {
            blobs.push(vec![
                (c[0] + sigma * normal(&mut r)) as f32,
                (c[1] + sigma * normal(&mut r)) as f32,
            ]);
        }
    }
    let res = kmeans(&blobs, &KMeansParams::new(2, 4)).map_err(|e| e.to_string())?;
    let bound = 3.0 * sigma / (n as f64).sqrt();
    for c in centers {
        let best = res
            .centroids
            .iter()
            .map(|m| (m[0] - c[0]).abs().max((m[1] - c[1]).abs()))
            .fold(f64::INFINITY, f64::min);
        ensure(best <= bound, || {
            format!("blob {c:?} recovered within {best:.4}, bound {bound:.4}")
        })?;
    }
    Ok("20 monotone traces, K=1 mean within 1e-9, two blobs within 3σ/√n".into())
}

fn random_descriptor(r: &mut ChaCha8Rng) -> Descriptor {
    let mut d = [0.0f32; DESCRIPTOR_LEN];
    d.iter_mut().for_each(|v| *v = r.gen_range(0.0..0.3));
    Descriptor(d)
}

fn quantize_checks() -> Check {
    let mut r = rng(4);
    let mut words: Vec<Descriptor> = (0..40).map(|_| random_descriptor(&mut r)).collect();
    // exact duplicates force ties
    for i in 0..10 {
        words.push(words[i * 3]);
    }
    let vocab = Vocabulary {
        kind: VocabularyKind::Universal,
        k_per_block: words.len(),
        categories: Vec::new(),
        words: words.clone(),
    };
    let mut ties = 0;
    for i in 0..500 {
        let d = if i % 5 == 0 {
            words[(i / 5) % 10 * 3]
        } else {
            random_descriptor(&mut r)
        };
        let mut best = (0usize, f64::INFINITY);
        for (j, w) in words.iter().enumerate() {
            let dist: f64 = d.0.iter().zip(&w.0).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            if dist < best.1 {
                best = (j, dist);
            }
        }
        if i % 5 == 0 {
            ties += 1;
        }
        let got = vocab.quantize(&d);
        ensure(got == best.0, || {
            format!("descriptor {i}: quantize {got}, exhaustive {}", best.0)
        })?;
    }
    Ok(format!(
        "500 descriptors match exhaustive search ({ties} exact ties to the lowest index)"
    ))
}

fn in_half(f: &Feature, w: u32, h: u32, half: Half) -> bool {
    region_of_point(f.keypoint.x as f64, f.keypoint.y as f64, w, h)
        .map(half_of_region)
        .ok()
        == Some(half)
}

fn cbow_conservation(ds: &Dataset, feats: &[Vec<Feature>]) -> Check {
    let params = VocabularyParams {
        k: 20,
        ..VocabularyParams::default()
    };
    let images = pipeline::training_images(ds, feats);
    let build = |kind| build_vocabulary(&images, kind, &params, 5).map_err(|e| e.to_string());
    let whole = build(VocabularyKind::Universal)?;
    let up = build(VocabularyKind::UniversalHalf(Half::Upper))?;
    let low = build(VocabularyKind::UniversalHalf(Half::Lower))?;
    let mut total = 0;
    for (img, f) in ds.images.iter().zip(feats) {
        let hists = build_region_cbows(&img.id, img.width, img.height, f, &whole).map_err(|e| e.to_string())?;
        let mass: u64 = hists.iter().map(|h| h.total()).sum();
        ensure(mass == f.len() as u64, || {
            format!("{}: mass {mass}, keypoints {}", img.id, f.len())
        })?;
        let halves =
            build_half_region_cbows(&img.id, img.width, img.height, f, &up, &low).map_err(|e| e.to_string())?;
        for half in Half::BOTH {
            let mass: u64 = halves
                .iter()
                .filter(|h| half_of_region(h.region) == half)
                .map(|h| h.total())
                .sum();
            let expect = f.iter().filter(|k| in_half(k, img.width, img.height, half)).count() as u64;
            ensure(mass == expect, || {
                format!("{} {half:?}: mass {mass}, keypoints {expect}", img.id)
            })?;
        }
        total += f.len();
    }
    Ok(format!(
        "{} images, {total} keypoints conserved per image and per half",
        ds.images.len()
    ))
}

fn hik_gram() -> Check {
    let mut r = rng(6);
    let vecs: Vec<FeatureVector> = (0..50)
        .map(|_| {
            let v = (0..30)
                .map(|_| {
                    if r.gen_bool(0.3) {
                        0.0
                    } else {
                        r.gen_range(0.0..10.0f64).floor()
                    }
                })
                .collect();
            FeatureVector::new(FeatureKind::Cbow, v)
        })
        .collect();
    let g = FeatureGram::new(KernelKind::HistogramIntersection, &vecs);
    let n = vecs.len();
    let m = DMatrix::from_fn(n, n, |i, j| g.eval(i, j));
    ensure(m == m.transpose(), || "Gram matrix not symmetric".into())?;
    let trace = m.trace();
    let min = m.symmetric_eigenvalues().min();
    ensure(min >= -1e-8 * trace, || {
        format!("min eigenvalue {min:e}, trace {trace}")
    })?;
    Ok(format!("symmetric, min eigenvalue {min:.3e} ≥ -1e-8·trace"))
}

fn smo_checks() -> Check {
    let mut r = rng(7);
    let n = 80;
    let vecs: Vec<FeatureVector> = (0..n)
        .map(|i| {
            let shift = if i < n / 2 { 0.0 } else { 1.5 };
            let v = (0..12)
                .map(|j| (r.gen_range(0.0..3.0f64) + if j < 6 { shift } else { 0.0 }).max(0.0))
                .collect();
            FeatureVector::new(FeatureKind::Cbow, v)
        })
        .collect();
    let y: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { -1.0 }).collect();
    let g = FeatureGram::new(KernelKind::HistogramIntersection, &vecs);
    let idx: Vec<usize> = (0..n).collect();
    let params = SmoParams {
        record_trace: true,
        ..SmoParams::default()
    };
    let c = 1.0;
    let sol = smo_binary(&g, &idx, &y, c, &params).map_err(|e| e.to_string())?;
    for w in sol.dual_trace.windows(2) {
        ensure(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), || {
            format!("dual fell {} -> {}", w[0], w[1])
        })?;
    }
    // maximal violating pair from scratch
    let grad: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| sol.alpha[j] * y[i] * y[j] * g.eval(i, j)).sum::<f64>() - 1.0)
        .collect();
    let (mut up, mut low) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..n {
        let v = -y[i] * grad[i];
        let a = sol.alpha[i];
        let in_up = (y[i] > 0.0 && a < c) || (y[i] < 0.0 && a > 0.0);
        let in_low = (y[i] > 0.0 && a > 0.0) || (y[i] < 0.0 && a < c);
        if in_up {
            up = up.max(v);
        }
        if in_low {
            low = low.min(v);
        }
    }
    let residual = up - low;
    ensure(residual <= 1e-3, || format!("KKT residual {residual:e}"))?;

    let toy: Vec<FeatureVector> = (0..40)
        .map(|i| {
            let hot = if i % 2 == 0 { 0 } else { 4 };
            let mut v = vec![0.0; 8];
            for (j, x) in v.iter_mut().enumerate() {
                *x = if (hot..hot + 4).contains(&j) {
                    5.0 + r.gen_range(0.0..2.0)
                } else {
                    r.gen_range(0.0..0.5)
                };
            }
            FeatureVector::new(FeatureKind::Cbow, v)
        })
        .collect();
    let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let model = svm_train(&toy, &labels, 10.0, &SmoParams::default()).map_err(|e| e.to_string())?;
    let correct = toy
        .iter()
        .zip(&labels)
        .filter(|(v, l)| svm_predict(&model, v).ok() == Some(**l))
        .count();
    ensure(correct == toy.len(), || {
        format!("separable toy {correct}/{}", toy.len())
    })?;
    Ok(format!(
        "dual monotone over {} steps, KKT residual {residual:.2e}, separable toy 100%",
        sol.dual_trace.len()
    ))
}

fn haar_checks() -> Check {
    let mut r = rng(8);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (w, h) = (2 * r.gen_range(1..40), 2 * r.gen_range(1..40));
        let p = Plane {
            width: w,
            height: h,
            data: (0..w * h).map(|_| r.gen_range(-1.0..1.0)).collect(),
        };
        let lv = haar2d(&p);
        let back = inverse_haar2d(&lv);
        let e: f64 = p.data.iter().map(|v| v * v).sum();
        let err: f64 = p.data.iter().zip(&back.data).map(|(a, b)| (a - b).powi(2)).sum();
        let bands: f64 = [&lv.ll, &lv.lh, &lv.hl, &lv.hh]
            .iter()
            .flat_map(|b| b.data.iter())
            .map(|v| v * v)
            .sum();
        worst.0 = worst.0.max((err / e).sqrt());
        worst.1 = worst.1.max((bands - e).abs() / e);
    }
    ensure(worst.0 <= 1e-9, || format!("reconstruction error {:e}", worst.0))?;
    ensure(worst.1 <= 1e-9, || format!("Parseval error {:e}", worst.1))?;
    let flat = HsvRegion::from_pixels(17, 13, &vec![[120, 80, 200]; 17 * 13]);
    let tex = dwt_texture(&flat).map_err(|e| e.to_string())?;
    ensure(tex.values.len() == 18 && tex.values.iter().all(|v| *v == 0.0), || {
        format!("constant region gave {:?}", tex.values)
    })?;
    Ok(format!(
        "reconstruction {:.1e}, Parseval {:.1e}, constant region → 18 zeros",
        worst.0, worst.1
    ))
}

fn fold_checks() -> Check {
    let mut r = rng(9);
    let mut labels = Vec::new();
    for c in 0..6 {
        let count = r.gen_range(10..400);
        labels.extend(std::iter::repeat_n(c, count));
    }
    let n = labels.len();
    let plan = make_folds(&labels, 10, 17).map_err(|e| e.to_string())?;
    let mut seen = vec![0usize; n];
    for (f, fold) in plan.folds.iter().enumerate() {
        for &i in fold {
            seen[i] += 1;
            ensure(plan.fold_of[i] == f, || format!("fold_of[{i}] disagrees"))?;
        }
    }
    ensure(seen.iter().all(|&s| s == 1), || {
        "folds do not partition the regions".into()
    })?;
    for c in 0..6 {
        let per: Vec<usize> = plan
            .folds
            .iter()
            .map(|f| f.iter().filter(|&&i| labels[i] == c).count())
            .collect();
        let (lo, hi) = (per.iter().min().unwrap(), per.iter().max().unwrap());
        ensure(hi - lo <= 1, || format!("concept {c} spread {per:?}"))?;
    }
    let cv = cross_validate(&labels, 6, &plan, &OracleAnnotator(&labels)).map_err(|e| e.to_string())?;
    ensure(cv.matrix.total() == n as u64 && cv.matrix.trace() == n as u64, || {
        format!("{} predictions for {n} regions", cv.matrix.total())
    })?;
    Ok(format!(
        "{n} regions, exact partition, each tested once, per-fold spread ≤ 1"
    ))
}

// --------------------------------------------------------------- synthetic

struct Synthetic {
    _dir: tempfile::TempDir,
    cfg: Config,
}

const SYNTH_SEED: u64 = 2024;

fn synthetic_pipeline(root: &Path) -> Result<Config, String> {
    let gen = Config {
        out: root.join("ds"),
        seed: SYNTH_SEED,
        synth_images: 60,
        synth_concepts: 3,
        ..Config::default()
    };
    commands::synth(&gen).map_err(|e| e.to_string())?;
    let mut cfg = config_for_dataset(&root.join("ds"), &root.join("ws"));
    cfg.seed = SYNTH_SEED;
    cfg.set("kind", "integrated").map_err(|e| e.to_string())?;
    commands::extract(&cfg).map_err(|e| e.to_string())?;
    commands::vocab(&cfg).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn run_set(cfg: &Config, set: u8) -> Result<(f64, PathBuf), String> {
    let mut cfg = cfg.clone();
    cfg.set = set;
    let out = commands::run(&cfg).map_err(|e| e.to_string())?;
    Ok((out.result.metrics.overall / 100.0, out.dir.join("metrics.csv")))
}

fn load_synthetic(s: &Synthetic) -> Result<(Dataset, Vec<Vec<Feature>>), String> {
    let c = &s.cfg;
    let ds = load_dataset(
        c.images.as_deref().unwrap(),
        c.labels.as_deref().unwrap(),
        c.categories.as_deref().unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let feats = pipeline::extract_all(&ds, &c.sift).map_err(|e| e.to_string())?;
    Ok((ds, feats))
}

fn two_pass_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn analysis_checks(ds: &Dataset, feats: &[Vec<Feature>]) -> Check {
    let kps: BTreeMap<String, Vec<Keypoint>> = ds
        .images
        .iter()
        .zip(feats)
        .map(|(i, f)| (i.id.clone(), f.iter().map(|f| f.keypoint).collect()))
        .collect();
    let mut scopes = vec![AnalysisScope::All];
    scopes.extend(ds.category_names().into_iter().map(AnalysisScope::Category));
    scopes.extend(Half::BOTH.map(AnalysisScope::Half));
    let mut worst: f64 = 0.0;
    let mut concept = Vec::new();
    let mut keypoint = Vec::new();
    for s in &scopes {
        let c = concept_distribution(ds, s).map_err(|e| e.to_string())?;
        let k = keypoint_distribution(ds, &kps, s).map_err(|e| e.to_string())?;
        let r = correlate(&c.percent, &k.percent).map_err(|e| format!("{}: {e}", s.name()))?;
        worst = worst.max((r - two_pass_pearson(&c.percent, &k.percent)).abs());
        concept.push(c);
        keypoint.push(k);
    }
    ensure(worst <= 1e-12, || {
        format!("Pearson differs from two-pass oracle by {worst:e}")
    })?;

    let total_kp: u64 = feats.iter().map(|f| f.len() as u64).sum();
    let labeled = ds.labeled_region_count() as u64;
    ensure(keypoint[0].total() + keypoint[0].excluded == total_kp, || {
        format!(
            "keypoints {} + {} excluded != {total_kp}",
            keypoint[0].total(),
            keypoint[0].excluded
        )
    })?;
    ensure(concept[0].total() == labeled, || {
        format!("concept counts {} != {labeled}", concept[0].total())
    })?;
    let ncat = scopes.len() - 3;
    for dists in [&concept, &keypoint] {
        let all = &dists[0].counts;
        let sum = |range: std::ops::Range<usize>| -> Vec<u64> {
            (0..all.len())
                .map(|j| dists[range.clone()].iter().map(|d| d.counts[j]).sum())
                .collect()
        };
        ensure(&sum(1..1 + ncat) == all, || "category counts do not add up".into())?;
        ensure(&sum(1 + ncat..scopes.len()) == all, || {
            "half counts do not add up".into()
        })?;
        for d in dists.iter().filter(|d| d.defined) {
            let p: f64 = d.percent.iter().sum();
            ensure((p - 100.0).abs() < 1e-9, || {
                format!("{} percentages sum to {p}", d.scope)
            })?;
        }
    }
    Ok(format!(
        "{} scopes, |r - oracle| ≤ {worst:.1e}, category and half counts conserved",
        scopes.len()
    ))
}

// ------------------------------------------------------------- real dataset

fn ordinal_checks(root: &Path) -> Vec<(&'static str, Check)> {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut cfg = config_for_dataset(root, tmp.path());
    cfg.set("kind", "all").expect("kind");
    let prep = commands::extract(&cfg)
        .and_then(|_| commands::vocab(&cfg))
        .map_err(|e| e.to_string());
    if let Err(e) = prep {
        return vec![("dataset ordinal checks", Err(e))];
    }
    let mut acc: BTreeMap<(u8, String), f64> = BTreeMap::new();
    for set in 1..=4u8 {
        for combo in FeatureCombo::all() {
            let mut c = cfg.clone();
            c.set = set;
            c.features = combo.name();
            match commands::run(&c) {
                Ok(o) => {
                    acc.insert((set, combo.name()), o.result.metrics.overall);
                }
                Err(e) => return vec![("dataset ordinal checks", Err(format!("set {set} {combo}: {e}")))],
            }
        }
    }
    let get = |s: u8, c: &str| acc[&(s, c.to_string())];
    let combos = FeatureCombo::all();

    let a = combos
        .iter()
        .filter(|c| get(2, &c.name()) < get(1, &c.name()))
        .map(|c| c.name())
        .collect::<Vec<_>>();
    let b = combos
        .iter()
        .filter(|c| c.parts().contains(&Part::Ibow))
        .filter_map(|c| {
            let u = c.name().replace("IBOW", "UBOW");
            (get(2, &c.name()) < get(2, &u)).then(|| c.name())
        })
        .collect::<Vec<_>>();
    let c = combos
        .iter()
        .filter(|c| c.parts().contains(&Part::Ibow))
        .flat_map(|c| [(3u8, 1u8), (4, 2)].map(|(h, w)| (c.name(), h, w)))
        .filter(|(n, h, w)| get(*h, n) < get(*w, n))
        .map(|(n, h, _)| format!("{n} set {h}"))
        .collect::<Vec<_>>();
    let best = acc
        .iter()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(k, v)| (k.clone(), *v))
        .unwrap();
    let headline = get(4, "IBOW+ColHist+Wav");
    let d_ok = best.0 == (4, "IBOW+ColHist+Wav".to_string()) && (headline - 94.02).abs() <= 5.0;
    let list = |v: Vec<String>, what: &str| -> Check {
        if v.is_empty() {
            Ok(what.to_string())
        } else {
            Err(format!("violated for {}", v.join(", ")))
        }
    };
    vec![
        ("dataset (a) SVM ≥ KNN for all 14 combos", list(a, "holds")),
        ("dataset (b) IBOW ≥ UBOW under SVM, whole image", list(b, "holds")),
        ("dataset (c) halves IBOW ≥ whole-image IBOW", list(c, "holds")),
        (
            "dataset (d) best cell IBOW+ColHist+Wav SVM halves within ±5 of 94.02",
            if d_ok {
                Ok(format!("{headline:.2}%"))
            } else {
                Err(format!("best {:?} at {:.2}%, headline {headline:.2}%", best.0, best.1))
            },
        ),
    ]
}

fn main() {
    let mut rep = Report {
        failed: 0,
        skipped: 0,
        passed: 0,
    };
    println!("acceptance suite");

    let props = Instant::now();
    rep.line("property 1 grid tiling", tiling());
    rep.line("property 2 region_of_point", point_lookup());
    rep.line("property 3 k-means", kmeans_checks());
    rep.line("property 4 quantize", quantize_checks());

    let dir = tempfile::tempdir().expect("tempdir");
    let e2e = Instant::now();
    let synthetic = synthetic_pipeline(dir.path()).map(|cfg| Synthetic { _dir: dir, cfg });
    let prep_time = e2e.elapsed();

    let loaded = synthetic.as_ref().map_err(Clone::clone).and_then(load_synthetic);
    match &loaded {
        Ok((ds, feats)) => rep.line("property 5 CBOW mass conservation", cbow_conservation(ds, feats)),
        Err(e) => rep.line("property 5 CBOW mass conservation", Err(e.clone())),
    }
    rep.line("property 6 HIK Gram PSD", hik_gram());
    rep.line("property 7 SMO solver", smo_checks());
    rep.line("property 8 Haar DWT", haar_checks());
    rep.line("property 9 fold plan", fold_checks());
    let props_time = props.elapsed() - prep_time;

    let e2e = Instant::now();
    let svm = synthetic
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|s| run_set(&s.cfg, 2));
    let knn = synthetic
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|s| run_set(&s.cfg, 1));
    let e2e_time = e2e.elapsed() + prep_time;

    let det_dir = tempfile::tempdir().expect("tempdir");
    let second = synthetic_pipeline(det_dir.path()).and_then(|cfg| run_set(&cfg, 2));
    rep.line(
        "property 10 determinism",
        match (&svm, &second) {
            (Ok((_, a)), Ok((_, b))) => {
                let (x, y) = (fs::read(a).unwrap_or_default(), fs::read(b).unwrap_or_default());
                if !x.is_empty() && x == y {
                    Ok("two full synthetic pipeline runs give byte-identical metrics.csv".into())
                } else {
                    Err("metrics.csv differs between runs".into())
                }
            }
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        },
    );
    rep.line(
        "property suite time < 5 min",
        if props_time < Duration::from_secs(300) {
            Ok(format!("{:.1}s", props_time.as_secs_f64()))
        } else {
            Err(format!("{:.1}s", props_time.as_secs_f64()))
        },
    );

    match (&svm, &knn) {
        (Ok((s, _)), Ok((k, _))) => {
            let (s, k) = (*s, *k);
            rep.line(
                "synthetic SVM IBOW+ColHist+Wav ≥ 0.90",
                if s >= 0.90 {
                    Ok(format!("{s:.4}"))
                } else {
                    Err(format!("{s:.4}"))
                },
            );
            rep.line(
                "synthetic KNN IBOW+ColHist+Wav ≥ 0.70",
                if k >= 0.70 {
                    Ok(format!("{k:.4}"))
                } else {
                    Err(format!("{k:.4}"))
                },
            );
            rep.line(
                "synthetic SVM > KNN",
                if s > k {
                    Ok(format!("{s:.4} > {k:.4}"))
                } else {
                    Err(format!("{s:.4} ≤ {k:.4}"))
                },
            );
        }
        (Err(e), _) | (_, Err(e)) => {
            for name in ["synthetic SVM ≥ 0.90", "synthetic KNN ≥ 0.70", "synthetic SVM > KNN"] {
                rep.line(name, Err(e.clone()));
            }
        }
    }
    rep.line(
        "synthetic end-to-end time < 10 min",
        if e2e_time < Duration::from_secs(600) {
            Ok(format!("{:.1}s", e2e_time.as_secs_f64()))
        } else {
            Err(format!("{:.1}s", e2e_time.as_secs_f64()))
        },
    );

    match &loaded {
        Ok((ds, feats)) => rep.line("analysis Pearson and conservation", analysis_checks(ds, feats)),
        Err(e) => rep.line("analysis Pearson and conservation", Err(e.clone())),
    }

    match std::env::var_os("REGIONBOW_DATASET") {
        Some(root) => {
            for (name, outcome) in ordinal_checks(Path::new(&root)) {
                rep.line(name, outcome);
            }
        }
        None => {
            for name in [
                "dataset (a) SVM ≥ KNN for all 14 combos",
                "dataset (b) IBOW ≥ UBOW under SVM, whole image",
                "dataset (c) halves IBOW ≥ whole-image IBOW",
                "dataset (d) best cell IBOW+ColHist+Wav SVM halves within ±5 of 94.02",
            ] {
                rep.skip(name, "set REGIONBOW_DATASET to run");
            }
        }
    }

    println!(
        "acceptance: {} passed, {} failed, {} skipped",
        rep.passed, rep.failed, rep.skipped
    );
    if rep.failed > 0 {
        std::process::exit(1);
    }
}
