//! Where concepts and keypoints fall: region and keypoint counts per concept
//! within a scope (the whole set, a scene category or an image half) and the
//! correlation between the two.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dataset::{half_of_region, region_of_point, Dataset, Half};
use crate::error::{Error, Result};
use crate::keypoints::Keypoint;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnalysisScope {
    All,
    Category(String),
    Half(Half),
}

impl AnalysisScope {
    pub fn name(&self) -> String {
        match self {
            AnalysisScope::All => "all".into(),
            AnalysisScope::Category(c) => c.clone(),
            AnalysisScope::Half(h) => h.name().into(),
        }
    }

    fn region_in(&self, region: usize) -> bool {
        match self {
            AnalysisScope::Half(h) => half_of_region(region) == *h,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub scope: String,
    pub concepts: Vec<String>,
    pub counts: Vec<u64>,
    /// Percent of the scope total; all zero when the scope is empty.
    pub percent: Vec<f64>,
    /// False when the scope held nothing to count.
    pub defined: bool,
    /// Keypoints in excluded regions (keypoint distributions only).
    pub excluded: u64,
}

impl Distribution {
    fn new(scope: &AnalysisScope, concepts: Vec<String>, counts: Vec<u64>, excluded: u64) -> Self {
        let total: u64 = counts.iter().sum();
        let percent = counts
            .iter()
            .map(|&c| {
                if total == 0 {
                    0.0
                } else {
                    100.0 * c as f64 / total as f64
                }
            })
            .collect();
        Distribution {
            scope: scope.name(),
            concepts,
            counts,
            percent,
            defined: total > 0,
            excluded,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn images_in<'a>(
    dataset: &'a Dataset,
    scope: &'a AnalysisScope,
) -> Result<impl Iterator<Item = &'a crate::dataset::LabeledImage> + 'a> {
    if let AnalysisScope::Category(c) = scope {
        if !dataset.categories.values().any(|v| v == c) {
            return Err(Error::UnknownCategory(c.clone()));
        }
    }
    Ok(dataset.images.iter().filter(move |img| match scope {
        AnalysisScope::Category(c) => dataset.category_of(&img.id) == c,
        _ => true,
    }))
}

/// Labeled regions per concept within `scope`.
pub fn concept_distribution(dataset: &Dataset, scope: &AnalysisScope) -> Result<Distribution> {
    let mut counts = vec![0u64; dataset.concepts.len()];
    for img in images_in(dataset, scope)? {
        for (r, c) in img.labeled_regions() {
            if scope.region_in(r) {
                counts[c] += 1;
            }
        }
    }
    Ok(Distribution::new(scope, dataset.concepts.names(), counts, 0))
}

/// Keypoints per concept of the region containing them, within `scope`.
/// `keypoints` maps image ids to their detections.
pub fn keypoint_distribution(
    dataset: &Dataset,
    keypoints: &BTreeMap<String, Vec<Keypoint>>,
    scope: &AnalysisScope,
) -> Result<Distribution> {
    let mut counts = vec![0u64; dataset.concepts.len()];
    let mut excluded = 0u64;
    for img in images_in(dataset, scope)? {
        let kps = keypoints.get(&img.id).ok_or_else(|| Error::CacheMiss(img.id.clone()))?;
        for kp in kps {
            let r = region_of_point(kp.x as f64, kp.y as f64, img.width, img.height)?;
            if !scope.region_in(r) {
                continue;
            }
            match img.labels[r] {
                Some(c) => counts[c] += 1,
                None => excluded += 1,
            }
        }
    }
    Ok(Distribution::new(scope, dataset.concepts.names(), counts, excluded))
}

/// Pearson correlation coefficient.
pub fn correlate(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::ConstantInput);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Rows `scope,concept,count,percent`; undefined scopes get `defined=false`.
pub fn distributions_csv(dists: &[Distribution]) -> String {
    let mut out = String::from("scope,concept,count,percent,defined\n");
    for d in dists {
        for ((name, c), p) in d.concepts.iter().zip(&d.counts).zip(&d.percent) {
            let _ = writeln!(out, "{},{},{},{:.6},{}", d.scope, name, c, p, d.defined);
        }
    }
    out
}

/// Side-by-side percentages of two distributions over the same concepts.
pub fn comparison_csv(a: &Distribution, b: &Distribution, label_a: &str, label_b: &str) -> String {
    let mut out = format!("concept,{label_a},{label_b}\n");
    for (i, name) in a.concepts.iter().enumerate() {
        let _ = writeln!(out, "{},{:.6},{:.6}", name, a.percent[i], b.percent[i]);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub scope_a: String,
    pub scope_b: String,
    /// None when either side is constant.
    pub r: Option<f64>,
}

pub fn correlations_csv(rows: &[Correlation]) -> String {
    let mut out = String::from("scope_a,scope_b,r\n");
    for c in rows {
        let r = c.r.map_or("nan".to_string(), |r| format!("{r:.12}"));
        let _ = writeln!(out, "{},{},{}", c.scope_a, c.scope_b, r);
    }
    out
}

/// All analysis tables, keyed by output file name.
pub fn analysis_tables(
    dataset: &Dataset,
    keypoints: &BTreeMap<String, Vec<Keypoint>>,
) -> Result<BTreeMap<String, String>> {
    let categories: Vec<AnalysisScope> = dataset
        .category_names()
        .into_iter()
        .map(AnalysisScope::Category)
        .collect();
    let halves: Vec<AnalysisScope> = Half::BOTH.into_iter().map(AnalysisScope::Half).collect();
    let concepts_of = |scopes: &[AnalysisScope]| -> Result<Vec<Distribution>> {
        scopes.iter().map(|s| concept_distribution(dataset, s)).collect()
    };
    let keypoints_of = |scopes: &[AnalysisScope]| -> Result<Vec<Distribution>> {
        scopes
            .iter()
            .map(|s| keypoint_distribution(dataset, keypoints, s))
            .collect()
    };

    let all_c = concept_distribution(dataset, &AnalysisScope::All)?;
    let all_k = keypoint_distribution(dataset, keypoints, &AnalysisScope::All)?;
    let cat_c = concepts_of(&categories)?;
    let cat_k = keypoints_of(&categories)?;
    let half_c = concepts_of(&halves)?;
    let half_k = keypoints_of(&halves)?;

    let mut corr = Vec::new();
    let mut push = |a: &Distribution, b: &Distribution| {
        corr.push(Correlation {
            scope_a: format!("concepts/{}", a.scope),
            scope_b: format!("keypoints/{}", b.scope),
            r: correlate(&a.percent, &b.percent).ok(),
        });
    };
    push(&all_c, &all_k);
    for (a, b) in cat_c.iter().zip(&cat_k) {
        push(a, b);
    }
    for (a, b) in half_c.iter().zip(&half_k) {
        push(a, b);
    }

    let mut out = BTreeMap::new();
    out.insert(
        "keypoints-all.csv".into(),
        distributions_csv(std::slice::from_ref(&all_k)),
    );
    out.insert(
        "concepts-vs-keypoints.csv".into(),
        comparison_csv(&all_c, &all_k, "concepts", "keypoints"),
    );
    out.insert("concepts-by-category.csv".into(), distributions_csv(&cat_c));
    out.insert("keypoints-by-category.csv".into(), distributions_csv(&cat_k));
    out.insert("concepts-by-half.csv".into(), distributions_csv(&half_c));
    out.insert("keypoints-by-half.csv".into(), distributions_csv(&half_k));
    out.insert("correlations.csv".into(), correlations_csv(&corr));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ConceptSet, LabeledImage};
    use image::RgbImage;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp(x: f32, y: f32) -> Keypoint {
        Keypoint {
            x,
            y,
            scale: 2.0,
            orientation: 0.0,
        }
    }

    /// Two 100x100 images: "a" (coast) is sky on top and sand below with
    /// region 99 excluded; "b" (forest) is all foliage.
    fn toy() -> (Dataset, BTreeMap<String, Vec<Keypoint>>) {
        let mut la: Vec<Option<usize>> = (0..100).map(|r| Some(if r < 50 { 0 } else { 8 })).collect();
        la[99] = None;
        let lb = vec![Some(4); 100];
        let images = vec![
            LabeledImage::in_memory("a", RgbImage::new(100, 100), la).unwrap(),
            LabeledImage::in_memory("b", RgbImage::new(100, 100), lb).unwrap(),
        ];
        let cats = [("a", "coast"), ("b", "forest")]
            .into_iter()
            .map(|(i, c)| (i.to_string(), c.to_string()))
            .collect();
        let ds = Dataset::new(images, cats, ConceptSet::default()).unwrap();
        let mut kps = BTreeMap::new();
        kps.insert(
            "a".to_string(),
            vec![kp(5.0, 5.0), kp(6.0, 5.0), kp(5.0, 95.0), kp(95.0, 95.0)],
        );
        kps.insert("b".to_string(), vec![kp(50.0, 50.0), kp(1.0, 1.0)]);
        (ds, kps)
    }

    #[test]
    fn concept_counts() {
        let (ds, _) = toy();
        let all = concept_distribution(&ds, &AnalysisScope::All).unwrap();
        assert_eq!(all.counts[0], 50);
        assert_eq!(all.counts[8], 49);
        assert_eq!(all.counts[4], 100);
        assert!((all.percent.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        let mut sum = vec![0; 9];
        for c in ["coast", "forest"] {
            let d = concept_distribution(&ds, &AnalysisScope::Category(c.into())).unwrap();
            sum.iter_mut().zip(&d.counts).for_each(|(s, v)| *s += v);
        }
        assert_eq!(sum, all.counts);
        assert!(matches!(
            concept_distribution(&ds, &AnalysisScope::Category("desert".into())),
            Err(Error::UnknownCategory(_))
        ));
        let up = concept_distribution(&ds, &AnalysisScope::Half(Half::Upper)).unwrap();
        assert_eq!(up.counts[8], 0);
    }

    #[test]
    fn keypoint_counts_match_hand_enumeration() {
        let (ds, kps) = toy();
        let all = keypoint_distribution(&ds, &kps, &AnalysisScope::All).unwrap();
        assert_eq!(all.counts[0], 2);
        assert_eq!(all.counts[8], 1);
        assert_eq!(all.counts[4], 2);
        assert_eq!(all.excluded, 1);
        assert_eq!(all.total() + all.excluded, 6);
        let low = keypoint_distribution(&ds, &kps, &AnalysisScope::Half(Half::Lower)).unwrap();
        assert_eq!((low.counts[8], low.counts[4], low.excluded), (1, 1, 1));

        let mut missing = kps.clone();
        missing.remove("b");
        assert!(matches!(
            keypoint_distribution(&ds, &missing, &AnalysisScope::All),
            Err(Error::CacheMiss(id)) if id == "b"
        ));
    }

    #[test]
    fn empty_scope_is_flagged() {
        let (ds, kps) = toy();
        let mut none = kps.clone();
        none.values_mut().for_each(Vec::clear);
        let d = keypoint_distribution(&ds, &none, &AnalysisScope::All).unwrap();
        assert!(!d.defined);
        assert!(d.percent.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn correlation_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((correlate(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((correlate(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(correlate(&a, &[2.0; 4]), Err(Error::ConstantInput)));
        assert!(correlate(&[1.0], &[1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..9).map(|_| rng.gen::<f64>() * 100.0).collect();
            let y: Vec<f64> = (0..9).map(|_| rng.gen::<f64>() * 100.0).collect();
            let r = correlate(&x, &y).unwrap();
            assert!((r - correlate(&y, &x).unwrap()).abs() < 1e-15);
            let scaled: Vec<f64> = y.iter().map(|v| 3.0 * v + 7.0).collect();
            assert!((r - correlate(&x, &scaled).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn tables() {
        let (ds, kps) = toy();
        let t = analysis_tables(&ds, &kps).unwrap();
        assert_eq!(t.len(), 7);
        assert!(t["correlations.csv"].starts_with("scope_a,scope_b,r\nconcepts/all,keypoints/all,"));
        assert_eq!(t["concepts-by-category.csv"].lines().count(), 1 + 2 * 9);
    }
}
