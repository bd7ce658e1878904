//! End-to-end plumbing from a loaded dataset to experiment inputs.

use std::collections::{BTreeMap, BTreeSet};

use crate::cbow::{build_half_region_cbows, build_region_cbows, CbowHistogram};
use crate::dataset::{grid_regions, half_of_region, region_of_point, Dataset, Half};
use crate::error::{Error, Result};
use crate::evaluation::{BowSource, ExperimentData, FixedBows, Part, RegionSample, Scope};
use crate::features::{low_level_features, FeatureKind, FeatureVector};
use crate::keypoints::{detect_and_describe, Feature, SiftParams};
use crate::vocabulary::{
    build_vocabulary, TrainingImage, Vocabulary, VocabularyKind, VocabularyMode, VocabularyParams,
};
use crate::{par, seed};

/// Keypoints and descriptors of every image, in dataset order.
pub fn extract_all(dataset: &Dataset, params: &SiftParams) -> Result<Vec<Vec<Feature>>> {
    par::map(&dataset.images, |img| -> Result<Vec<Feature>> {
        let rgb = img.rgb()?;
        detect_and_describe(&rgb, params)
    })
    .into_iter()
    .collect()
}

pub fn training_images<'a>(dataset: &'a Dataset, features: &'a [Vec<Feature>]) -> Vec<TrainingImage<'a>> {
    dataset
        .images
        .iter()
        .zip(features)
        .map(|(img, f)| TrainingImage {
            category: dataset.category_of(&img.id),
            width: img.width,
            height: img.height,
            features: f,
        })
        .collect()
}

/// Seed of the vocabulary of `kind` under `master`.
pub fn vocabulary_seed(master: u64, kind: VocabularyKind) -> u64 {
    seed::derive(master, &format!("vocab/{kind}"))
}

pub fn build_vocabularies(
    dataset: &Dataset,
    features: &[Vec<Feature>],
    kinds: &[VocabularyKind],
    params: &VocabularyParams,
    master: u64,
) -> Result<BTreeMap<String, Vocabulary>> {
    let images = training_images(dataset, features);
    let mut out = BTreeMap::new();
    for &k in kinds {
        log::info!("building {k} vocabulary");
        out.insert(
            k.name(),
            build_vocabulary(&images, k, params, vocabulary_seed(master, k))?,
        );
    }
    Ok(out)
}

/// Vocabulary kinds a scope needs for the given bag-of-words parts.
pub fn kinds_for(scope: Scope, parts: impl IntoIterator<Item = Part>) -> Vec<VocabularyKind> {
    let mut out = Vec::new();
    for p in parts {
        let mode = match p {
            Part::Ibow => VocabularyMode::Integrated,
            Part::Ubow => VocabularyMode::Universal,
            _ => continue,
        };
        match scope {
            Scope::Whole => out.push(VocabularyKind::new(mode, None)),
            Scope::Halves => {
                out.extend(Half::BOTH.map(|h| VocabularyKind::new(mode, Some(h))));
            }
        }
    }
    out.dedup();
    out
}

fn get(vocabs: &BTreeMap<String, Vocabulary>, kind: VocabularyKind) -> Result<&Vocabulary> {
    vocabs
        .get(&kind.name())
        .ok_or_else(|| Error::InvalidConfig(format!("{kind} vocabulary not built")))
}

/// Region histograms of every image against the vocabularies of `mode`.
pub fn region_cbows(
    dataset: &Dataset,
    features: &[Vec<Feature>],
    vocabs: &BTreeMap<String, Vocabulary>,
    mode: VocabularyMode,
    scope: Scope,
) -> Result<Vec<Vec<CbowHistogram>>> {
    let pairs: Vec<(usize, &Vec<Feature>)> = features.iter().enumerate().collect();
    match scope {
        Scope::Whole => {
            let v = get(vocabs, VocabularyKind::new(mode, None))?;
            par::map(&pairs, |&(i, f)| {
                let img = &dataset.images[i];
                build_region_cbows(&img.id, img.width, img.height, f, v)
            })
        }
        Scope::Halves => {
            let up = get(vocabs, VocabularyKind::new(mode, Some(Half::Upper)))?;
            let low = get(vocabs, VocabularyKind::new(mode, Some(Half::Lower)))?;
            par::map(&pairs, |&(i, f)| {
                let img = &dataset.images[i];
                build_half_region_cbows(&img.id, img.width, img.height, f, up, low)
            })
        }
    }
    .into_iter()
    .collect()
}

pub fn fixed_bows(
    dataset: &Dataset,
    features: &[Vec<Feature>],
    vocabs: &BTreeMap<String, Vocabulary>,
    scope: Scope,
    parts: &[Part],
) -> Result<FixedBows> {
    let mut bows = FixedBows { ibow: None, ubow: None };
    if parts.contains(&Part::Ibow) {
        bows.ibow = Some(region_cbows(
            dataset,
            features,
            vocabs,
            VocabularyMode::Integrated,
            scope,
        )?);
    }
    if parts.contains(&Part::Ubow) {
        bows.ubow = Some(region_cbows(
            dataset,
            features,
            vocabs,
            VocabularyMode::Universal,
            scope,
        )?);
    }
    Ok(bows)
}

/// Labeled regions in dataset order with their ColHist, Mom and Wav vectors.
pub fn labeled_samples(dataset: &Dataset) -> Result<(Vec<RegionSample>, Vec<[FeatureVector; 3]>)> {
    let per_image = par::map_range(
        dataset.images.len(),
        |i| -> Result<Vec<(RegionSample, [FeatureVector; 3])>> {
            let img = &dataset.images[i];
            let rgb = img.rgb()?;
            let rects = grid_regions(img.width, img.height)?;
            img.labeled_regions()
                .map(|(r, c)| {
                    Ok((
                        RegionSample {
                            image: i,
                            region: r,
                            concept: c,
                        },
                        low_level_features(&rgb, &rects[r])?,
                    ))
                })
                .collect()
        },
    );
    let mut samples = Vec::new();
    let mut low = Vec::new();
    for rows in per_image {
        for (s, f) in rows? {
            samples.push(s);
            low.push(f);
        }
    }
    Ok((samples, low))
}

pub fn experiment_data<'a>(
    dataset: &Dataset,
    samples: Vec<RegionSample>,
    low: Vec<[FeatureVector; 3]>,
    bows: &'a dyn BowSource,
) -> ExperimentData<'a> {
    ExperimentData {
        concepts: dataset.concepts.clone(),
        samples,
        low,
        bows,
    }
}

/// Rebuilds vocabularies from the keypoints of each fold's training regions.
pub struct StrictBows<'a> {
    pub dataset: &'a Dataset,
    pub features: &'a [Vec<Feature>],
    pub params: VocabularyParams,
    pub scope: Scope,
}

impl BowSource for StrictBows<'_> {
    fn bows(
        &self,
        part: Part,
        samples: &[RegionSample],
        train: Option<&[usize]>,
        seed: u64,
    ) -> Result<Vec<FeatureVector>> {
        let train = train.ok_or_else(|| Error::InvalidConfig("strict folds need a training set".into()))?;
        let mode = match part {
            Part::Ibow => VocabularyMode::Integrated,
            Part::Ubow => VocabularyMode::Universal,
            _ => return Err(Error::InvalidFeatureCombo(part.name().into())),
        };
        let half = match self.scope {
            Scope::Whole => None,
            Scope::Halves => samples.first().map(|s| half_of_region(s.region)),
        };
        let kind = VocabularyKind::new(mode, half);
        let allowed: BTreeSet<(usize, usize)> = train.iter().map(|&i| (samples[i].image, samples[i].region)).collect();

        let region_of = |i: usize, f: &Feature| {
            let img = &self.dataset.images[i];
            region_of_point(f.keypoint.x as f64, f.keypoint.y as f64, img.width, img.height)
        };
        let mut kept: Vec<Vec<Feature>> = vec![Vec::new(); self.features.len()];
        for (i, feats) in self.features.iter().enumerate() {
            for f in feats {
                if allowed.contains(&(i, region_of(i, f)?)) {
                    kept[i].push(*f);
                }
            }
        }
        let vocab = build_vocabulary(&training_images(self.dataset, &kept), kind, &self.params, seed)?;

        let mut wanted: BTreeMap<(usize, usize), Vec<u32>> = samples
            .iter()
            .map(|s| ((s.image, s.region), vec![0u32; vocab.len()]))
            .collect();
        for (i, feats) in self.features.iter().enumerate() {
            for f in feats {
                if let Some(h) = wanted.get_mut(&(i, region_of(i, f)?)) {
                    h[vocab.quantize(&f.descriptor)] += 1;
                }
            }
        }
        Ok(samples
            .iter()
            .map(|s| {
                FeatureVector::new(
                    FeatureKind::Cbow,
                    wanted[&(s.image, s.region)].iter().map(|&c| c as f64).collect(),
                )
            })
            .collect())
    }
}
