//! Concept-based bag-of-visual-words: one word histogram per grid region.

use std::fmt::Write as _;

use crate::dataset::{half_of_region, region_of_point, ConceptSet, Half, EXCLUDED, REGIONS};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureVector};
use crate::keypoints::Feature;
use crate::vocabulary::{Vocabulary, VocabularyKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CbowHistogram {
    pub image_id: String,
    pub region: usize,
    pub counts: Vec<u32>,
    pub vocab_fingerprint: u64,
}

impl CbowHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Raw counts as a feature vector.
    pub fn to_feature(&self) -> FeatureVector {
        FeatureVector::new(FeatureKind::Cbow, self.counts.iter().map(|&c| c as f64).collect())
    }
}

fn empty_grid(image_id: &str, vocabs: [&Vocabulary; 2]) -> Vec<CbowHistogram> {
    let fps = [vocabs[0].fingerprint(), vocabs[1].fingerprint()];
    (0..REGIONS)
        .map(|r| {
            let h = (half_of_region(r) == Half::Lower) as usize;
            CbowHistogram {
                image_id: image_id.to_string(),
                region: r,
                counts: vec![0; vocabs[h].len()],
                vocab_fingerprint: fps[h],
            }
        })
        .collect()
}

fn count_into(
    grid: &mut [CbowHistogram],
    width: u32,
    height: u32,
    features: &[Feature],
    vocabs: [&Vocabulary; 2],
) -> Result<()> {
    for f in features {
        let r = region_of_point(f.keypoint.x as f64, f.keypoint.y as f64, width, height)?;
        let v = vocabs[(half_of_region(r) == Half::Lower) as usize];
        grid[r].counts[v.quantize(&f.descriptor)] += 1;
    }
    Ok(())
}

/// Histograms for all 100 regions against a whole-image vocabulary. Each
/// keypoint is counted in the region containing its centre.
pub fn build_region_cbows(
    image_id: &str,
    width: u32,
    height: u32,
    features: &[Feature],
    vocab: &Vocabulary,
) -> Result<Vec<CbowHistogram>> {
    if vocab.kind.half().is_some() {
        return Err(Error::WrongVocabularyKind(vocab.kind.name()));
    }
    let mut grid = empty_grid(image_id, [vocab, vocab]);
    count_into(&mut grid, width, height, features, [vocab, vocab])?;
    Ok(grid)
}

/// Histograms for all 100 regions, quantizing upper-half regions against
/// `upper` and lower-half regions against `lower`.
pub fn build_half_region_cbows(
    image_id: &str,
    width: u32,
    height: u32,
    features: &[Feature],
    upper: &Vocabulary,
    lower: &Vocabulary,
) -> Result<Vec<CbowHistogram>> {
    let ok = matches!(
        (upper.kind, lower.kind),
        (
            VocabularyKind::UniversalHalf(Half::Upper),
            VocabularyKind::UniversalHalf(Half::Lower)
        ) | (
            VocabularyKind::IntegratedHalf(Half::Upper),
            VocabularyKind::IntegratedHalf(Half::Lower)
        )
    );
    if !ok {
        return Err(Error::HalfVocabularyModeMismatch {
            upper: upper.kind.name(),
            lower: lower.kind.name(),
        });
    }
    let mut grid = empty_grid(image_id, [upper, lower]);
    count_into(&mut grid, width, height, features, [upper, lower])?;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSums {
    pub concepts: Vec<String>,
    pub sums: Vec<Vec<u64>>,
    pub vocab_fingerprint: u64,
}

impl ConceptSums {
    /// Rows `concept,w0..wV-1`.
    pub fn to_csv(&self) -> String {
        let v = self.sums.first().map_or(0, Vec::len);
        let mut out = String::from("concept");
        for i in 0..v {
            let _ = write!(out, ",w{i}");
        }
        out.push('\n');
        for (name, row) in self.concepts.iter().zip(&self.sums) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Element-wise sum of the histograms of every region labeled with each
/// concept. `labels[i]` is the label of `hists[i]`; unlabeled regions are
/// skipped.
pub fn sum_cbows_by_concept(
    hists: &[CbowHistogram],
    labels: &[Option<usize>],
    concepts: &ConceptSet,
) -> Result<ConceptSums> {
    let fp = hists.first().map_or(0, |h| h.vocab_fingerprint);
    let len = hists.first().map_or(0, |h| h.counts.len());
    if hists.iter().any(|h| h.vocab_fingerprint != fp || h.counts.len() != len) {
        return Err(Error::MixedVocabularies);
    }
    if labels.len() != hists.len() {
        return Err(Error::DimensionMismatch {
            expected: hists.len(),
            found: labels.len(),
        });
    }
    let mut sums = vec![vec![0u64; len]; concepts.len()];
    for (h, l) in hists.iter().zip(labels) {
        if let Some(c) = *l {
            for (s, &v) in sums[c].iter_mut().zip(&h.counts) {
                *s += v as u64;
            }
        }
    }
    Ok(ConceptSums {
        concepts: concepts.names(),
        sums,
        vocab_fingerprint: fp,
    })
}

/// Rows `image_id,region,label,c0..cV-1`. Histograms may have different
/// lengths (half vocabularies); the header covers the longest.
pub fn cbow_matrix_csv(hists: &[CbowHistogram], labels: &[Option<usize>], concepts: &ConceptSet) -> String {
    let v = hists.iter().map(|h| h.counts.len()).max().unwrap_or(0);
    let mut out = String::from("image_id,region,label");
    for i in 0..v {
        let _ = write!(out, ",c{i}");
    }
    out.push('\n');
    for (h, l) in hists.iter().zip(labels) {
        let label = l.map_or(EXCLUDED, |c| concepts.name(c));
        let _ = write!(out, "{},{},{}", h.image_id, h.region, label);
        for c in &h.counts {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}
