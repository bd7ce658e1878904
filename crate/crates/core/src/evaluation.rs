//! Cross-validated region annotation experiments.
//!
//! Labeled regions are dealt into stratified folds; every fold trains on the
//! rest and predicts its own regions, and all predictions accumulate in one
//! confusion matrix. The halves protocol runs two independent loops over
//! upper-half and lower-half regions and adds their matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::annotators::{
    self, build_prototypes, knn_annotate, FeatureGram, GramSource, KernelKind, PrecomputedGram, SmoParams,
};
use crate::cbow::CbowHistogram;
use crate::dataset::{half_of_region, ConceptSet, Half};
use crate::error::{Error, Result};
use crate::features::{concat_features, FeatureKind, FeatureVector};
use crate::{par, seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Part {
    Ibow,
    Ubow,
    ColHist,
    Mom,
    Wav,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Ibow => "IBOW",
            Part::Ubow => "UBOW",
            Part::ColHist => "ColHist",
            Part::Mom => "Mom",
            Part::Wav => "Wav",
        }
    }

    pub fn is_bow(self) -> bool {
        matches!(self, Part::Ibow | Part::Ubow)
    }
}

impl FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Part::Ibow, Part::Ubow, Part::ColHist, Part::Mom, Part::Wav]
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidFeatureCombo(s.to_string()))
    }
}

/// One of the fourteen feature configurations.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureCombo {
    parts: Vec<Part>,
}

const COMBOS: [&[Part]; 14] = [
    &[Part::Ibow],
    &[Part::Ubow],
    &[Part::ColHist],
    &[Part::Mom],
    &[Part::Wav],
    &[Part::Ibow, Part::Mom],
    &[Part::Ubow, Part::Mom],
    &[Part::Ibow, Part::ColHist],
    &[Part::Ubow, Part::ColHist],
    &[Part::Ibow, Part::Wav],
    &[Part::Ubow, Part::Wav],
    &[Part::Ibow, Part::ColHist, Part::Wav],
    &[Part::Ubow, Part::ColHist, Part::Wav],
    &[Part::ColHist, Part::Wav],
];

impl FeatureCombo {
    pub fn all() -> Vec<FeatureCombo> {
        COMBOS.iter().map(|p| FeatureCombo { parts: p.to_vec() }).collect()
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn name(&self) -> String {
        self.parts.iter().map(|p| p.name()).collect::<Vec<_>>().join("+")
    }

    pub fn bow_parts(&self) -> impl Iterator<Item = Part> + '_ {
        self.parts.iter().copied().filter(|p| p.is_bow())
    }
}

impl FromStr for FeatureCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s.split('+').map(Part::from_str).collect::<Result<Vec<_>>>()?;
        COMBOS
            .iter()
            .find(|c| **c == parts.as_slice())
            .map(|c| FeatureCombo { parts: c.to_vec() })
            .ok_or_else(|| Error::InvalidFeatureCombo(s.to_string()))
    }
}

impl std::fmt::Display for FeatureCombo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classifier {
    Knn,
    Svm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Whole,
    Halves,
}

/// Classifier and vocabulary scope of experiment sets 1 to 4.
pub fn experiment_set(set: u8) -> Result<(Classifier, Scope)> {
    match set {
        1 => Ok((Classifier::Knn, Scope::Whole)),
        2 => Ok((Classifier::Svm, Scope::Whole)),
        3 => Ok((Classifier::Knn, Scope::Halves)),
        4 => Ok((Classifier::Svm, Scope::Halves)),
        _ => Err(Error::InvalidConfig(format!("experiment set must be 1-4, got {set}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub seed: u64,
    /// Sample indices of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
    pub fold_of: Vec<usize>,
    pub stratified: bool,
}

impl FoldPlan {
    /// Everything outside fold `f`, ascending.
    pub fn train(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != f).collect()
    }
}

fn deal(groups: Vec<Vec<usize>>, n: usize, folds: usize, seed: u64, stratified: bool) -> FoldPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; n];
    let mut next = 0usize;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    let mut out = vec![Vec::new(); folds];
    for (i, &f) in fold_of.iter().enumerate() {
        out[f].push(i);
    }
    FoldPlan {
        seed,
        folds: out,
        fold_of,
        stratified,
    }
}

fn by_concept(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        g.entry(l).or_default().push(i);
    }
    g
}

/// Stratified random partition of samples into `folds` near-equal folds.
///
/// Each concept's samples are shuffled and dealt round-robin, continuing the
/// deal position from one concept to the next, so fold sizes differ by at
/// most one overall and per concept. Fails with `ConceptTooSmall` when a
/// concept has fewer samples than folds.
pub fn make_folds_strict(labels: &[usize], folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds == 0 || labels.len() < folds {
        return Err(Error::TooFewRegions {
            regions: labels.len(),
            folds,
        });
    }
    let groups = by_concept(labels);
    if let Some((&c, g)) = groups.iter().find(|(_, g)| g.len() < folds) {
        return Err(Error::ConceptTooSmall {
            concept: c,
            samples: g.len(),
            folds,
        });
    }
    Ok(deal(groups.into_values().collect(), labels.len(), folds, seed, true))
}

/// [`make_folds_strict`], falling back to an unstratified deal (with a
/// warning) when some concept is too small to stratify.
pub fn make_folds(labels: &[usize], folds: usize, seed: u64) -> Result<FoldPlan> {
    match make_folds_strict(labels, folds, seed) {
        Err(e @ Error::ConceptTooSmall { .. }) => {
            log::warn!("{e}; using unstratified folds");
            Ok(deal(
                vec![(0..labels.len()).collect()],
                labels.len(),
                folds,
                seed,
                false,
            ))
        }
        other => other,
    }
}

/// Rows are true concepts, columns predicted concepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub n: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        ConfusionMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n, other.n, "merging matrices of different sizes");
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i * self.n..(i + 1) * self.n].iter().sum()
    }

    /// Counts as CSV with a header of concept names.
    pub fn to_csv(&self, concepts: &ConceptSet) -> String {
        let mut out = String::from("truth");
        for c in concepts.iter() {
            let _ = write!(out, ",{}", c.name);
        }
        out.push('\n');
        for (i, c) in concepts.iter().enumerate() {
            out.push_str(&c.name);
            for j in 0..self.n {
                let _ = write!(out, ",{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Row-normalized diagonal in percent; NaN for concepts never tested.
    pub per_concept: Vec<f64>,
    /// trace / total in percent.
    pub overall: f64,
    /// Mean of the defined per-concept accuracies, in percent.
    pub macro_average: f64,
}

pub fn report(m: &ConfusionMatrix) -> Result<Metrics> {
    let total = m.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let per_concept: Vec<f64> = (0..m.n)
        .map(|i| match m.row_total(i) {
            0 => f64::NAN,
            r => 100.0 * m.get(i, i) as f64 / r as f64,
        })
        .collect();
    let defined: Vec<f64> = per_concept.iter().copied().filter(|v| !v.is_nan()).collect();
    Ok(Metrics {
        overall: 100.0 * m.trace() as f64 / total as f64,
        macro_average: defined.iter().sum::<f64>() / defined.len() as f64,
        per_concept,
    })
}

fn column_title(name: &str) -> String {
    let mut c = name.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// One header row of capitalized concept names plus `Acc.`, then one row of
/// percentages with two decimals.
pub fn metrics_csv(metrics: &Metrics, concepts: &ConceptSet) -> String {
    let mut header: Vec<String> = concepts.iter().map(|c| column_title(&c.name)).collect();
    header.push("Acc.".into());
    let mut row: Vec<String> = metrics.per_concept.iter().map(|v| format!("{v:.2}")).collect();
    row.push(format!("{:.2}", metrics.overall));
    format!("{}\n{}\n", header.join(","), row.join(","))
}

/// Predictions for one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub predictions: Vec<usize>,
    /// Penalty chosen by inner cross-validation, for SVMs.
    pub c: Option<f64>,
}

/// Trains on `train` and labels `test`; both index the experiment's samples.
pub trait Annotator: Sync {
    fn fit_predict(&self, fold: usize, train: &[usize], test: &[usize]) -> Result<FoldOutcome>;
}

/// Returns the true labels.
pub struct OracleAnnotator<'a>(pub &'a [usize]);

impl Annotator for OracleAnnotator<'_> {
    fn fit_predict(&self, _: usize, _: &[usize], test: &[usize]) -> Result<FoldOutcome> {
        Ok(FoldOutcome {
            predictions: test.iter().map(|&i| self.0[i]).collect(),
            c: None,
        })
    }
}

/// Always predicts one concept.
pub struct ConstantAnnotator(pub usize);

impl Annotator for ConstantAnnotator {
    fn fit_predict(&self, _: usize, _: &[usize], test: &[usize]) -> Result<FoldOutcome> {
        Ok(FoldOutcome {
            predictions: vec![self.0; test.len()],
            c: None,
        })
    }
}

pub struct CrossValidation {
    pub matrix: ConfusionMatrix,
    pub chosen_c: Vec<Option<f64>>,
}

/// Runs every fold of `plan` and accumulates the predictions.
pub fn cross_validate(
    labels: &[usize],
    n_concepts: usize,
    plan: &FoldPlan,
    annotator: &dyn Annotator,
) -> Result<CrossValidation> {
    let folds: Vec<usize> = (0..plan.folds.len()).collect();
    let outcomes = par::map(&folds, |&f| annotator.fit_predict(f, &plan.train(f), &plan.folds[f]));
    let mut matrix = ConfusionMatrix::new(n_concepts);
    let mut chosen_c = Vec::with_capacity(folds.len());
    for (f, o) in outcomes.into_iter().enumerate() {
        let o = o?;
        for (&i, &p) in plan.folds[f].iter().zip(&o.predictions) {
            matrix.add(labels[i], p);
        }
        chosen_c.push(o.c);
    }
    Ok(CrossValidation { matrix, chosen_c })
}

/// A labeled grid region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionSample {
    pub image: usize,
    pub region: usize,
    pub concept: usize,
}

/// Bag-of-words vectors for experiment samples.
pub trait BowSource: Sync {
    /// Vectors for `samples`, in order. With `train` set (indices into
    /// `samples`), vocabularies must come only from those training regions.
    fn bows(
        &self,
        part: Part,
        samples: &[RegionSample],
        train: Option<&[usize]>,
        seed: u64,
    ) -> Result<Vec<FeatureVector>>;
}

/// CBOW histograms computed once, indexed by image then region.
pub struct FixedBows {
    pub ibow: Option<Vec<Vec<CbowHistogram>>>,
    pub ubow: Option<Vec<Vec<CbowHistogram>>>,
}

impl BowSource for FixedBows {
    fn bows(
        &self,
        part: Part,
        samples: &[RegionSample],
        train: Option<&[usize]>,
        _: u64,
    ) -> Result<Vec<FeatureVector>> {
        if train.is_some() {
            return Err(Error::InvalidConfig(
                "fixed vocabularies cannot be rebuilt per fold".into(),
            ));
        }
        let table = match part {
            Part::Ibow => &self.ibow,
            Part::Ubow => &self.ubow,
            _ => return Err(Error::InvalidFeatureCombo(part.name().into())),
        };
        let table = table
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("no {} histograms available", part.name())))?;
        Ok(samples.iter().map(|s| table[s.image][s.region].to_feature()).collect())
    }
}

/// Everything an experiment reads.
pub struct ExperimentData<'a> {
    pub concepts: ConceptSet,
    pub samples: Vec<RegionSample>,
    /// ColHist, Mom, Wav per sample.
    pub low: Vec<[FeatureVector; 3]>,
    pub bows: &'a dyn BowSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub combo: FeatureCombo,
    pub classifier: Classifier,
    pub scope: Scope,
    pub seed: u64,
    pub folds: usize,
    pub c_grid: Vec<f64>,
    pub inner_folds: usize,
    pub smo: SmoParams,
    /// Rebuild vocabularies from each fold's training regions.
    pub strict_folds: bool,
    /// Precompute the whole kernel matrix up to this many samples.
    pub gram_threshold: usize,
}

impl ExperimentConfig {
    pub fn new(set: u8, combo: FeatureCombo, seed: u64) -> Result<Self> {
        let (classifier, scope) = experiment_set(set)?;
        Ok(ExperimentConfig {
            combo,
            classifier,
            scope,
            seed,
            folds: 10,
            c_grid: annotators::default_c_grid(),
            inner_folds: 10,
            smo: SmoParams::default(),
            strict_folds: false,
            gram_threshold: 12_000,
        })
    }

    /// Fused SVM inputs are unit-normalized per part; KNN sees raw vectors.
    pub fn normalize_parts(&self) -> bool {
        self.classifier == Classifier::Svm && self.combo.parts().len() > 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub matrix: ConfusionMatrix,
    pub metrics: Metrics,
    /// Upper and lower matrices of the halves protocol.
    pub halves: Option<(ConfusionMatrix, ConfusionMatrix)>,
    pub chosen_c: Vec<f64>,
    pub seeds: BTreeMap<String, u64>,
    pub stratified: bool,
}

fn assemble(
    data: &ExperimentData<'_>,
    cfg: &ExperimentConfig,
    subset: &[usize],
    train: Option<&[usize]>,
    seed: u64,
) -> Result<Vec<FeatureVector>> {
    let samples: Vec<RegionSample> = subset.iter().map(|&i| data.samples[i]).collect();
    let mut bows: BTreeMap<Part, Vec<FeatureVector>> = BTreeMap::new();
    for p in cfg.combo.bow_parts() {
        bows.insert(p, data.bows.bows(p, &samples, train, seed::derive(seed, p.name()))?);
    }
    let normalize = cfg.normalize_parts();
    Ok((0..subset.len())
        .map(|k| {
            let parts: Vec<FeatureVector> = cfg
                .combo
                .parts()
                .iter()
                .map(|p| match p {
                    Part::ColHist => data.low[subset[k]][0].clone(),
                    Part::Mom => data.low[subset[k]][1].clone(),
                    Part::Wav => data.low[subset[k]][2].clone(),
                    bow => bows[bow][k].clone(),
                })
                .collect();
            if parts.len() == 1 {
                parts.into_iter().next().expect("one part")
            } else {
                concat_features(&parts, normalize)
            }
        })
        .collect())
}

fn gram_for(features: &[FeatureVector], threshold: usize) -> Box<dyn GramSource> {
    let g = FeatureGram::new(KernelKind::HistogramIntersection, features);
    if features.len() <= threshold {
        Box::new(PrecomputedGram::from_source(&g))
    } else {
        Box::new(g)
    }
}

fn knn_fold(features: &[FeatureVector], labels: &[usize], train: &[usize], test: &[usize]) -> Result<FoldOutcome> {
    let mut groups: BTreeMap<usize, Vec<&FeatureVector>> = BTreeMap::new();
    for &i in train {
        groups.entry(labels[i]).or_default().push(&features[i]);
    }
    let protos = build_prototypes(&groups)?;
    let predictions = test
        .iter()
        .map(|&i| knn_annotate(&features[i], &protos))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldOutcome { predictions, c: None })
}

fn svm_fold(
    gram: &dyn GramSource,
    labels: &[usize],
    train: &[usize],
    test: &[usize],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<FoldOutcome> {
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let sel = annotators::select_c_on(gram, train, &train_labels, &cfg.c_grid, cfg.inner_folds, seed, &cfg.smo)?;
    let machine = annotators::train_ovo(gram, train, &train_labels, sel.c, &cfg.smo)?;
    let predictions = par::map(test, |&i| machine.predict_with(|s| gram.eval(i, s)));
    Ok(FoldOutcome {
        predictions,
        c: Some(sel.c),
    })
}

struct Configured<'a> {
    data: &'a ExperimentData<'a>,
    cfg: &'a ExperimentConfig,
    subset: &'a [usize],
    labels: Vec<usize>,
    features: Option<Vec<FeatureVector>>,
    gram: Option<Box<dyn GramSource>>,
    seed: u64,
}

impl Annotator for Configured<'_> {
    fn fit_predict(&self, fold: usize, train: &[usize], test: &[usize]) -> Result<FoldOutcome> {
        let fold_seed = seed::derive(self.seed, &format!("fold{fold}"));
        let local;
        let features = match &self.features {
            Some(f) => f,
            None => {
                local = assemble(self.data, self.cfg, self.subset, Some(train), fold_seed)?;
                &local
            }
        };
        match self.cfg.classifier {
            Classifier::Knn => knn_fold(features, &self.labels, train, test),
            Classifier::Svm => {
                let local_gram;
                let gram = match &self.gram {
                    Some(g) => g.as_ref(),
                    None => {
                        local_gram = gram_for(features, self.cfg.gram_threshold);
                        local_gram.as_ref()
                    }
                };
                svm_fold(
                    gram,
                    &self.labels,
                    train,
                    test,
                    self.cfg,
                    seed::derive(fold_seed, "svm"),
                )
            }
        }
    }
}

fn run_subset(
    data: &ExperimentData<'_>,
    cfg: &ExperimentConfig,
    subset: &[usize],
    label: &str,
    seeds: &mut BTreeMap<String, u64>,
) -> Result<(CrossValidation, bool)> {
    let labels: Vec<usize> = subset.iter().map(|&i| data.samples[i].concept).collect();
    let fold_seed = seed::derive(cfg.seed, &format!("{label}folds"));
    let run_seed = seed::derive(cfg.seed, &format!("{label}run"));
    seeds.insert(format!("{label}folds"), fold_seed);
    seeds.insert(format!("{label}run"), run_seed);
    let plan = make_folds(&labels, cfg.folds, fold_seed)?;
    let features = if cfg.strict_folds {
        None
    } else {
        Some(assemble(data, cfg, subset, None, run_seed)?)
    };
    let gram = match (&features, cfg.classifier) {
        (Some(f), Classifier::Svm) => Some(gram_for(f, cfg.gram_threshold)),
        _ => None,
    };
    let annotator = Configured {
        data,
        cfg,
        subset,
        labels: labels.clone(),
        features,
        gram,
        seed: run_seed,
    };
    let cv = cross_validate(&labels, data.concepts.len(), &plan, &annotator)?;
    Ok((cv, plan.stratified))
}

fn finish(
    matrix: ConfusionMatrix,
    halves: Option<(ConfusionMatrix, ConfusionMatrix)>,
    chosen: Vec<Option<f64>>,
    seeds: BTreeMap<String, u64>,
    stratified: bool,
) -> Result<ExperimentResult> {
    Ok(ExperimentResult {
        metrics: report(&matrix)?,
        matrix,
        halves,
        chosen_c: chosen.into_iter().flatten().collect(),
        seeds,
        stratified,
    })
}

/// Ten-fold experiment over all labeled regions.
pub fn run_experiment(data: &ExperimentData<'_>, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.scope == Scope::Halves {
        return run_halves_experiment(data, cfg);
    }
    let all: Vec<usize> = (0..data.samples.len()).collect();
    let mut seeds = BTreeMap::new();
    let (cv, strat) = run_subset(data, cfg, &all, "", &mut seeds)?;
    finish(cv.matrix, None, cv.chosen_c, seeds, strat)
}

/// Independent ten-fold loops over upper-half and lower-half regions; the
/// result is the sum of the two matrices.
pub fn run_halves_experiment(data: &ExperimentData<'_>, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut seeds = BTreeMap::new();
    let mut mats = Vec::new();
    let mut chosen = Vec::new();
    let mut strat = true;
    for h in Half::BOTH {
        let subset: Vec<usize> = (0..data.samples.len())
            .filter(|&i| half_of_region(data.samples[i].region) == h)
            .collect();
        if subset.is_empty() {
            mats.push(ConfusionMatrix::new(data.concepts.len()));
            continue;
        }
        let (cv, s) = run_subset(data, cfg, &subset, &format!("{}/", h.name()), &mut seeds)?;
        strat &= s;
        chosen.extend(cv.chosen_c);
        mats.push(cv.matrix);
    }
    let lower = mats.pop().expect("two halves");
    let upper = mats.pop().expect("two halves");
    let mut sum = upper.clone();
    sum.merge(&lower);
    finish(sum, Some((upper, lower)), chosen, seeds, strat)
}

/// Feature vectors tagged with a kind, for CSV export.
pub fn feature_kind_of(part: Part) -> FeatureKind {
    match part {
        Part::ColHist => FeatureKind::ColHist,
        Part::Mom => FeatureKind::Mom,
        Part::Wav => FeatureKind::Wav,
        Part::Ibow | Part::Ubow => FeatureKind::Cbow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fourteen_combos_and_parser() {
        let all = FeatureCombo::all();
        assert_eq!(all.len(), 14);
        for c in &all {
            assert_eq!(&c.name().parse::<FeatureCombo>().unwrap(), c);
        }
        assert_eq!(
            "IBOW+ColHist+Wav".parse::<FeatureCombo>().unwrap().parts(),
            &[Part::Ibow, Part::ColHist, Part::Wav]
        );
        for bad in ["Mom+Mom", "IBOW+UBOW", "Wav+ColHist", "", "SIFT"] {
            assert!(bad.parse::<FeatureCombo>().is_err(), "{bad}");
        }
    }

    #[test]
    fn sets() {
        assert_eq!(experiment_set(4).unwrap(), (Classifier::Svm, Scope::Halves));
        assert!(experiment_set(5).is_err());
    }

    #[test]
    fn folds_of_one_hundred() {
        let labels: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let p = make_folds(&labels, 10, 3).unwrap();
        assert!(p.stratified);
        assert!(p.folds.iter().all(|f| f.len() == 10));
        let mut seen: Vec<usize> = p.folds.concat();
        seen.sort();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        for f in &p.folds {
            for c in 0..5 {
                assert_eq!(f.iter().filter(|&&i| labels[i] == c).count(), 2);
            }
        }
        assert_eq!(make_folds(&labels, 10, 3).unwrap(), p);
    }

    #[test]
    fn small_concept_falls_back() {
        let mut labels = vec![0usize; 30];
        labels.extend([1, 1, 1]);
        assert!(matches!(
            make_folds_strict(&labels, 10, 0),
            Err(Error::ConceptTooSmall {
                concept: 1,
                samples: 3,
                folds: 10
            })
        ));
        let p = make_folds(&labels, 10, 0).unwrap();
        assert!(!p.stratified);
        assert_eq!(p.folds.iter().map(Vec::len).sum::<usize>(), 33);
        assert!(matches!(make_folds(&[0; 5], 10, 0), Err(Error::TooFewRegions { .. })));
    }

    proptest! {
        #[test]
        fn fold_partition(counts in prop::collection::vec(10usize..60, 1..6), folds in 2usize..11, seed in any::<u64>()) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            let p = make_folds(&labels, folds, seed).unwrap();
            let mut hits = vec![0; labels.len()];
            for (f, members) in p.folds.iter().enumerate() {
                for &i in members {
                    hits[i] += 1;
                    prop_assert_eq!(p.fold_of[i], f);
                }
            }
            prop_assert!(hits.iter().all(|&h| h == 1));
            let sizes: Vec<usize> = p.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for (c, &n) in counts.iter().enumerate() {
                for f in &p.folds {
                    let k = f.iter().filter(|&&i| labels[i] == c).count() as f64;
                    prop_assert!((k - n as f64 / folds as f64).abs() <= 1.0);
                }
            }
        }
    }

    #[test]
    fn report_examples() {
        let mut m = ConfusionMatrix::new(2);
        for (t, p, k) in [(0, 0, 8), (0, 1, 2), (1, 0, 4), (1, 1, 6)] {
            for _ in 0..k {
                m.add(t, p);
            }
        }
        let r = report(&m).unwrap();
        assert_eq!(r.per_concept, vec![80.0, 60.0]);
        assert_eq!(r.overall, 70.0);
        assert_eq!(r.macro_average, 70.0);
        assert!(matches!(report(&ConfusionMatrix::new(3)), Err(Error::EmptyMatrix)));

        let mut d = ConfusionMatrix::new(9);
        for i in 0..9 {
            for _ in 0..10 {
                d.add(i, i);
            }
        }
        let r = report(&d).unwrap();
        assert!(r.per_concept.iter().all(|&v| v == 100.0));
        let csv = metrics_csv(&r, &ConceptSet::default());
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "Sky,Water,Grass,Trunks,Foliage,Field,Rocks,Flowers,Sand,Acc."
        );
        assert_eq!(lines.next().unwrap().split(',').count(), 10);
    }

    #[test]
    fn stub_annotators() {
        let labels: Vec<usize> = (0..200).map(|i| [0, 0, 1, 4][i % 4]).collect();
        let plan = make_folds(&labels, 10, 1).unwrap();
        let cv = cross_validate(&labels, 9, &plan, &OracleAnnotator(&labels)).unwrap();
        assert_eq!(cv.matrix.total(), 200);
        assert_eq!(cv.matrix.trace(), 200);
        assert_eq!(report(&cv.matrix).unwrap().overall, 100.0);

        let cv = cross_validate(&labels, 9, &plan, &ConstantAnnotator(0)).unwrap();
        for i in 0..9 {
            for j in 1..9 {
                assert_eq!(cv.matrix.get(i, j), 0);
            }
        }
        assert_eq!(report(&cv.matrix).unwrap().overall, 50.0);
    }

    struct NoBows;
    impl BowSource for NoBows {
        fn bows(&self, p: Part, _: &[RegionSample], _: Option<&[usize]>, _: u64) -> Result<Vec<FeatureVector>> {
            Err(Error::InvalidFeatureCombo(p.name().into()))
        }
    }

    fn toy_data(bows: &dyn BowSource) -> ExperimentData<'_> {
        let mut samples = Vec::new();
        let mut low = Vec::new();
        for image in 0..12 {
            for region in 0..100 {
                // Sky on top, sand below, plus a lower-only water band.
                let concept = if region < 50 {
                    0
                } else if region % 10 < 3 {
                    1
                } else {
                    8
                };
                samples.push(RegionSample { image, region, concept });
                let mut h = vec![0.0; 84];
                h[concept * 5 + (image + region) % 3] = 10.0;
                low.push([
                    FeatureVector::new(FeatureKind::ColHist, h),
                    FeatureVector::new(FeatureKind::Mom, vec![concept as f64; 9]),
                    FeatureVector::new(FeatureKind::Wav, vec![((region % 7) as f64) * 0.1; 18]),
                ]);
            }
        }
        ExperimentData {
            concepts: ConceptSet::default(),
            samples,
            low,
            bows,
        }
    }

    #[test]
    fn knn_experiment_and_halves_additivity() {
        let data = toy_data(&NoBows);
        let cfg = ExperimentConfig::new(3, "ColHist".parse().unwrap(), 7).unwrap();
        let r = run_experiment(&data, &cfg).unwrap();
        let (u, l) = r.halves.clone().unwrap();
        assert_eq!(u.total() + l.total(), 1200);
        let mut sum = u.clone();
        sum.merge(&l);
        assert_eq!(sum, r.matrix);
        // Water and sand occur only in the lower half.
        assert_eq!(u.row_total(1) + u.row_total(8), 0);
        assert_eq!(r.matrix.row_total(1), l.row_total(1));
        assert_eq!(r.metrics.overall, 100.0);
        assert_eq!(run_experiment(&data, &cfg).unwrap().matrix, r.matrix);
    }

    #[test]
    fn svm_experiment() {
        let data = toy_data(&NoBows);
        let mut cfg = ExperimentConfig::new(2, "ColHist+Wav".parse().unwrap(), 7).unwrap();
        cfg.c_grid = vec![0.5, 8.0];
        cfg.inner_folds = 3;
        let r = run_experiment(&data, &cfg).unwrap();
        assert_eq!(r.matrix.total(), 1200);
        assert_eq!(r.metrics.overall, 100.0);
        assert_eq!(r.chosen_c, vec![0.5; 10]);
        assert!(matches!(
            run_experiment(&data, &ExperimentConfig::new(1, "IBOW".parse().unwrap(), 7).unwrap()),
            Err(Error::InvalidFeatureCombo(_))
        ));
    }
}
