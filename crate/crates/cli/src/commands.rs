//! The five subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use regionbow::analysis::analysis_tables;
use regionbow::cbow::{sum_cbows_by_concept, CbowHistogram};
use regionbow::dataset::{concept_census, load_dataset, Dataset, ImageSource};
use regionbow::evaluation::{metrics_csv, run_experiment, BowSource, ExperimentResult, Scope};
use regionbow::keypoints::{detect_and_describe, DescriptorCache, Feature, Keypoint};
use regionbow::pipeline::{self, StrictBows};
use regionbow::vocabulary::{build_vocabulary, Vocabulary, VocabularyKind};
use regionbow::{par, seed, synth};
use serde_json::{json, Map, Value};

use crate::config::Config;
use crate::error::{CliError, Context, Result};
use crate::workspace::{write_atomic, Workspace};

fn open_dataset(cfg: &Config) -> Result<Dataset> {
    let (i, l, c) = (
        cfg.images.as_deref().expect("validated"),
        cfg.labels.as_deref().expect("validated"),
        cfg.categories.as_deref().expect("validated"),
    );
    load_dataset(i, l, c).context(|| format!("loading dataset from {}", i.display()))
}

/// Cache fingerprint of each image: detector parameters plus file contents.
pub fn image_fingerprints(cfg: &Config, ds: &Dataset) -> Result<Vec<u64>> {
    let canonical = cfg.sift.canonical();
    par::map(&ds.images, |img| -> Result<u64> {
        let mut bytes = canonical.clone().into_bytes();
        bytes.push(b'\n');
        match &img.source {
            ImageSource::File(p) => bytes.extend(fs::read(p).context(|| format!("reading {}", p.display()))?),
            ImageSource::Memory(px) => bytes.extend_from_slice(px.as_raw()),
        }
        Ok(seed::fingerprint(&bytes))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExtractSummary {
    pub extracted: usize,
    pub reused: usize,
    /// Cache files that were unreadable and got rebuilt.
    pub repaired: usize,
    pub keypoints: usize,
}

enum CacheState {
    Reused(usize),
    Extracted(usize),
    Repaired(usize),
}

pub fn extract(cfg: &Config) -> Result<ExtractSummary> {
    cfg.validate_extract()?;
    let ws = Workspace::create(&cfg.workspace)?;
    let _lock = ws.lock()?;
    let ds = open_dataset(cfg)?;
    let fps = image_fingerprints(cfg, &ds)?;
    let states = par::map_range(ds.images.len(), |i| -> Result<CacheState> {
        let img = &ds.images[i];
        let path = ws.cache_file(&img.id);
        let mut repaired = false;
        if !cfg.force && path.exists() {
            match DescriptorCache::read(&path, fps[i]) {
                Ok(c) => return Ok(CacheState::Reused(c.features.len())),
                Err(e @ regionbow::Error::CorruptCache { .. }) => {
                    log::warn!("{e}; re-extracting");
                    repaired = true;
                }
                Err(e) => log::info!("{}: {e}; re-extracting", img.id),
            }
        }
        let rgb = img.rgb().context(|| format!("image {}", img.id))?;
        let features = detect_and_describe(&rgb, &cfg.sift).context(|| format!("image {}", img.id))?;
        let n = features.len();
        DescriptorCache {
            fingerprint: fps[i],
            features,
        }
        .write(&path)
        .context(|| format!("image {}", img.id))?;
        Ok(if repaired {
            CacheState::Repaired(n)
        } else {
            CacheState::Extracted(n)
        })
    });
    let mut sum = ExtractSummary::default();
    for s in states {
        match s? {
            CacheState::Reused(n) => {
                sum.reused += 1;
                sum.keypoints += n;
            }
            CacheState::Extracted(n) => {
                sum.extracted += 1;
                sum.keypoints += n;
            }
            CacheState::Repaired(n) => {
                sum.repaired += 1;
                sum.keypoints += n;
            }
        }
    }
    log::info!(
        "{} images: {} extracted, {} reused, {} repaired, {} keypoints",
        ds.images.len(),
        sum.extracted,
        sum.reused,
        sum.repaired,
        sum.keypoints
    );
    Ok(sum)
}

fn load_features(ws: &Workspace, ds: &Dataset, fps: &[u64]) -> Result<Vec<Vec<Feature>>> {
    par::map_range(ds.images.len(), |i| {
        let id = &ds.images[i].id;
        let path = ws.cache_file(id);
        if !path.exists() {
            return Err(CliError::Missing(format!(
                "no descriptor cache for image {id} in {}; run `regionbow extract` first",
                ws.cache_dir().display()
            )));
        }
        DescriptorCache::read(&path, fps[i]).map(|c| c.features).map_err(|e| {
            CliError::Missing(format!(
                "descriptor cache for image {id} is unusable ({e}); run `regionbow extract`"
            ))
        })
    })
    .into_iter()
    .collect()
}

/// Fingerprint of everything a vocabulary depends on.
pub fn vocabulary_fingerprint(cfg: &Config, ds: &Dataset, fps: &[u64], kind: VocabularyKind) -> u64 {
    let mut text = format!(
        "vocab/1;kind={kind};k={};max_iter={};tol={};seed={}\n",
        cfg.k,
        cfg.kmeans_max_iter,
        cfg.kmeans_tol,
        pipeline::vocabulary_seed(cfg.seed, kind)
    );
    for (img, fp) in ds.images.iter().zip(fps) {
        text.push_str(&format!("{}\t{}\t{fp:016x}\n", img.id, ds.category_of(&img.id)));
    }
    seed::fingerprint(text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabOutcome {
    pub kind: VocabularyKind,
    pub path: PathBuf,
    pub words: usize,
    pub rebuilt: bool,
}

pub fn vocab(cfg: &Config) -> Result<Vec<VocabOutcome>> {
    cfg.validate_vocab()?;
    let ws = Workspace::create(&cfg.workspace)?;
    let _lock = ws.lock()?;
    let ds = open_dataset(cfg)?;
    let fps = image_fingerprints(cfg, &ds)?;
    let feats = load_features(&ws, &ds, &fps)?;
    let images = pipeline::training_images(&ds, &feats);
    let mut out = Vec::new();
    for &kind in &cfg.kinds {
        let name = kind.name();
        let path = ws.vocab_file(&name);
        let fp_path = ws.vocab_fingerprint_file(&name);
        let fp = format!("{:016x}", vocabulary_fingerprint(cfg, &ds, &fps, kind));
        if !cfg.force && path.exists() && fs::read_to_string(&fp_path).is_ok_and(|s| s.trim() == fp) {
            if let Ok(v) = fs::read_to_string(&path)
                .map_err(drop)
                .and_then(|t| Vocabulary::from_csv(&t).map_err(drop))
            {
                log::info!("{name} vocabulary up to date");
                out.push(VocabOutcome {
                    kind,
                    path,
                    words: v.len(),
                    rebuilt: false,
                });
                continue;
            }
        }
        log::info!("building {name} vocabulary (K={})", cfg.k);
        let v = build_vocabulary(
            &images,
            kind,
            &cfg.vocabulary_params(),
            pipeline::vocabulary_seed(cfg.seed, kind),
        )
        .context(|| format!("building {name} vocabulary"))?;
        write_atomic(&path, v.to_csv().as_bytes())?;
        write_atomic(&fp_path, format!("{fp}\n").as_bytes())?;
        out.push(VocabOutcome {
            kind,
            path,
            words: v.len(),
            rebuilt: true,
        });
    }
    Ok(out)
}

fn load_vocab(cfg: &Config, ws: &Workspace, ds: &Dataset, fps: &[u64], kind: VocabularyKind) -> Result<Vocabulary> {
    let name = kind.name();
    let path = ws.vocab_file(&name);
    let hint = format!("run `regionbow vocab --kind {name}`");
    let text = fs::read_to_string(&path)
        .map_err(|_| CliError::Missing(format!("vocabulary {name} not found at {}; {hint}", path.display())))?;
    let fp = format!("{:016x}", vocabulary_fingerprint(cfg, ds, fps, kind));
    if !fs::read_to_string(ws.vocab_fingerprint_file(&name)).is_ok_and(|s| s.trim() == fp) {
        return Err(CliError::Missing(format!(
            "vocabulary {name} was built from different inputs or settings; {hint}"
        )));
    }
    Vocabulary::from_csv(&text).context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub result: ExperimentResult,
}

pub fn run(cfg: &Config) -> Result<RunOutcome> {
    let exp = cfg.validate_run()?;
    let ws = Workspace::create(&cfg.workspace)?;
    let _lock = ws.lock()?;
    let mut timings = Map::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Map<String, Value>| {
        timings.insert(name.into(), json!(clock.elapsed().as_millis() as u64));
        clock = Instant::now();
    };

    let ds = open_dataset(cfg)?;
    let fps = image_fingerprints(cfg, &ds)?;
    let feats = load_features(&ws, &ds, &fps)?;
    lap("load_ms", &mut timings);

    let mut vocab_info = Map::new();
    let bows: Box<dyn BowSource + '_> = if cfg.strict_folds {
        Box::new(StrictBows {
            dataset: &ds,
            features: &feats,
            params: cfg.vocabulary_params(),
            scope: exp.scope,
        })
    } else {
        let mut vocabs = BTreeMap::new();
        for kind in pipeline::kinds_for(exp.scope, exp.combo.bow_parts()) {
            let v = load_vocab(cfg, &ws, &ds, &fps, kind)?;
            vocab_info.insert(
                kind.name(),
                json!({
                    "words": v.len(),
                    "fingerprint": format!("{:016x}", v.fingerprint()),
                    "seed": pipeline::vocabulary_seed(cfg.seed, kind),
                }),
            );
            vocabs.insert(kind.name(), v);
        }
        Box::new(
            pipeline::fixed_bows(&ds, &feats, &vocabs, exp.scope, exp.combo.parts())
                .context(|| "counting visual words".into())?,
        )
    };
    let (samples, low) = pipeline::labeled_samples(&ds).context(|| "computing region features".into())?;
    lap("features_ms", &mut timings);

    let data = pipeline::experiment_data(&ds, samples, low, bows.as_ref());
    log::info!(
        "running set {} with {} on {} regions",
        cfg.set,
        exp.combo,
        data.samples.len()
    );
    let result = run_experiment(&data, &exp).context(|| format!("set {} {}", cfg.set, exp.combo))?;
    lap("experiment_ms", &mut timings);

    let dir = ws.results_dir(cfg.set, &exp.combo.name());
    fs::create_dir_all(&dir).context(|| format!("creating {}", dir.display()))?;
    write_atomic(
        &dir.join("confusion.csv"),
        result.matrix.to_csv(&ds.concepts).as_bytes(),
    )?;
    write_atomic(
        &dir.join("metrics.csv"),
        metrics_csv(&result.metrics, &ds.concepts).as_bytes(),
    )?;

    let config: Map<String, Value> = cfg
        .entries()
        .into_iter()
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    let report = json!({
        "config": config,
        "experiment": {
            "set": cfg.set,
            "classifier": format!("{:?}", exp.classifier).to_lowercase(),
            "scope": format!("{:?}", exp.scope).to_lowercase(),
            "features": exp.combo.name(),
            "normalized_parts": exp.normalize_parts(),
            "stratified_folds": result.stratified,
        },
        "seeds": result.seeds,
        "vocabularies": vocab_info,
        "chosen_c": result.chosen_c,
        "overall": result.metrics.overall,
        "macro_average": result.metrics.macro_average,
        "timings": timings,
    });
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    write_atomic(&dir.join("run.json"), text.as_bytes())?;
    log::info!(
        "overall {:.2}%, macro average {:.2}% -> {}",
        result.metrics.overall,
        result.metrics.macro_average,
        dir.display()
    );
    Ok(RunOutcome { dir, result })
}

/// Paths of a generated dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthOutcome {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub categories: PathBuf,
    /// `key = value` file pointing at the dataset.
    pub config: PathBuf,
}

pub fn synth(cfg: &Config) -> Result<SynthOutcome> {
    cfg.validate_synth()?;
    let params = synth::SynthParams::new(cfg.seed, cfg.synth_concepts, cfg.synth_images)
        .map_err(|e| CliError::config(e.to_string()))?;
    let images = synth::generate(&params).context(|| "generating images".into())?;
    synth::write(&images, &cfg.out).context(|| format!("writing {}", cfg.out.display()))?;
    let out = SynthOutcome {
        images: cfg.out.join("images"),
        labels: cfg.out.join("labels"),
        categories: cfg.out.join("categories.txt"),
        config: cfg.out.join("dataset.conf"),
    };
    let text = format!(
        "images = {}\nlabels = {}\ncategories = {}\n",
        out.images.display(),
        out.labels.display(),
        out.categories.display()
    );
    write_atomic(&out.config, text.as_bytes())?;
    log::info!("wrote {} images to {}", images.len(), cfg.out.display());
    Ok(out)
}

pub fn analyze(cfg: &Config) -> Result<Vec<PathBuf>> {
    cfg.validate_analyze()?;
    let ws = Workspace::create(&cfg.workspace)?;
    let _lock = ws.lock()?;
    let ds = open_dataset(cfg)?;
    let fps = image_fingerprints(cfg, &ds)?;
    let feats = load_features(&ws, &ds, &fps)?;
    let keypoints: BTreeMap<String, Vec<Keypoint>> = ds
        .images
        .iter()
        .zip(&feats)
        .map(|(img, f)| (img.id.clone(), f.iter().map(|f| f.keypoint).collect()))
        .collect();
    let mut tables = analysis_tables(&ds, &keypoints).context(|| "analysis".into())?;
    tables.insert("census.csv".into(), concept_census(&ds).to_csv());

    for kind in [VocabularyKind::Universal, VocabularyKind::Integrated] {
        let name = kind.name();
        if !ws.vocab_file(&name).exists() {
            continue;
        }
        let v = match load_vocab(cfg, &ws, &ds, &fps, kind) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("skipping concept sums: {e}");
                continue;
            }
        };
        let vocabs = BTreeMap::from([(name.clone(), v)]);
        let hists: Vec<CbowHistogram> = pipeline::region_cbows(&ds, &feats, &vocabs, kind.mode(), Scope::Whole)
            .context(|| format!("counting {name} words"))?
            .into_iter()
            .flatten()
            .collect();
        let labels: Vec<Option<usize>> = ds.images.iter().flat_map(|i| i.labels.iter().copied()).collect();
        let sums = sum_cbows_by_concept(&hists, &labels, &ds.concepts).context(|| format!("{name} concept sums"))?;
        tables.insert(format!("concept-sums-{name}.csv"), sums.to_csv());
    }

    let dir = ws.analysis_dir();
    let mut written = Vec::new();
    for (file, text) in tables {
        let p = dir.join(&file);
        write_atomic(&p, text.as_bytes())?;
        written.push(p);
    }
    log::info!("wrote {} tables to {}", written.len(), dir.display());
    Ok(written)
}

/// Convenience for tests and scripts: a config reading a synthetic dataset.
pub fn config_for_dataset(dataset_root: &Path, workspace: &Path) -> Config {
    Config {
        images: Some(dataset_root.join("images")),
        labels: Some(dataset_root.join("labels")),
        categories: Some(dataset_root.join("categories.txt")),
        workspace: workspace.to_path_buf(),
        ..Config::default()
    }
}
