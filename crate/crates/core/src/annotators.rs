//! Region classifiers: nearest semantic prototype and a one-vs-one SVM with
//! the histogram intersection kernel.
//!
//! The SVM solver is SMO with second-order working-set selection. Kernel
//! values come from a [`GramSource`], either computed on demand from sparse
//! feature vectors (with a row cache) or read from a precomputed matrix.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::{evaluation, par};

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPrototype {
    pub concept: usize,
    pub vector: FeatureVector,
}

/// Coordinate-wise mean of each concept's training vectors. Concatenated
/// vectors keep their spans, so the result is also the concatenation of the
/// per-part means.
pub fn build_prototypes(groups: &BTreeMap<usize, Vec<&FeatureVector>>) -> Result<Vec<SemanticPrototype>> {
    let mut out = Vec::with_capacity(groups.len());
    for (&concept, members) in groups {
        let first = members.first().ok_or(Error::EmptyConcept(concept))?;
        let mut sum = vec![0.0f64; first.len()];
        for m in members {
            if m.len() != sum.len() {
                return Err(Error::DimensionMismatch {
                    expected: sum.len(),
                    found: m.len(),
                });
            }
            sum.iter_mut().zip(&m.values).for_each(|(s, v)| *s += v);
        }
        let n = members.len() as f64;
        let mut vector = (*first).clone();
        vector.values = sum.into_iter().map(|s| s / n).collect();
        out.push(SemanticPrototype { concept, vector });
    }
    Ok(out)
}

fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Concept of the Euclidean-nearest prototype; ties go to the lowest concept
/// index.
pub fn knn_annotate(feature: &FeatureVector, prototypes: &[SemanticPrototype]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for p in prototypes {
        if p.vector.len() != feature.len() {
            return Err(Error::DimensionMismatch {
                expected: p.vector.len(),
                found: feature.len(),
            });
        }
        let d = sq_euclidean(&feature.values, &p.vector.values);
        best = match best {
            Some((c, bd)) if bd < d || (bd == d && c < p.concept) => Some((c, bd)),
            _ => Some((p.concept, d)),
        };
    }
    best.map(|(c, _)| c).ok_or(Error::EmptyMatrix)
}

/// Σ min(a_i, b_i).
pub fn hik(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.min(*y)).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    pub dim: usize,
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn from_dense(v: &[f64]) -> Self {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (i, &x) in v.iter().enumerate() {
            if x != 0.0 {
                idx.push(i as u32);
                val.push(x);
            }
        }
        SparseVec { dim: v.len(), idx, val }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            out[i as usize] = v;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    HistogramIntersection,
    /// Plain dot product; only used to exercise the solver.
    Linear,
}

impl KernelKind {
    pub fn eval(self, a: &SparseVec, b: &SparseVec) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut s = 0.0;
        let hik = self == KernelKind::HistogramIntersection;
        while i < a.idx.len() && j < b.idx.len() {
            match a.idx[i].cmp(&b.idx[j]) {
                std::cmp::Ordering::Equal => {
                    s += if hik {
                        a.val[i].min(b.val[j])
                    } else {
                        a.val[i] * b.val[j]
                    };
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => {
                    if hik {
                        s += a.val[i].min(0.0);
                    }
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    if hik {
                        s += b.val[j].min(0.0);
                    }
                    j += 1;
                }
            }
        }
        if hik {
            s += a.val[i..].iter().map(|v| v.min(0.0)).sum::<f64>();
            s += b.val[j..].iter().map(|v| v.min(0.0)).sum::<f64>();
        }
        s
    }

    fn tag(self) -> u8 {
        match self {
            KernelKind::HistogramIntersection => 0,
            KernelKind::Linear => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(KernelKind::HistogramIntersection),
            1 => Some(KernelKind::Linear),
            _ => None,
        }
    }
}

/// Kernel values over a fixed, indexed set of samples.
pub trait GramSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn eval(&self, i: usize, j: usize) -> f64;

    fn row(&self, i: usize, cols: &[usize], out: &mut [f64]) {
        for (o, &j) in out.iter_mut().zip(cols) {
            *o = self.eval(i, j);
        }
    }

    /// True when rows are lookups rather than computations, so caching them
    /// is pointless.
    fn precomputed(&self) -> bool {
        false
    }
}

/// Kernel evaluated on demand from sparse vectors.
pub struct FeatureGram {
    pub kernel: KernelKind,
    pub vectors: Vec<SparseVec>,
}

impl FeatureGram {
    pub fn new(kernel: KernelKind, features: &[FeatureVector]) -> Self {
        FeatureGram {
            kernel,
            vectors: par::map(features, |f| SparseVec::from_dense(&f.values)),
        }
    }
}

impl GramSource for FeatureGram {
    fn len(&self) -> usize {
        self.vectors.len()
    }

    fn eval(&self, i: usize, j: usize) -> f64 {
        self.kernel.eval(&self.vectors[i], &self.vectors[j])
    }
}

/// Full symmetric kernel matrix stored in single precision.
pub struct PrecomputedGram {
    n: usize,
    data: Vec<f32>,
}

impl PrecomputedGram {
    pub fn from_source(src: &dyn GramSource) -> Self {
        let n = src.len();
        let upper = par::map_range(n, |i| (i..n).map(|j| src.eval(i, j) as f32).collect::<Vec<f32>>());
        let mut data = vec![0.0f32; n * n];
        for (i, row) in upper.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                let j = i + off;
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        PrecomputedGram { n, data }
    }
}

impl GramSource for PrecomputedGram {
    fn len(&self) -> usize {
        self.n
    }

    fn eval(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j] as f64
    }

    fn row(&self, i: usize, cols: &[usize], out: &mut [f64]) {
        let r = &self.data[i * self.n..(i + 1) * self.n];
        for (o, &j) in out.iter_mut().zip(cols) {
            *o = r[j] as f64;
        }
    }

    fn precomputed(&self) -> bool {
        true
    }
}

/// Kernel submatrix over `idx` with a least-recently-used row cache.
struct Rows<'a> {
    src: &'a dyn GramSource,
    idx: &'a [usize],
    capacity: usize,
    clock: u64,
    cache: HashMap<usize, (u64, Vec<f64>)>,
}

impl<'a> Rows<'a> {
    fn new(src: &'a dyn GramSource, idx: &'a [usize], capacity: usize) -> Self {
        Rows {
            src,
            idx,
            capacity: if src.precomputed() { 0 } else { capacity.max(2) },
            clock: 0,
            cache: HashMap::new(),
        }
    }

    fn load(&mut self, i: usize, out: &mut [f64]) {
        if self.capacity == 0 {
            self.src.row(self.idx[i], self.idx, out);
            return;
        }
        self.clock += 1;
        if let Some((stamp, row)) = self.cache.get_mut(&i) {
            *stamp = self.clock;
            out.copy_from_slice(row);
            return;
        }
        self.src.row(self.idx[i], self.idx, out);
        if self.cache.len() >= self.capacity {
            let oldest = self
                .cache
                .iter()
                .min_by_key(|(k, (s, _))| (*s, **k))
                .map(|(k, _)| *k)
                .expect("cache is full");
            self.cache.remove(&oldest);
        }
        self.cache.insert(i, (self.clock, out.to_vec()));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoParams {
    /// Stopping tolerance on the maximal KKT violation.
    pub eps: f64,
    /// Iteration cap; 0 means `max(10_000_000, 100 n)`.
    pub max_iter: usize,
    /// Training sets up to this size cache every kernel row.
    pub full_gram_threshold: usize,
    /// Rows kept by the LRU cache above the threshold.
    pub cache_rows: usize,
    pub record_trace: bool,
}

impl Default for SmoParams {
    fn default() -> Self {
        SmoParams {
            eps: 1e-3,
            max_iter: 0,
            full_gram_threshold: 8000,
            cache_rows: 2000,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    /// Maximal KKT violation at exit.
    pub gap: f64,
    pub iterations: usize,
    /// Dual objective Σα − ½αᵀQα after every iteration (if recorded).
    pub dual_trace: Vec<f64>,
}

/// Solves the soft-margin dual for labels `y` in {+1, −1} over the samples
/// `idx` of `src`.
pub fn smo_binary(
    src: &dyn GramSource,
    idx: &[usize],
    y: &[f64],
    c: f64,
    params: &SmoParams,
) -> Result<BinarySolution> {
    let n = idx.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    let capacity = if n <= params.full_gram_threshold {
        n
    } else {
        params.cache_rows
    };
    let mut rows = Rows::new(src, idx, capacity);
    let diag: Vec<f64> = idx.iter().map(|&i| src.eval(i, i)).collect();
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut ki = vec![0.0f64; n];
    let mut kj = vec![0.0f64; n];
    let mut trace = Vec::new();
    let max_iter = if params.max_iter == 0 {
        10_000_000usize.max(100 * n)
    } else {
        params.max_iter
    };
    const TAU: f64 = 1e-12;
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut gap;
    loop {
        // i maximizes -y G over I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        for t in 0..n {
            if in_low(alpha[t], y[t]) {
                gmax2 = gmax2.max(y[t] * grad[t]);
            }
        }
        gap = gmax + gmax2;
        if i == usize::MAX || gap < params.eps {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: gap,
            });
        }
        rows.load(i, &mut ki);
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if in_low(alpha[t], y[t]) {
                let b = gmax + y[t] * grad[t];
                if b > 0.0 {
                    let mut a = diag[i] + diag[t] - 2.0 * ki[t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let v = -b * b / a;
                    if v < best {
                        best = v;
                        j = t;
                    }
                }
            }
        }
        if j == usize::MAX {
            break;
        }
        rows.load(j, &mut kj);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = diag[i] + diag[j] - 2.0 * ki[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else {
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }
        let di = (alpha[i] - old_i) * y[i];
        let dj = (alpha[j] - old_j) * y[j];
        for t in 0..n {
            grad[t] += y[t] * (ki[t] * di + kj[t] * dj);
        }
        iterations += 1;
        if params.record_trace {
            let f: f64 = alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>() * 0.5;
            trace.push(-f);
        }
    }

    // Bias from free vectors, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 {
        free_sum / free_n as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else {
        lb.max(0.0)
    };

    Ok(BinarySolution {
        alpha,
        rho,
        gap: gap.max(0.0),
        iterations,
        dual_trace: trace,
    })
}

/// One binary machine of a one-vs-one ensemble. Positive decisions vote for
/// `classes[a]`, the rest for `classes[b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    pub a: usize,
    pub b: usize,
    /// Support vector ids (sample indices, or rows of an embedded block).
    pub sv: Vec<usize>,
    /// α_i y_i per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    pub c: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl PairModel {
    pub fn decision<F: Fn(usize) -> f64>(&self, kernel: &F) -> f64 {
        self.sv
            .iter()
            .zip(&self.coef)
            .map(|(&s, &w)| w * kernel(s))
            .sum::<f64>()
            - self.rho
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OvoMachine {
    /// Concept ids, ascending.
    pub classes: Vec<usize>,
    pub pairs: Vec<PairModel>,
}

impl OvoMachine {
    /// Majority vote; ties go to the larger margin sum, then the lowest class.
    pub fn predict_with<F: Fn(usize) -> f64>(&self, kernel: F) -> usize {
        if self.classes.len() == 1 {
            return self.classes[0];
        }
        let m = self.classes.len();
        let mut votes = vec![0usize; m];
        let mut margin = vec![0.0f64; m];
        for p in &self.pairs {
            let d = p.decision(&kernel);
            if d > 0.0 {
                votes[p.a] += 1;
            } else {
                votes[p.b] += 1;
            }
            margin[p.a] += d;
            margin[p.b] -= d;
        }
        let mut best = 0;
        for k in 1..m {
            if votes[k] > votes[best] || (votes[k] == votes[best] && margin[k] > margin[best]) {
                best = k;
            }
        }
        self.classes[best]
    }
}

/// Trains every pairwise machine over the samples `idx` of `src`.
/// `labels[i]` is the concept of `idx[i]`. A single class yields a machine
/// that always predicts it.
pub fn train_ovo(
    src: &dyn GramSource,
    idx: &[usize],
    labels: &[usize],
    c: f64,
    params: &SmoParams,
) -> Result<OvoMachine> {
    let classes: Vec<usize> = {
        let mut v = labels.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut jobs = Vec::new();
    for a in 0..classes.len() {
        for b in a + 1..classes.len() {
            jobs.push((a, b));
        }
    }
    let pairs = par::map(&jobs, |&(a, b)| -> Result<PairModel> {
        let mut sub = Vec::new();
        let mut y = Vec::new();
        for (&i, &l) in idx.iter().zip(labels) {
            if l == classes[a] {
                sub.push(i);
                y.push(1.0);
            } else if l == classes[b] {
                sub.push(i);
                y.push(-1.0);
            }
        }
        let sol = smo_binary(src, &sub, &y, c, params)?;
        let mut sv = Vec::new();
        let mut coef = Vec::new();
        for t in 0..sub.len() {
            if sol.alpha[t] > 0.0 {
                sv.push(sub[t]);
                coef.push(sol.alpha[t] * y[t]);
            }
        }
        Ok(PairModel {
            a,
            b,
            sv,
            coef,
            rho: sol.rho,
            c,
            gap: sol.gap,
            iterations: sol.iterations,
        })
    });
    Ok(OvoMachine {
        classes,
        pairs: pairs.into_iter().collect::<Result<_>>()?,
    })
}

/// Self-contained multiclass model carrying its own support vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: KernelKind,
    pub dim: usize,
    pub machine: OvoMachine,
    pub support: Vec<SparseVec>,
}

const MODEL_MAGIC: &[u8; 4] = b"SVMO";
const MODEL_VERSION: u32 = 1;

impl SvmModel {
    fn pack(kernel: KernelKind, dim: usize, mut machine: OvoMachine, vectors: &[SparseVec]) -> Self {
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        for p in &machine.pairs {
            for &s in &p.sv {
                let next = remap.len();
                remap.entry(s).or_insert(next);
            }
        }
        let mut support = vec![None; remap.len()];
        for (&orig, &pos) in &remap {
            support[pos] = Some(vectors[orig].clone());
        }
        for p in &mut machine.pairs {
            p.sv.iter_mut().for_each(|s| *s = remap[s]);
        }
        SvmModel {
            kernel,
            dim,
            machine,
            support: support.into_iter().map(|s| s.expect("remapped")).collect(),
        }
    }

    pub fn predict(&self, feature: &FeatureVector) -> Result<usize> {
        if feature.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: feature.len(),
            });
        }
        let x = SparseVec::from_dense(&feature.values);
        let k: Vec<f64> = self.support.iter().map(|s| self.kernel.eval(&x, s)).collect();
        Ok(self.machine.predict_with(|i| k[i]))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let u32le = |w: &mut W, v: usize| w.write_all(&(v as u32).to_le_bytes());
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&[self.kernel.tag()])?;
        u32le(w, self.dim)?;
        u32le(w, self.machine.classes.len())?;
        for &c in &self.machine.classes {
            u32le(w, c)?;
        }
        u32le(w, self.support.len())?;
        for s in &self.support {
            u32le(w, s.idx.len())?;
            for (&i, &v) in s.idx.iter().zip(&s.val) {
                w.write_all(&i.to_le_bytes())?;
                w.write_all(&v.to_le_bytes())?;
            }
        }
        u32le(w, self.machine.pairs.len())?;
        for p in &self.machine.pairs {
            u32le(w, p.a)?;
            u32le(w, p.b)?;
            w.write_all(&p.c.to_le_bytes())?;
            w.write_all(&p.rho.to_le_bytes())?;
            u32le(w, p.sv.len())?;
            for (&s, &c) in p.sv.iter().zip(&p.coef) {
                u32le(w, s)?;
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let bad = |m: &str| Error::MalformedModel(m.to_string());
        let mut take = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(|_| bad("truncated"))?;
            Ok(buf)
        };
        if take(4)?.as_slice() != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_of = |t: &mut dyn FnMut(usize) -> Result<Vec<u8>>| -> Result<usize> {
            Ok(u32::from_le_bytes(t(4)?.try_into().unwrap()) as usize)
        };
        let f64_of = |t: &mut dyn FnMut(usize) -> Result<Vec<u8>>| -> Result<f64> {
            Ok(f64::from_le_bytes(t(8)?.try_into().unwrap()))
        };
        if u32_of(&mut take)? != MODEL_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let kernel = KernelKind::from_tag(take(1)?[0]).ok_or_else(|| bad("unknown kernel"))?;
        let dim = u32_of(&mut take)?;
        let nc = u32_of(&mut take)?;
        let classes = (0..nc).map(|_| u32_of(&mut take)).collect::<Result<Vec<_>>>()?;
        let ns = u32_of(&mut take)?;
        let mut support = Vec::with_capacity(ns);
        for _ in 0..ns {
            let nnz = u32_of(&mut take)?;
            let mut s = SparseVec {
                dim,
                idx: Vec::with_capacity(nnz),
                val: Vec::with_capacity(nnz),
            };
            for _ in 0..nnz {
                let i = u32_of(&mut take)?;
                if i >= dim {
                    return Err(bad("support index out of range"));
                }
                s.idx.push(i as u32);
                s.val.push(f64_of(&mut take)?);
            }
            support.push(s);
        }
        let np = u32_of(&mut take)?;
        let mut pairs = Vec::with_capacity(np);
        for _ in 0..np {
            let a = u32_of(&mut take)?;
            let b = u32_of(&mut take)?;
            let c = f64_of(&mut take)?;
            let rho = f64_of(&mut take)?;
            let nsv = u32_of(&mut take)?;
            let mut sv = Vec::with_capacity(nsv);
            let mut coef = Vec::with_capacity(nsv);
            for _ in 0..nsv {
                let s = u32_of(&mut take)?;
                if s >= ns {
                    return Err(bad("support vector id out of range"));
                }
                sv.push(s);
                coef.push(f64_of(&mut take)?);
            }
            if a >= nc || b >= nc {
                return Err(bad("class index out of range"));
            }
            pairs.push(PairModel {
                a,
                b,
                sv,
                coef,
                rho,
                c,
                gap: 0.0,
                iterations: 0,
            });
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(SvmModel {
            kernel,
            dim,
            machine: OvoMachine { classes, pairs },
            support,
        })
    }
}

fn check_dims(features: &[FeatureVector]) -> Result<usize> {
    let dim = features.first().map_or(0, FeatureVector::len);
    for f in features {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: f.len(),
            });
        }
    }
    Ok(dim)
}

/// Trains a histogram-intersection SVM on `features` with concept `labels`.
pub fn svm_train(features: &[FeatureVector], labels: &[usize], c: f64, params: &SmoParams) -> Result<SvmModel> {
    svm_train_with(KernelKind::HistogramIntersection, features, labels, c, params)
}

pub fn svm_train_with(
    kernel: KernelKind,
    features: &[FeatureVector],
    labels: &[usize],
    c: f64,
    params: &SmoParams,
) -> Result<SvmModel> {
    if labels.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    let dim = check_dims(features)?;
    let gram = FeatureGram::new(kernel, features);
    let idx: Vec<usize> = (0..features.len()).collect();
    let machine = train_ovo(&gram, &idx, labels, c, params)?;
    if machine.classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    Ok(SvmModel::pack(kernel, dim, machine, &gram.vectors))
}

pub fn svm_predict(model: &SvmModel, feature: &FeatureVector) -> Result<usize> {
    model.predict(feature)
}

/// Powers of two 2^-3 ..= 2^7.
pub fn default_c_grid() -> Vec<f64> {
    (-3..=7).map(|e| 2f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CSelection {
    pub c: f64,
    /// Mean inner-fold accuracy per grid value, in grid order.
    pub scores: Vec<f64>,
}

/// Chooses C by inner cross-validation over the samples `idx`; ties go to
/// the smallest C.
pub fn select_c_on(
    src: &dyn GramSource,
    idx: &[usize],
    labels: &[usize],
    grid: &[f64],
    folds: usize,
    seed: u64,
    params: &SmoParams,
) -> Result<CSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty C grid".into()));
    }
    if grid.len() == 1 {
        return Ok(CSelection {
            c: grid[0],
            scores: vec![f64::NAN],
        });
    }
    let plan = evaluation::make_folds(labels, folds.min(idx.len()).max(2), seed)?;
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..plan.folds.len()).map(move |f| (g, f)))
        .collect();
    let accs = par::map(&jobs, |&(g, f)| -> Result<f64> {
        let test = &plan.folds[f];
        let (train_idx, train_lab): (Vec<usize>, Vec<usize>) = (0..idx.len())
            .filter(|&i| plan.fold_of[i] != f)
            .map(|i| (idx[i], labels[i]))
            .unzip();
        if test.is_empty() {
            return Ok(f64::NAN);
        }
        let m = train_ovo(src, &train_idx, &train_lab, grid[g], params)?;
        let correct = test
            .iter()
            .filter(|&&i| m.predict_with(|s| src.eval(idx[i], s)) == labels[i])
            .count();
        Ok(correct as f64 / test.len() as f64)
    });
    let accs = accs.into_iter().collect::<Result<Vec<f64>>>()?;
    let nf = plan.folds.len();
    let scores: Vec<f64> = (0..grid.len())
        .map(|g| {
            let v: Vec<f64> = accs[g * nf..(g + 1) * nf]
                .iter()
                .copied()
                .filter(|a| !a.is_nan())
                .collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        })
        .collect();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    let mut best = order[0];
    for &g in &order[1..] {
        if scores[g] > scores[best] {
            best = g;
        }
    }
    Ok(CSelection { c: grid[best], scores })
}

/// [`select_c_on`] over dense feature vectors.
pub fn select_c(
    features: &[FeatureVector],
    labels: &[usize],
    grid: &[f64],
    folds: usize,
    seed: u64,
    params: &SmoParams,
) -> Result<CSelection> {
    check_dims(features)?;
    let gram = FeatureGram::new(KernelKind::HistogramIntersection, features);
    let idx: Vec<usize> = (0..features.len()).collect();
    select_c_on(&gram, &idx, labels, grid, folds, seed, params)
}
