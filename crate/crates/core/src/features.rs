//! Low-level color and texture features of a grid region, plus concatenation
//! for feature fusion.

use std::fmt::Write as _;
use std::ops::Range;

use image::RgbImage;

use crate::dataset::RegionRect;
use crate::error::{Error, Result};

pub const HUE_BINS: usize = 36;
pub const SAT_BINS: usize = 32;
pub const VAL_BINS: usize = 16;
pub const COLHIST_LEN: usize = HUE_BINS + SAT_BINS + VAL_BINS;
pub const MOM_LEN: usize = 9;
pub const WAV_LEN: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    ColHist,
    Mom,
    Wav,
    Cbow,
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub kind: FeatureKind,
    /// Component layout; a single span covering everything for plain kinds.
    pub spans: Vec<(FeatureKind, Range<usize>)>,
}

impl FeatureVector {
    pub fn new(kind: FeatureKind, values: Vec<f64>) -> Self {
        let spans = vec![(kind, 0..values.len())];
        FeatureVector { values, kind, spans }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    /// Degrees in `[0, 360)`.
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Hexcone RGB→HSV. Achromatic pixels get hue 0.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> Hsv {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let mut h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    Hsv { h, s, v: max }
}

pub fn hsv_to_rgb(hsv: Hsv) -> [u8; 3] {
    let c = hsv.v * hsv.s;
    let hp = (hsv.h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = hsv.v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// HSV pixels of one rectangular region, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvRegion {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Hsv>,
}

impl HsvRegion {
    pub fn from_rgb(img: &RgbImage, rect: &RegionRect) -> Self {
        let mut pixels = Vec::with_capacity(rect.area() as usize);
        for y in rect.y1..rect.y2 {
            for x in rect.x1..rect.x2 {
                pixels.push(rgb_to_hsv(img.get_pixel(x, y).0));
            }
        }
        HsvRegion {
            width: rect.width() as usize,
            height: rect.height() as usize,
            pixels,
        }
    }

    pub fn from_pixels(width: usize, height: usize, rgb: &[[u8; 3]]) -> Self {
        assert_eq!(rgb.len(), width * height);
        HsvRegion {
            width,
            height,
            pixels: rgb.iter().map(|p| rgb_to_hsv(*p)).collect(),
        }
    }

    /// Channel `c` (0 = H/360, 1 = S, 2 = V) as a plane.
    pub fn channel(&self, c: usize) -> Plane {
        let data = self
            .pixels
            .iter()
            .map(|p| match c {
                0 => p.h / 360.0,
                1 => p.s,
                _ => p.v,
            })
            .collect();
        Plane {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

fn bin(value: f64, upper: f64, bins: usize) -> usize {
    ((value / upper * bins as f64).floor() as usize).min(bins - 1)
}

/// 36 hue + 32 saturation + 16 value bins, each sub-histogram summing to
/// the pixel count.
pub fn color_histogram(region: &HsvRegion) -> Result<FeatureVector> {
    if region.pixels.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut hist = vec![0.0; COLHIST_LEN];
    for p in &region.pixels {
        let h = if p.h >= 360.0 { 0 } else { bin(p.h, 360.0, HUE_BINS) };
        hist[h] += 1.0;
        hist[HUE_BINS + bin(p.s, 1.0, SAT_BINS)] += 1.0;
        hist[HUE_BINS + SAT_BINS + bin(p.v, 1.0, VAL_BINS)] += 1.0;
    }
    Ok(FeatureVector::new(FeatureKind::ColHist, hist))
}

/// Mean, standard deviation and signed cube root of the third central
/// moment for each of H/360, S and V.
pub fn color_moments(region: &HsvRegion) -> Result<FeatureVector> {
    if region.pixels.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let n = region.pixels.len() as f64;
    let mut out = Vec::with_capacity(MOM_LEN);
    for c in 0..3 {
        let plane = region.channel(c);
        let mean = plane.data.iter().sum::<f64>() / n;
        let (mut m2, mut m3) = (0.0, 0.0);
        for v in &plane.data {
            let d = v - mean;
            m2 += d * d;
            m3 += d * d * d;
        }
        out.extend([mean, (m2 / n).sqrt(), (m3 / n).cbrt()]);
    }
    Ok(FeatureVector::new(FeatureKind::Mom, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Replicates the last column/row so both sides are even.
    pub fn pad_even(&self) -> Plane {
        let w = self.width + self.width % 2;
        let h = self.height + self.height % 2;
        if (w, h) == (self.width, self.height) {
            return self.clone();
        }
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(x.min(self.width - 1), y.min(self.height - 1)));
            }
        }
        Plane {
            width: w,
            height: h,
            data,
        }
    }

    fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }
}

/// One level of the orthonormal 2-D Haar transform. `hl` is high-pass
/// along x and low-pass along y (it responds to vertical edges); `lh` is
/// the transpose case.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarLevel {
    pub ll: Plane,
    pub lh: Plane,
    pub hl: Plane,
    pub hh: Plane,
}

/// Forward transform of an even-sized plane.
pub fn haar2d(p: &Plane) -> HaarLevel {
    assert!(
        p.width.is_multiple_of(2) && p.height.is_multiple_of(2),
        "haar2d needs even dimensions"
    );
    let (w, h) = (p.width / 2, p.height / 2);
    let mut bands = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
    for y in 0..h {
        for x in 0..w {
            let a = p.at(2 * x, 2 * y);
            let b = p.at(2 * x + 1, 2 * y);
            let c = p.at(2 * x, 2 * y + 1);
            let d = p.at(2 * x + 1, 2 * y + 1);
            let i = y * w + x;
            bands[0][i] = (a + b + c + d) / 2.0;
            bands[1][i] = (a + b - c - d) / 2.0;
            bands[2][i] = (a - b + c - d) / 2.0;
            bands[3][i] = (a - b - c + d) / 2.0;
        }
    }
    let [ll, lh, hl, hh] = bands.map(|data| Plane {
        width: w,
        height: h,
        data,
    });
    HaarLevel { ll, lh, hl, hh }
}

pub fn inverse_haar2d(level: &HaarLevel) -> Plane {
    let (w, h) = (level.ll.width, level.ll.height);
    let mut data = vec![0.0; 4 * w * h];
    let ow = 2 * w;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (s, v, u, t) = (level.ll.data[i], level.lh.data[i], level.hl.data[i], level.hh.data[i]);
            data[2 * y * ow + 2 * x] = (s + v + u + t) / 2.0;
            data[2 * y * ow + 2 * x + 1] = (s + v - u - t) / 2.0;
            data[(2 * y + 1) * ow + 2 * x] = (s - v + u - t) / 2.0;
            data[(2 * y + 1) * ow + 2 * x + 1] = (s - v - u + t) / 2.0;
        }
    }
    Plane {
        width: ow,
        height: 2 * h,
        data,
    }
}

/// Mean squared coefficient of LH, HL, HH at levels 1 and 2 for H, S, V:
/// `[H: L1-LH, L1-HL, L1-HH, L2-LH, L2-HL, L2-HH | S: … | V: …]`.
pub fn dwt_texture(region: &HsvRegion) -> Result<FeatureVector> {
    if region.width < 4 || region.height < 4 {
        return Err(Error::RegionTooSmall {
            width: region.width,
            height: region.height,
        });
    }
    let mut out = Vec::with_capacity(WAV_LEN);
    for c in 0..3 {
        let l1 = haar2d(&region.channel(c).pad_even());
        let l2 = haar2d(&l1.ll.pad_even());
        for level in [&l1, &l2] {
            out.extend([level.lh.energy(), level.hl.energy(), level.hh.energy()]);
        }
    }
    Ok(FeatureVector::new(FeatureKind::Wav, out))
}

/// Color histogram, color moments and wavelet texture of one region.
pub fn low_level_features(img: &RgbImage, rect: &RegionRect) -> Result<[FeatureVector; 3]> {
    let region = HsvRegion::from_rgb(img, rect);
    Ok([
        color_histogram(&region)?,
        color_moments(&region)?,
        dwt_texture(&region)?,
    ])
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Concatenates `parts` in order. With `normalize_each`, every part is first
/// scaled to unit L2 norm (all-zero parts stay zero).
pub fn concat_features(parts: &[FeatureVector], normalize_each: bool) -> FeatureVector {
    if parts.len() == 1 && !normalize_each {
        return parts[0].clone();
    }
    let total = parts.iter().map(FeatureVector::len).sum();
    let mut values = Vec::with_capacity(total);
    let mut spans = Vec::with_capacity(parts.len());
    for part in parts {
        let start = values.len();
        let norm = l2_norm(&part.values);
        if normalize_each && norm > 0.0 {
            values.extend(part.values.iter().map(|v| v / norm));
        } else {
            values.extend_from_slice(&part.values);
        }
        spans.push((part.kind, start..values.len()));
    }
    FeatureVector {
        values,
        kind: FeatureKind::Concat,
        spans,
    }
}

/// One CSV row per region: `image_id,region,label,f0..fk`.
pub fn feature_csv<'a, I>(rows: I) -> String
where
    I: IntoIterator<Item = (&'a str, usize, &'a str, &'a [f64])>,
{
    let mut out = String::new();
    let mut header_done = false;
    for (id, region, label, values) in rows {
        if !header_done {
            out.push_str("image_id,region,label");
            for i in 0..values.len() {
                let _ = write!(out, ",f{i}");
            }
            out.push('\n');
            header_done = true;
        }
        let _ = write!(out, "{id},{region},{label}");
        for v in values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}
