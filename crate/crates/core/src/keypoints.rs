//! DoG interest points and 128-D SIFT descriptors.
//!
//! The detector follows Lowe's construction: a Gaussian scale space with
//! `scales_per_octave` intervals, difference-of-Gaussian extrema over 26
//! neighbours, quadratic sub-pixel refinement, contrast and edge-response
//! rejection, and a 36-bin orientation histogram where every peak within
//! 80% of the maximum yields its own keypoint. Descriptors are 4×4 cells of
//! 8-bin gradient histograms with trilinear interpolation, normalized,
//! clamped at 0.2 and renormalized.
//!
//! Orientation angles are measured in image coordinates (x right, y down),
//! i.e. clockwise on screen.

use std::f32::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::seed;

pub const DESCRIPTOR_LEN: usize = 128;
const DESCR_CELLS: usize = 4;
const DESCR_BINS: usize = 8;
const DESCR_CLAMP: f32 = 0.2;
const ORI_BINS: usize = 36;
const ORI_PEAK_RATIO: f32 = 0.8;
const ORI_SIGMA_FACTOR: f32 = 1.5;
const DESCR_SCALE_FACTOR: f32 = 3.0;
const EXTREMUM_BORDER: usize = 5;
const MAX_REFINE_STEPS: usize = 5;
const MIN_DETECT_SIDE: u32 = 32;
const MIN_OCTAVE_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Gaussian σ in input-image pixels.
    pub scale: f32,
    /// Radians in `[0, 2π)`.
    pub orientation: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn norm(&self) -> f32 {
        self.0.iter().map(|v| v * v).sum::<f32>().sqrt()
    }
}

impl AsRef<[f32]> for Descriptor {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// A keypoint with its descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiftParams {
    pub scales_per_octave: usize,
    pub sigma0: f32,
    /// Minimum |D(x̂)| of a refined extremum, image range `[0, 1]`.
    pub contrast_threshold: f32,
    /// Maximum ratio of principal curvatures.
    pub edge_threshold: f32,
    /// Double the image before building the scale space.
    pub upsample: bool,
    /// Blur already present in the input image.
    pub assumed_blur: f32,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            scales_per_octave: 3,
            sigma0: 1.6,
            contrast_threshold: 0.03,
            edge_threshold: 10.0,
            upsample: false,
            assumed_blur: 0.5,
        }
    }
}

impl SiftParams {
    /// Canonical textual form; the cache fingerprint is derived from it.
    pub fn canonical(&self) -> String {
        format!(
            "dog-sift/1;s={};sigma0={};contrast={};edge={};upsample={};blur={}",
            self.scales_per_octave,
            self.sigma0,
            self.contrast_threshold,
            self.edge_threshold,
            self.upsample,
            self.assumed_blur
        )
    }

    pub fn fingerprint(&self) -> u64 {
        seed::fingerprint(self.canonical().as_bytes())
    }
}

/// Single-channel `f32` raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl LumaImage {
    pub fn new(width: usize, height: usize) -> Self {
        LumaImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        LumaImage { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Rotates by 90°: the pixel at `(x, y)` moves to `(height - 1 - y, x)`.
    pub fn rotate90(&self) -> LumaImage {
        let (w, h) = (self.width, self.height);
        let mut out = LumaImage::new(h, w);
        for y in 0..h {
            for x in 0..w {
                out.data[x * h + (h - 1 - y)] = self.at(x, y);
            }
        }
        out
    }
}

/// ITU-R BT.601 luma scaled to `[0, 1]`.
pub fn to_luma(rgb: &RgbImage) -> LumaImage {
    let (w, h) = rgb.dimensions();
    let data = rgb
        .pixels()
        .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
        .collect();
    LumaImage {
        width: w as usize,
        height: h as usize,
        data,
    }
}

#[inline]
fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = ((3.0 * sigma).ceil() as isize).max(1);
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with reflect-101 borders.
pub fn gaussian_blur(img: &LumaImage, sigma: f32) -> LumaImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut tmp = LumaImage::new(w, h);
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f32;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * row[reflect101(x as isize + t as isize - r, w)];
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let mut out = LumaImage::new(w, h);
    for y in 0..h {
        for (t, kv) in k.iter().enumerate() {
            let sy = reflect101(y as isize + t as isize - r, h);
            let src = &tmp.data[sy * w..(sy + 1) * w];
            let dst = &mut out.data[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

fn upsample2x(img: &LumaImage) -> LumaImage {
    let (w, h) = (img.width * 2, img.height * 2);
    LumaImage::from_fn(w, h, |x, y| {
        let sx = (x as f32 * 0.5).min((img.width - 1) as f32);
        let sy = (y as f32 * 0.5).min((img.height - 1) as f32);
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
        let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
        let top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
        let bot = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

fn downsample2x(img: &LumaImage) -> LumaImage {
    let (w, h) = (img.width / 2, img.height / 2);
    LumaImage::from_fn(w, h, |x, y| img.at(2 * x, 2 * y))
}

struct Octave {
    gauss: Vec<LumaImage>,
    dog: Vec<LumaImage>,
    /// Gradient magnitude and angle of each Gaussian layer, filled lazily.
    grads: Vec<Option<(Vec<f32>, Vec<f32>)>>,
}

impl Octave {
    fn gradients(&mut self, layer: usize) -> (&LumaImage, &[f32], &[f32]) {
        if self.grads[layer].is_none() {
            let img = &self.gauss[layer];
            let (w, h) = (img.width, img.height);
            let mut mag = vec![0.0f32; w * h];
            let mut ang = vec![0.0f32; w * h];
            for y in 1..h.saturating_sub(1) {
                for x in 1..w.saturating_sub(1) {
                    let gx = img.at(x + 1, y) - img.at(x - 1, y);
                    let gy = img.at(x, y + 1) - img.at(x, y - 1);
                    mag[y * w + x] = (gx * gx + gy * gy).sqrt();
                    ang[y * w + x] = gy.atan2(gx);
                }
            }
            self.grads[layer] = Some((mag, ang));
        }
        let (mag, ang) = self.grads[layer].as_ref().expect("just filled");
        (&self.gauss[layer], mag, ang)
    }
}

struct Pyramid {
    octaves: Vec<Octave>,
    /// Input-pixel size of one base-octave pixel (0.5 when upsampled).
    base_step: f32,
    s: usize,
    sigma0: f32,
}

fn build_pyramid(gray: &LumaImage, p: &SiftParams) -> Result<Pyramid> {
    let s = p.scales_per_octave.max(1);
    let (base, base_step, present) = if p.upsample {
        (upsample2x(gray), 0.5, 2.0 * p.assumed_blur)
    } else {
        (gray.clone(), 1.0, p.assumed_blur)
    };
    let min_side = base.width.min(base.height) as u32;
    if min_side < MIN_DETECT_SIDE {
        return Err(Error::ImageTooSmall {
            width: base.width as u32,
            height: base.height as u32,
            min: MIN_DETECT_SIDE,
        });
    }
    let mut n_octaves = 1;
    while (min_side as usize >> n_octaves) >= MIN_OCTAVE_SIDE {
        n_octaves += 1;
    }

    let k = 2f32.powf(1.0 / s as f32);
    let mut increments = vec![0.0f32; s + 3];
    for (i, inc) in increments.iter_mut().enumerate().skip(1) {
        let prev = p.sigma0 * k.powi(i as i32 - 1);
        let cur = prev * k;
        *inc = (cur * cur - prev * prev).sqrt();
    }

    let first = (p.sigma0 * p.sigma0 - present * present).max(0.01).sqrt();
    let mut seed_img = gaussian_blur(&base, first);
    let mut octaves = Vec::with_capacity(n_octaves);
    for o in 0..n_octaves {
        if o > 0 {
            let prev: &Octave = &octaves[o - 1];
            seed_img = downsample2x(&prev.gauss[s]);
        }
        let mut gauss = Vec::with_capacity(s + 3);
        gauss.push(seed_img.clone());
        for inc in &increments[1..] {
            let next = gaussian_blur(gauss.last().expect("non-empty"), *inc);
            gauss.push(next);
        }
        let dog = gauss
            .windows(2)
            .map(|pair| LumaImage {
                width: pair[0].width,
                height: pair[0].height,
                data: pair[1].data.iter().zip(&pair[0].data).map(|(b, a)| b - a).collect(),
            })
            .collect();
        octaves.push(Octave {
            grads: vec![None; gauss.len()],
            gauss,
            dog,
        });
    }
    Ok(Pyramid {
        octaves,
        base_step,
        s,
        sigma0: p.sigma0,
    })
}

/// Keypoint position expressed inside the pyramid.
#[derive(Debug, Clone, Copy)]
struct OctaveFrame {
    octave: usize,
    layer: usize,
    x: f32,
    y: f32,
    sigma: f32,
}

impl Pyramid {
    fn frame_of(&self, kp: &Keypoint) -> OctaveFrame {
        let s = self.s as f32;
        let base_scale = kp.scale / self.base_step;
        let t = s * (base_scale / self.sigma0).max(1e-6).log2();
        let octave = (((t - 0.5) / s).floor().max(0.0) as usize).min(self.octaves.len() - 1);
        let step = self.base_step * (1u32 << octave) as f32;
        let rel = t - octave as f32 * s;
        let layer = (rel.round().max(0.0) as usize).min(self.s + 2);
        OctaveFrame {
            octave,
            layer,
            x: kp.x / step,
            y: kp.y / step,
            sigma: kp.scale / step,
        }
    }

    fn keypoint_of(&self, octave: usize, x: f32, y: f32, layer: f32) -> Keypoint {
        let step = self.base_step * (1u32 << octave) as f32;
        let sigma = self.sigma0 * 2f32.powf(layer / self.s as f32);
        Keypoint {
            x: x * step,
            y: y * step,
            scale: sigma * step,
            orientation: 0.0,
        }
    }
}

fn is_extremum(dog: &[LumaImage], l: usize, x: usize, y: usize) -> bool {
    let v = dog[l].at(x, y);
    let w = dog[l].width;
    let greater = v > 0.0;
    for img in &dog[l - 1..=l + 1] {
        for yy in y - 1..=y + 1 {
            let row = &img.data[yy * w + x - 1..yy * w + x + 2];
            for &n in row {
                if greater && n > v || !greater && n < v {
                    return false;
                }
            }
        }
    }
    true
}

fn solve3(h: [[f32; 3]; 3], b: [f32; 3]) -> Option<[f32; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let mut out = [0.0f32; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = h;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *o = (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
            / det;
    }
    Some(out)
}

/// Quadratic refinement of a discrete extremum. Returns sub-pixel
/// `(x, y, layer)` in octave coordinates.
fn refine(
    dog: &[LumaImage],
    s: usize,
    p: &SiftParams,
    mut l: usize,
    mut x: usize,
    mut y: usize,
) -> Option<(f32, f32, f32)> {
    let (w, h) = (dog[0].width, dog[0].height);
    let mut offset = [0.0f32; 3];
    let mut grad = [0.0f32; 3];
    let mut converged = false;
    for _ in 0..MAX_REFINE_STEPS {
        let d = |li: usize, xi: usize, yi: usize| dog[li].at(xi, yi);
        let v = d(l, x, y);
        grad = [
            0.5 * (d(l, x + 1, y) - d(l, x - 1, y)),
            0.5 * (d(l, x, y + 1) - d(l, x, y - 1)),
            0.5 * (d(l + 1, x, y) - d(l - 1, x, y)),
        ];
        let dxx = d(l, x + 1, y) + d(l, x - 1, y) - 2.0 * v;
        let dyy = d(l, x, y + 1) + d(l, x, y - 1) - 2.0 * v;
        let dss = d(l + 1, x, y) + d(l - 1, x, y) - 2.0 * v;
        let dxy = 0.25 * (d(l, x + 1, y + 1) - d(l, x - 1, y + 1) - d(l, x + 1, y - 1) + d(l, x - 1, y - 1));
        let dxs = 0.25 * (d(l + 1, x + 1, y) - d(l + 1, x - 1, y) - d(l - 1, x + 1, y) + d(l - 1, x - 1, y));
        let dys = 0.25 * (d(l + 1, x, y + 1) - d(l + 1, x, y - 1) - d(l - 1, x, y + 1) + d(l - 1, x, y - 1));
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let sol = solve3(hess, grad)?;
        offset = [-sol[0], -sol[1], -sol[2]];
        if offset.iter().all(|o| o.abs() < 0.5) {
            converged = true;
            break;
        }
        if offset.iter().any(|o| o.abs() > (w.max(h) as f32)) {
            return None;
        }
        let nx = x as isize + offset[0].round() as isize;
        let ny = y as isize + offset[1].round() as isize;
        let nl = l as isize + offset[2].round() as isize;
        let b = EXTREMUM_BORDER as isize;
        if nl < 1 || nl > s as isize || nx < b || ny < b || nx >= w as isize - b || ny >= h as isize - b {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        l = nl as usize;
    }
    if !converged {
        return None;
    }

    let v = dog[l].at(x, y);
    let contrast = v + 0.5 * (grad[0] * offset[0] + grad[1] * offset[1] + grad[2] * offset[2]);
    if contrast.abs() < p.contrast_threshold {
        return None;
    }
    let d = |xi: usize, yi: usize| dog[l].at(xi, yi);
    let dxx = d(x + 1, y) + d(x - 1, y) - 2.0 * v;
    let dyy = d(x, y + 1) + d(x, y - 1) - 2.0 * v;
    let dxy = 0.25 * (d(x + 1, y + 1) - d(x - 1, y + 1) - d(x + 1, y - 1) + d(x - 1, y - 1));
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = p.edge_threshold;
    if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
        return None;
    }
    Some((x as f32 + offset[0], y as f32 + offset[1], l as f32 + offset[2]))
}

fn orientations(oct: &mut Octave, frame: OctaveFrame) -> Vec<f32> {
    let (img, mag, ang) = oct.gradients(frame.layer);
    let (w, h) = (img.width as isize, img.height as isize);
    let sigma = ORI_SIGMA_FACTOR * frame.sigma;
    let radius = (3.0 * sigma).round() as isize;
    let (cx, cy) = (frame.x.round() as isize, frame.y.round() as isize);
    let denom = -1.0 / (2.0 * sigma * sigma);
    let mut raw = [0.0f32; ORI_BINS];
    for dy in -radius..=radius {
        let y = cy + dy;
        if y <= 0 || y >= h - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let x = cx + dx;
            if x <= 0 || x >= w - 1 {
                continue;
            }
            let i = (y * w + x) as usize;
            let weight = ((dx * dx + dy * dy) as f32 * denom).exp();
            let mut bin = ((ORI_BINS as f32 * ang[i] / (2.0 * PI)).round() as isize).rem_euclid(ORI_BINS as isize);
            if bin as usize >= ORI_BINS {
                bin = 0;
            }
            raw[bin as usize] += weight * mag[i];
        }
    }
    let n = ORI_BINS;
    let mut hist = [0.0f32; ORI_BINS];
    for i in 0..n {
        let t = |k: isize| raw[(i as isize + k).rem_euclid(n as isize) as usize];
        hist[i] = (t(-2) + t(2)) * (1.0 / 16.0) + (t(-1) + t(1)) * (4.0 / 16.0) + t(0) * (6.0 / 16.0);
    }
    let max = hist.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let left = hist[(i + n - 1) % n];
        let right = hist[(i + 1) % n];
        let c = hist[i];
        if c > left && c > right && c >= ORI_PEAK_RATIO * max {
            let shift = 0.5 * (left - right) / (left - 2.0 * c + right);
            let bin = i as f32 + shift;
            let mut theta = (2.0 * PI * bin / n as f32).rem_euclid(2.0 * PI);
            if theta >= 2.0 * PI {
                theta = 0.0;
            }
            out.push(theta);
        }
    }
    out
}

fn describe_in(oct: &mut Octave, frame: OctaveFrame, orientation: f32) -> Result<Descriptor> {
    let (img, mag, ang) = oct.gradients(frame.layer);
    let (w, h) = (img.width, img.height);
    let d = DESCR_CELLS as f32;
    let hist_width = DESCR_SCALE_FACTOR * frame.sigma;
    let margin = std::f32::consts::SQRT_2 * hist_width * d * 0.5 + 1.0;
    if frame.x - margin < 0.0
        || frame.y - margin < 0.0
        || frame.x + margin > (w - 1) as f32
        || frame.y + margin > (h - 1) as f32
    {
        return Err(Error::KeypointTooCloseToEdge { x: frame.x, y: frame.y });
    }

    let radius = (hist_width * std::f32::consts::SQRT_2 * (d + 1.0) * 0.5).round() as isize;
    let (cos_t, sin_t) = (orientation.cos() / hist_width, orientation.sin() / hist_width);
    let bins_per_rad = DESCR_BINS as f32 / (2.0 * PI);
    let exp_scale = -1.0 / (d * d * 0.5);
    let (cx, cy) = (frame.x.round() as isize, frame.y.round() as isize);
    // Fractional part of the keypoint location is carried into the sample offsets.
    let (fx, fy) = (frame.x - cx as f32, frame.y - cy as f32);

    const HD: usize = DESCR_CELLS + 2;
    const HB: usize = DESCR_BINS + 2;
    let mut hist = [0.0f32; HD * HD * HB];
    for i in -radius..=radius {
        for j in -radius..=radius {
            let (ox, oy) = (j as f32 - fx, i as f32 - fy);
            let c_rot = ox * cos_t + oy * sin_t;
            let r_rot = -ox * sin_t + oy * cos_t;
            let rbin = r_rot + d / 2.0 - 0.5;
            let cbin = c_rot + d / 2.0 - 0.5;
            if !(rbin > -1.0 && rbin < d && cbin > -1.0 && cbin < d) {
                continue;
            }
            let (px, py) = (cx + j, cy + i);
            if px <= 0 || py <= 0 || px >= w as isize - 1 || py >= h as isize - 1 {
                continue;
            }
            let idx = py as usize * w + px as usize;
            let weight = ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let m = mag[idx] * weight;
            let mut obin = (ang[idx] - orientation) * bins_per_rad;
            obin = obin.rem_euclid(DESCR_BINS as f32);

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (dr, dc, dob) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            let o0 = (o0 as usize).min(DESCR_BINS - 1);
            for (ri, wr) in [(0isize, 1.0 - dr), (1, dr)] {
                for (ci, wc) in [(0isize, 1.0 - dc), (1, dc)] {
                    for (oi, wo) in [(0usize, 1.0 - dob), (1, dob)] {
                        let rr = (r0 + ri + 1) as usize;
                        let cc = (c0 + ci + 1) as usize;
                        let oo = o0 + oi;
                        hist[(rr * HD + cc) * HB + oo] += m * wr * wc * wo;
                    }
                }
            }
        }
    }

    let mut out = [0.0f32; DESCRIPTOR_LEN];
    for r in 0..DESCR_CELLS {
        for c in 0..DESCR_CELLS {
            let base = ((r + 1) * HD + (c + 1)) * HB;
            // Orientation bin 8 wraps to bin 0.
            let wrap = hist[base + DESCR_BINS];
            for o in 0..DESCR_BINS {
                let mut v = hist[base + o];
                if o == 0 {
                    v += wrap;
                }
                out[(r * DESCR_CELLS + c) * DESCR_BINS + o] = v;
            }
        }
    }
    normalize_clamp(&mut out)?;
    Ok(Descriptor(out))
}

fn normalize_clamp(v: &mut [f32; DESCRIPTOR_LEN]) -> Result<()> {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm <= f64::EPSILON {
        return Err(Error::DegenerateDescriptor);
    }
    for x in v.iter_mut() {
        *x = ((*x as f64 / norm) as f32).min(DESCR_CLAMP);
    }
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}

fn detect_in(pyr: &mut Pyramid, p: &SiftParams) -> Vec<Keypoint> {
    let s = pyr.s;
    let prefilter = 0.5 * p.contrast_threshold;
    let mut out = Vec::new();
    for o in 0..pyr.octaves.len() {
        let mut candidates = Vec::new();
        {
            let dog = &pyr.octaves[o].dog;
            let (w, h) = (dog[0].width, dog[0].height);
            if w <= 2 * EXTREMUM_BORDER || h <= 2 * EXTREMUM_BORDER {
                continue;
            }
            for l in 1..=s {
                for y in EXTREMUM_BORDER..h - EXTREMUM_BORDER {
                    for x in EXTREMUM_BORDER..w - EXTREMUM_BORDER {
                        let v = dog[l].at(x, y);
                        if v.abs() <= prefilter || !is_extremum(dog, l, x, y) {
                            continue;
                        }
                        if let Some(found) = refine(dog, s, p, l, x, y) {
                            candidates.push(found);
                        }
                    }
                }
            }
        }
        for (x, y, layer) in candidates {
            let kp = pyr.keypoint_of(o, x, y, layer);
            let frame = pyr.frame_of(&kp);
            let oct = &mut pyr.octaves[frame.octave];
            for theta in orientations(oct, frame) {
                out.push(Keypoint {
                    orientation: theta,
                    ..kp
                });
            }
        }
    }
    out
}

/// DoG keypoints of a grayscale image.
pub fn detect(gray: &LumaImage, params: &SiftParams) -> Result<Vec<Keypoint>> {
    let mut pyr = build_pyramid(gray, params)?;
    Ok(detect_in(&mut pyr, params))
}

/// SIFT descriptor of one keypoint.
pub fn describe(gray: &LumaImage, kp: &Keypoint, params: &SiftParams) -> Result<Descriptor> {
    let mut pyr = build_pyramid(gray, params)?;
    let frame = pyr.frame_of(kp);
    describe_in(&mut pyr.octaves[frame.octave], frame, kp.orientation)
}

/// Detects keypoints on the luma of `rgb` and describes them; keypoints
/// too close to the border for a full descriptor are dropped.
pub fn detect_and_describe(rgb: &RgbImage, params: &SiftParams) -> Result<Vec<Feature>> {
    detect_and_describe_luma(&to_luma(rgb), params)
}

pub fn detect_and_describe_luma(gray: &LumaImage, params: &SiftParams) -> Result<Vec<Feature>> {
    let mut pyr = build_pyramid(gray, params)?;
    let keypoints = detect_in(&mut pyr, params);
    let (w, h) = (gray.width as f32, gray.height as f32);
    let mut out = Vec::with_capacity(keypoints.len());
    for kp in keypoints {
        if !(kp.x >= 0.0 && kp.y >= 0.0 && kp.x < w && kp.y < h) {
            continue;
        }
        let frame = pyr.frame_of(&kp);
        if let Ok(descriptor) = describe_in(&mut pyr.octaves[frame.octave], frame, kp.orientation) {
            out.push(Feature {
                keypoint: kp,
                descriptor,
            });
        }
    }
    Ok(out)
}

const CACHE_MAGIC: &[u8; 5] = b"SCAN1";
const RECORD_FLOATS: usize = 4 + DESCRIPTOR_LEN;

/// Per-image detector output tagged with the parameter fingerprint that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorCache {
    pub fingerprint: u64,
    pub features: Vec<Feature>,
}

impl DescriptorCache {
    /// Little-endian layout: magic `SCAN1`, u64 fingerprint, u32 count, then
    /// per keypoint f32 x, y, scale, orientation and 128 f32 descriptor values.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(17 + self.features.len() * RECORD_FLOATS * 4);
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&self.fingerprint.to_le_bytes());
        buf.extend_from_slice(&(self.features.len() as u32).to_le_bytes());
        for f in &self.features {
            let k = &f.keypoint;
            for v in [k.x, k.y, k.scale, k.orientation].iter().chain(f.descriptor.0.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptCache {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 17 || &bytes[..5] != CACHE_MAGIC {
            return Err(corrupt("bad header"));
        }
        let fingerprint = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
        let count = u32::from_le_bytes(bytes[13..17].try_into().expect("4 bytes")) as usize;
        let body = &bytes[17..];
        if body.len() != count * RECORD_FLOATS * 4 {
            return Err(corrupt("length does not match keypoint count"));
        }
        let mut floats = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut features = Vec::with_capacity(count);
        for _ in 0..count {
            let mut head = [0.0f32; 4];
            head.iter_mut().for_each(|v| *v = floats.next().expect("sized"));
            let mut desc = [0.0f32; DESCRIPTOR_LEN];
            desc.iter_mut().for_each(|v| *v = floats.next().expect("sized"));
            features.push(Feature {
                keypoint: Keypoint {
                    x: head[0],
                    y: head[1],
                    scale: head[2],
                    orientation: head[3],
                },
                descriptor: Descriptor(desc),
            });
        }
        Ok(DescriptorCache { fingerprint, features })
    }

    /// Writes atomically via a sibling temporary file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("scan.tmp");
        let mut file = fs::File::create(&tmp).map_err(Error::io(format!("creating {}", tmp.display())))?;
        file.write_all(&self.encode())
            .map_err(Error::io(format!("writing {}", tmp.display())))?;
        drop(file);
        fs::rename(&tmp, path).map_err(Error::io(format!("renaming to {}", path.display())))
    }

    /// Reads a cache file, rejecting it if it was produced under a
    /// different parameter fingerprint.
    pub fn read(path: &Path, expected_fingerprint: u64) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(format!("reading {}", path.display())))?;
        let cache = Self::decode(&bytes, path)?;
        if cache.fingerprint != expected_fingerprint {
            return Err(Error::CacheFingerprintMismatch {
                expected: expected_fingerprint,
                found: cache.fingerprint,
            });
        }
        Ok(cache)
    }
}
