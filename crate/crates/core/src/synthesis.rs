//! Pseudo support/query episode synthesis.
//!
//! A pair is built in four steps:
//!
//! 1. a random Bézier contour splits the support image into foreground and
//!    background, and the background is cut into 1 to 5 subregions by further
//!    random contours;
//! 2. the support foreground gets Gaussian noise around a random RGB mean
//!    `m_sf`, every background subregion around its own mean `m_sb` with
//!    `‖m_sb − m_sf‖ ∈ [a, b]`;
//! 3. the query contour is the support contour with jittered control points,
//!    a random rotation, a scale in `[0.5, 1.5]` and a random placement; its
//!    background is partitioned afresh;
//! 4. the query foreground mean obeys `‖m_qf − m_sf‖ ∈ [c, d]`, and every query
//!    background mean obeys `‖m_qb − m_qf‖ ∈ [a, b]` and
//!    `‖m_qb − m_sf‖ > ‖m_qf − m_sf‖`.
//!
//! All distances are Euclidean over RGB triples.

use std::f64::consts::TAU;

use image::RgbImage;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curriculum::{StepParams, MAX_RGB_DISTANCE};
use crate::geometry::{
    extract_polygon_gt, rasterize, sample_bezier_contour, BezierContour, Mask, Point, Polygon16, CONTROL_POINT_COUNT,
    DEFAULT_MIN_AREA,
};
use crate::rng::{rng_from_seed, split_seed, PairRng};
use crate::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 20.0;
pub const MIN_IMAGE_SIDE: u32 = 64;
pub const MAX_SUBREGIONS: usize = 5;
pub const LAYOUT_ATTEMPTS: usize = 50;
pub const MAX_REJECTIONS: usize = 10_000;
pub const PAIR_ATTEMPTS: u64 = 8;
pub const MIN_FOREGROUND_FRACTION: f64 = 0.02;
pub const MAX_FOREGROUND_FRACTION: f64 = 0.60;

pub type Rgb = [f64; 3];

pub fn rgb_distance(p: &Rgb, q: &Rgb) -> f64 {
    let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: Rgb,
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn new(mean: Rgb, sigma: f64) -> Result<Self> {
        let spec = NoiseSpec { mean, sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.iter().all(|v| (0.0..=255.0).contains(v)) {
            return Err(Error::parameter(format!("noise mean {:?} outside [0, 255]", self.mean)));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::parameter(format!("noise sigma {} must be positive", self.sigma)));
        }
        Ok(())
    }
}

/// Foreground contour plus a partition of the remaining pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLayout {
    pub foreground: BezierContour,
    pub foreground_mask: Mask,
    pub background: Vec<Mask>,
}

impl RegionLayout {
    /// Per-pixel region index: 0 for foreground, `i + 1` for background
    /// subregion `i`.
    pub fn labels(&self) -> Result<Vec<u8>> {
        let mut labels: Vec<u8> =
            self.foreground_mask.bits().iter().map(|&b| if b == 1 { 0 } else { u8::MAX }).collect();
        for (i, sub) in self.background.iter().enumerate() {
            sub.same_shape(&self.foreground_mask)?;
            for (slot, &b) in labels.iter_mut().zip(sub.bits()) {
                if b == 1 {
                    if *slot != u8::MAX {
                        return Err(Error::Shape("background subregions overlap".into()));
                    }
                    *slot = i as u8 + 1;
                }
            }
        }
        if labels.contains(&u8::MAX) {
            return Err(Error::Shape("background subregions do not cover the background".into()));
        }
        Ok(labels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.background.is_empty() || self.background.len() > MAX_SUBREGIONS {
            return Err(Error::Shape(format!(
                "{} background subregions, expected 1..={MAX_SUBREGIONS}",
                self.background.len()
            )));
        }
        self.labels().map(|_| ())
    }
}

/// Ten control points drawn uniformly from `[x0, x1) × [y0, y1)`, visited in
/// angular order around their mean so the closed curve rarely crosses itself.
fn random_contour<R: Rng + ?Sized>(rng: &mut R, x0: f64, y0: f64, x1: f64, y1: f64) -> BezierContour {
    let mut pts: Vec<Point> =
        (0..CONTROL_POINT_COUNT).map(|_| Point::new(rng.random_range(x0..x1), rng.random_range(y0..y1))).collect();
    let c = pts.iter().fold(Point::new(0.0, 0.0), |acc, &p| acc + p) * (1.0 / pts.len() as f64);
    pts.sort_by(|p, q| {
        let ap = (p.y - c.y).atan2(p.x - c.x);
        let aq = (q.y - c.y).atan2(q.x - c.x);
        ap.total_cmp(&aq)
    });
    BezierContour::new(pts).expect("ten control points")
}

fn contour_mask(contour: &BezierContour, width: u32, height: u32) -> Result<Mask> {
    rasterize(&sample_bezier_contour(contour)?, width, height)
}

fn check_side(width: u32, height: u32) -> Result<()> {
    if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
        return Err(Error::parameter(format!("image {width}x{height} smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")));
    }
    Ok(())
}

/// Cut the complement of `foreground` into 1..=5 subregions.
///
/// `k` is drawn uniformly from `1..=5`; each of the first `k − 1` subregions is
/// a random closed contour intersected with what is left of the background,
/// and the remainder is the last one. Contours that would produce an empty
/// subregion or swallow the whole remainder are redrawn; if that keeps
/// happening the layout ends up with fewer subregions.
pub fn partition_background<R: Rng + ?Sized>(rng: &mut R, foreground: &Mask) -> Result<Vec<Mask>> {
    let (w, h) = (foreground.width(), foreground.height());
    let k = rng.random_range(1..=MAX_SUBREGIONS);
    let mut remaining = foreground.complement();
    let mut subregions = Vec::with_capacity(k);
    for _ in 1..k {
        for _ in 0..LAYOUT_ATTEMPTS {
            let contour = random_contour(rng, 0.0, 0.0, w as f64, h as f64);
            let cut = contour_mask(&contour, w, h)?.and(&remaining)?;
            let rest = remaining.minus(&cut)?;
            if !cut.is_empty() && !rest.is_empty() {
                subregions.push(cut);
                remaining = rest;
                break;
            }
        }
    }
    subregions.push(remaining);
    Ok(subregions)
}

pub fn make_support_layout<R: Rng + ?Sized>(rng: &mut R, width: u32, height: u32) -> Result<RegionLayout> {
    check_side(width, height)?;
    let (w, h) = (width as f64, height as f64);
    let total = (width * height) as f64;
    for _ in 0..LAYOUT_ATTEMPTS {
        let contour = random_contour(rng, 0.1 * w, 0.1 * h, 0.9 * w, 0.9 * h);
        let mask = contour_mask(&contour, width, height)?;
        let frac = mask.area() as f64 / total;
        if (MIN_FOREGROUND_FRACTION..=MAX_FOREGROUND_FRACTION).contains(&frac) {
            let background = partition_background(rng, &mask)?;
            return Ok(RegionLayout { foreground: contour, foreground_mask: mask, background });
        }
    }
    Err(Error::LayoutGeneration(format!(
        "no foreground covering {MIN_FOREGROUND_FRACTION}..{MAX_FOREGROUND_FRACTION} of the image in {LAYOUT_ATTEMPTS} attempts"
    )))
}

fn check_band(lo: f64, hi: f64, name: &str) -> Result<()> {
    if !(0.0 <= lo && lo <= hi && hi <= MAX_RGB_DISTANCE) {
        return Err(Error::parameter(format!(
            "{name} band [{lo}, {hi}] must satisfy 0 <= lo <= hi <= {MAX_RGB_DISTANCE}"
        )));
    }
    Ok(())
}

fn uniform_rgb<R: Rng + ?Sized>(rng: &mut R) -> Rgb {
    [rng.random_range(0.0..=255.0), rng.random_range(0.0..=255.0), rng.random_range(0.0..=255.0)]
}

/// Uniform draw from `{p ∈ [0,255]³ : lo ≤ ‖p − center‖ ≤ hi} ∩ accept`.
///
/// The radius is drawn with density ∝ r² on `[lo, hi]` and the direction
/// uniformly on the sphere, which is uniform over the spherical shell; points
/// leaving the cube or failing `accept` are rejected. Zero-width shells
/// (including `lo = hi = 0`) are handled exactly.
fn sample_in_shell<R: Rng + ?Sized>(
    rng: &mut R,
    center: &Rgb,
    lo: f64,
    hi: f64,
    accept: impl Fn(&Rgb) -> bool,
    what: &str,
) -> Result<Rgb> {
    let (lo3, hi3) = (lo.powi(3), hi.powi(3));
    for _ in 0..MAX_REJECTIONS {
        let u: f64 = rng.random();
        let r = if hi > lo { (lo3 + u * (hi3 - lo3)).cbrt() } else { lo };
        let dir = loop {
            let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-12 {
                break [v[0] / n, v[1] / n, v[2] / n];
            }
        };
        let p = [center[0] + r * dir[0], center[1] + r * dir[1], center[2] + r * dir[2]];
        if !p.iter().all(|v| (0.0..=255.0).contains(v)) {
            continue;
        }
        let dist = rgb_distance(&p, center);
        if dist < lo || dist > hi || !accept(&p) {
            continue;
        }
        return Ok(p);
    }
    Err(Error::InfeasibleConstraint(format!(
        "{what}: no sample satisfied the constraints within {MAX_REJECTIONS} draws"
    )))
}

/// Support foreground mean and one background mean per subregion.
pub fn sample_support_means<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64, count: usize) -> Result<(Rgb, Vec<Rgb>)> {
    check_band(a, b, "foreground/background")?;
    let m_sf = uniform_rgb(rng);
    let m_sb = (0..count)
        .map(|_| sample_in_shell(rng, &m_sf, a, b, |_| true, "support background mean"))
        .collect::<Result<Vec<_>>>()?;
    Ok((m_sf, m_sb))
}

/// Query foreground mean and one background mean per query subregion.
pub fn sample_query_means<R: Rng + ?Sized>(
    rng: &mut R,
    m_sf: &Rgb,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    count: usize,
) -> Result<(Rgb, Vec<Rgb>)> {
    check_band(a, b, "foreground/background")?;
    check_band(c, d, "support/query foreground")?;
    let m_qf = sample_in_shell(rng, m_sf, c, d, |_| true, "query foreground mean")?;
    let fg_gap = rgb_distance(&m_qf, m_sf);
    let m_qb = (0..count)
        .map(|_| sample_in_shell(rng, &m_qf, a, b, |p| rgb_distance(p, m_sf) > fg_gap, "query background mean"))
        .collect::<Result<Vec<_>>>()?;
    Ok((m_qf, m_qb))
}

/// Fill every region of `layout` with clipped, rounded Gaussian noise.
///
/// Pixels are visited in row-major order, channels in RGB order.
pub fn fill_regions<R: Rng + ?Sized>(
    layout: &RegionLayout,
    fg: &NoiseSpec,
    bg: &[NoiseSpec],
    rng: &mut R,
) -> Result<RgbImage> {
    if bg.len() != layout.background.len() {
        return Err(Error::parameter(format!(
            "{} background noise specs for {} subregions",
            bg.len(),
            layout.background.len()
        )));
    }
    fg.validate()?;
    for spec in bg {
        spec.validate()?;
    }
    let labels = layout.labels()?;
    let (w, h) = (layout.foreground_mask.width(), layout.foreground_mask.height());
    let mut raw = Vec::with_capacity(labels.len() * 3);
    for &label in &labels {
        let spec = if label == 0 { fg } else { &bg[label as usize - 1] };
        for ch in 0..3 {
            let z: f64 = rng.sample(StandardNormal);
            raw.push((spec.mean[ch] + spec.sigma * z).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(RgbImage::from_raw(w, h, raw).expect("buffer sized to the image"))
}

/// Knobs for [`perturb_layout_with`]. `None` draws the value at random.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbOptions {
    /// Standard deviation of the per-coordinate control point jitter, in px.
    pub jitter_sigma: f64,
    /// Rotation in radians about the control point centroid.
    pub rotation: Option<f64>,
    pub scale: Option<f64>,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        PerturbOptions { jitter_sigma: 1.0, rotation: None, scale: None }
    }
}

pub const MIN_QUERY_SCALE: f64 = 0.5;
pub const MAX_QUERY_SCALE: f64 = 1.5;

pub fn perturb_layout<R: Rng + ?Sized>(
    support: &RegionLayout,
    rng: &mut R,
    width: u32,
    height: u32,
) -> Result<RegionLayout> {
    perturb_layout_with(support, &PerturbOptions::default(), rng, width, height)
}

/// Derive the query layout from the support foreground contour.
pub fn perturb_layout_with<R: Rng + ?Sized>(
    support: &RegionLayout,
    opts: &PerturbOptions,
    rng: &mut R,
    width: u32,
    height: u32,
) -> Result<RegionLayout> {
    check_side(width, height)?;
    support.foreground.validate()?;
    let (w, h) = (width as f64, height as f64);
    for _ in 0..LAYOUT_ATTEMPTS {
        let jittered: Vec<Point> = support
            .foreground
            .control_points
            .iter()
            .map(|&p| {
                if opts.jitter_sigma > 0.0 {
                    let dx: f64 = rng.sample(StandardNormal);
                    let dy: f64 = rng.sample(StandardNormal);
                    p + Point::new(dx, dy) * opts.jitter_sigma
                } else {
                    p
                }
            })
            .collect();
        let theta = opts.rotation.unwrap_or_else(|| rng.random_range(0.0..TAU));
        let scale = opts.scale.unwrap_or_else(|| rng.random_range(MIN_QUERY_SCALE..=MAX_QUERY_SCALE));
        let contour = BezierContour { control_points: jittered, ..support.foreground.clone() };
        let center = contour.centroid();
        let (sin, cos) = theta.sin_cos();
        let transformed: Vec<Point> = contour
            .control_points
            .iter()
            .map(|&p| {
                let v = p - center;
                center + Point::new(cos * v.x - sin * v.y, sin * v.x + cos * v.y) * scale
            })
            .collect();
        let contour = BezierContour { control_points: transformed, ..contour };

        let samples = sample_bezier_contour(&contour)?;
        let (min, max) = bounding_box(&samples);
        if max.x - min.x > w || max.y - min.y > h {
            continue;
        }
        let tx = if max.x - min.x < w { rng.random_range(-min.x..=w - max.x) } else { -min.x };
        let ty = if max.y - min.y < h { rng.random_range(-min.y..=h - max.y) } else { -min.y };
        let shift = Point::new(tx, ty);
        let placed =
            BezierContour { control_points: contour.control_points.iter().map(|&p| p + shift).collect(), ..contour };
        let mask = contour_mask(&placed, width, height)?;
        if mask.is_empty() || mask.area() as u64 == width as u64 * height as u64 {
            continue;
        }
        let background = partition_background(rng, &mask)?;
        return Ok(RegionLayout { foreground: placed, foreground_mask: mask, background });
    }
    Err(Error::LayoutGeneration(format!(
        "could not place the query contour inside {width}x{height} in {LAYOUT_ATTEMPTS} attempts"
    )))
}

pub fn bounding_box(points: &[Point]) -> (Point, Point) {
    let mut min = Point::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    (min, max)
}

/// The four noise means of a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSet {
    pub support_fg: Rgb,
    pub support_bg: Vec<Rgb>,
    pub query_fg: Rgb,
    pub query_bg: Vec<Rgb>,
}

impl MeanSet {
    /// Human-readable descriptions of every violated distance constraint.
    pub fn violations(&self, step: &StepParams) -> Vec<String> {
        let mut out = Vec::new();
        for (i, m) in self.support_bg.iter().enumerate() {
            let d = rgb_distance(m, &self.support_fg);
            if d < step.a || d > step.b {
                out.push(format!("support bg {i}: |m_sb - m_sf| = {d} outside [{}, {}]", step.a, step.b));
            }
        }
        let fg_gap = rgb_distance(&self.query_fg, &self.support_fg);
        if fg_gap < step.c || fg_gap > step.d {
            out.push(format!("|m_qf - m_sf| = {fg_gap} outside [{}, {}]", step.c, step.d));
        }
        for (i, m) in self.query_bg.iter().enumerate() {
            let d = rgb_distance(m, &self.query_fg);
            if d < step.a || d > step.b {
                out.push(format!("query bg {i}: |m_qb - m_qf| = {d} outside [{}, {}]", step.a, step.b));
            }
            let ds = rgb_distance(m, &self.support_fg);
            if ds <= fg_gap {
                out.push(format!("query bg {i}: |m_qb - m_sf| = {ds} not above {fg_gap}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub sigma: f64,
    pub min_area: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig { sigma: DEFAULT_SIGMA, min_area: DEFAULT_MIN_AREA }
    }
}

/// One synthetic support/query episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPair {
    pub support_image: RgbImage,
    pub query_image: RgbImage,
    pub support_layout: RegionLayout,
    pub query_layout: RegionLayout,
    pub support_polygons: Vec<Polygon16>,
    pub query_polygons: Vec<Polygon16>,
    pub means: MeanSet,
    pub step: StepParams,
    pub sigma: f64,
    pub seed: u64,
}

impl PseudoPair {
    pub fn support_mask(&self) -> &Mask {
        &self.support_layout.foreground_mask
    }

    pub fn query_mask(&self) -> &Mask {
        &self.query_layout.foreground_mask
    }

    /// SHA-256 over every generated value, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"pseudo-pair/v1");
        h.update(self.seed.to_le_bytes());
        h.update(self.support_image.width().to_le_bytes());
        h.update(self.support_image.height().to_le_bytes());
        h.update(self.step.n.to_le_bytes());
        for v in [self.step.a, self.step.b, self.step.c, self.step.d, self.sigma] {
            h.update(v.to_le_bytes());
        }
        h.update((self.step.m as u64).to_le_bytes());
        let means = std::iter::once(&self.means.support_fg)
            .chain(&self.means.support_bg)
            .chain(std::iter::once(&self.means.query_fg))
            .chain(&self.means.query_bg);
        for m in means {
            for v in m {
                h.update(v.to_le_bytes());
            }
        }
        h.update((self.means.support_bg.len() as u64).to_le_bytes());
        h.update((self.means.query_bg.len() as u64).to_le_bytes());
        h.update(self.support_image.as_raw());
        h.update(self.query_image.as_raw());
        for layout in [&self.support_layout, &self.query_layout] {
            h.update(layout.foreground_mask.bits());
            for sub in &layout.background {
                h.update(sub.bits());
            }
            for p in &layout.foreground.control_points {
                h.update(p.x.to_le_bytes());
                h.update(p.y.to_le_bytes());
            }
        }
        for polys in [&self.support_polygons, &self.query_polygons] {
            h.update((polys.len() as u64).to_le_bytes());
            for poly in polys {
                for v in poly.vertices() {
                    h.update(v.x.to_le_bytes());
                    h.update(v.y.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// Generate the episode for `(seed, step, width, height)`.
///
/// Attempt `i` (up to 8) draws from `split_seed(seed, i)`; layout and
/// constraint failures move on to the next attempt.
pub fn generate_pair(
    seed: u64,
    step: &StepParams,
    width: u32,
    height: u32,
    cfg: &SynthesisConfig,
) -> Result<PseudoPair> {
    step.validate()?;
    check_side(width, height)?;
    if cfg.sigma.is_nan() || cfg.sigma <= 0.0 {
        return Err(Error::parameter(format!("noise sigma {} must be positive", cfg.sigma)));
    }
    let mut last = None;
    for attempt in 0..PAIR_ATTEMPTS {
        let mut rng = rng_from_seed(split_seed(seed, attempt));
        match try_generate(&mut rng, seed, step, width, height, cfg) {
            Ok(pair) => return Ok(pair),
            Err(e @ (Error::LayoutGeneration(_) | Error::InfeasibleConstraint(_))) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn try_generate(
    rng: &mut PairRng,
    seed: u64,
    step: &StepParams,
    width: u32,
    height: u32,
    cfg: &SynthesisConfig,
) -> Result<PseudoPair> {
    let support = make_support_layout(rng, width, height)?;
    let (m_sf, m_sb) = sample_support_means(rng, step.a, step.b, support.background.len())?;
    let support_image = fill_regions(
        &support,
        &NoiseSpec::new(m_sf, cfg.sigma)?,
        &m_sb.iter().map(|&m| NoiseSpec::new(m, cfg.sigma)).collect::<Result<Vec<_>>>()?,
        rng,
    )?;

    let query = perturb_layout(&support, rng, width, height)?;
    let (m_qf, m_qb) = sample_query_means(rng, &m_sf, step.a, step.b, step.c, step.d, query.background.len())?;
    let query_image = fill_regions(
        &query,
        &NoiseSpec::new(m_qf, cfg.sigma)?,
        &m_qb.iter().map(|&m| NoiseSpec::new(m, cfg.sigma)).collect::<Result<Vec<_>>>()?,
        rng,
    )?;

    let means = MeanSet { support_fg: m_sf, support_bg: m_sb, query_fg: m_qf, query_bg: m_qb };
    debug_assert!(means.violations(step).is_empty());
    Ok(PseudoPair {
        support_polygons: extract_polygon_gt(&support.foreground_mask, cfg.min_area),
        query_polygons: extract_polygon_gt(&query.foreground_mask, cfg.min_area),
        support_image,
        query_image,
        support_layout: support,
        query_layout: query,
        means,
        step: *step,
        sigma: cfg.sigma,
        seed,
    })
}
