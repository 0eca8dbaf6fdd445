//! Contours, masks and the polar 16-vertex polygon representation.
//!
//! Coordinates follow the image convention: origin at the top-left corner, `x`
//! to the right, `y` downward. Pixel `(x, y)` covers the unit square
//! `[x, x + 1) × [y, y + 1)` and its center is `(x + 0.5, y + 0.5)`.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CONTROL_POINT_COUNT: usize = 10;
pub const MIN_CONTOUR_SAMPLES: usize = 32;
pub const DEFAULT_CONTOUR_SAMPLES: usize = 320;

pub const POLYGON_VERTICES: usize = 16;
/// Angular spacing between polar rays: 22.5 degrees.
pub const RAY_SPACING: f64 = PI / 8.0;
pub const RAY_STEP: f64 = 0.25;
pub const DEFAULT_MIN_AREA: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Integer polygon vertex, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Vertex {
    pub x: u32,
    pub y: u32,
}

impl From<[u32; 2]> for Vertex {
    fn from([x, y]: [u32; 2]) -> Self {
        Vertex { x, y }
    }
}

impl From<Vertex> for [u32; 2] {
    fn from(v: Vertex) -> Self {
        [v.x, v.y]
    }
}

impl Vertex {
    pub const fn new(x: u32, y: u32) -> Self {
        Vertex { x, y }
    }

    pub fn to_point(self) -> Point {
        Point::new(self.x as f64, self.y as f64)
    }
}

/// Closed contour defined by ten control points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BezierContour {
    pub control_points: Vec<Point>,
    pub sample_count: usize,
}

impl BezierContour {
    pub fn new(control_points: Vec<Point>) -> Result<Self> {
        let contour = BezierContour { control_points, sample_count: DEFAULT_CONTOUR_SAMPLES };
        contour.validate()?;
        Ok(contour)
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_points.len() != CONTROL_POINT_COUNT {
            return Err(Error::InvalidContour(format!(
                "expected {CONTROL_POINT_COUNT} control points, got {}",
                self.control_points.len()
            )));
        }
        if self.sample_count < MIN_CONTOUR_SAMPLES {
            return Err(Error::InvalidContour(format!(
                "sample count {} below minimum {MIN_CONTOUR_SAMPLES}",
                self.sample_count
            )));
        }
        Ok(())
    }

    pub fn centroid(&self) -> Point {
        let n = self.control_points.len() as f64;
        let sum = self.control_points.iter().fold(Point::new(0.0, 0.0), |acc, &p| acc + p);
        sum * (1.0 / n)
    }
}

/// Sample a closed, periodic composite cubic Bézier curve.
///
/// Each pair of consecutive control points `c[i] → c[i+1]` (cyclically) is
/// joined by one cubic segment whose inner handles follow Catmull-Rom tangents:
/// `c[i] + (c[i+1] - c[i-1]) / 6` and `c[i+1] - (c[i+2] - c[i]) / 6`. The curve
/// passes through every control point and is C1 continuous. The returned
/// polyline has `sample_count` points, the last being an exact copy of the
/// first.
pub fn sample_bezier_contour(contour: &BezierContour) -> Result<Vec<Point>> {
    contour.validate()?;
    let c = &contour.control_points;
    let n = c.len();
    let segments: Vec<[Point; 4]> = (0..n)
        .map(|i| {
            let prev = c[(i + n - 1) % n];
            let p0 = c[i];
            let p3 = c[(i + 1) % n];
            let next = c[(i + 2) % n];
            let p1 = p0 + (p3 - prev) * (1.0 / 6.0);
            let p2 = p3 - (next - p0) * (1.0 / 6.0);
            [p0, p1, p2, p3]
        })
        .collect();

    let intervals = contour.sample_count - 1;
    let mut out = Vec::with_capacity(contour.sample_count);
    for j in 0..intervals {
        let u = (j * n) as f64 / intervals as f64;
        let seg = (u.floor() as usize).min(n - 1);
        out.push(cubic(&segments[seg], u - seg as f64));
    }
    out.push(out[0]);
    Ok(out)
}

fn cubic(s: &[Point; 4], t: f64) -> Point {
    // De Casteljau keeps the degenerate all-equal case exact.
    let a = s[0].lerp(s[1], t);
    let b = s[1].lerp(s[2], t);
    let c = s[2].lerp(s[3], t);
    let d = a.lerp(b, t);
    let e = b.lerp(c, t);
    d.lerp(e, t)
}

/// Row-major binary grid; `1` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask { width, height, bits: vec![0; width as usize * height as usize] }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::Shape(format!("{} bits for a {width}x{height} mask", bits.len())));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Shape("mask values must be 0 or 1".into()));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut mask = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.index(x, y)] == 1
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let i = self.index(x, y);
        self.bits[i] = on as u8;
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn same_shape(&self, other: &Mask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!("{}x{} vs {}x{}", self.width, self.height, other.width, other.height)));
        }
        Ok(())
    }

    /// Pixelwise `self & !other`.
    pub fn minus(&self, other: &Mask) -> Result<Mask> {
        self.same_shape(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a & (1 - b)).collect();
        Ok(Mask { width: self.width, height: self.height, bits })
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.same_shape(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a & b).collect();
        Ok(Mask { width: self.width, height: self.height, bits })
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.same_shape(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a | b).collect();
        Ok(Mask { width: self.width, height: self.height, bits })
    }

    pub fn complement(&self) -> Mask {
        Mask { width: self.width, height: self.height, bits: self.bits.iter().map(|&b| 1 - b).collect() }
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits.iter().enumerate().filter(|(_, &b)| b == 1).map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }
}

/// Even-odd scanline fill of a closed polyline.
///
/// A pixel is foreground iff its center lies inside the polyline under the
/// crossing-number rule. Geometry outside the image is clipped.
pub fn rasterize(polyline: &[Point], width: u32, height: u32) -> Result<Mask> {
    if width == 0 || height == 0 {
        return Err(Error::parameter("mask dimensions must be positive"));
    }
    match (polyline.first(), polyline.last()) {
        (Some(first), Some(last)) if polyline.len() >= 2 && first == last => {}
        _ => return Err(Error::InvalidContour("polyline is not closed".into())),
    }

    let mut mask = Mask::new(width, height);
    let edges: Vec<(Point, Point)> = polyline.windows(2).map(|w| (w[0], w[1])).collect();
    let mut crossings: Vec<f64> = Vec::new();

    for y in 0..height {
        let yc = y as f64 + 0.5;
        crossings.clear();
        for &(p, q) in &edges {
            if (p.y > yc) != (q.y > yc) {
                crossings.push(p.x + (yc - p.y) * (q.x - p.x) / (q.y - p.y));
            }
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            let (lo, hi) = (first_center_at_or_after(span[0]), first_center_at_or_after(span[1]));
            let lo = lo.clamp(0, width as i64);
            let hi = hi.clamp(0, width as i64);
            for x in lo..hi {
                mask.set(x as u32, y, true);
            }
        }
    }
    Ok(mask)
}

/// Smallest pixel column whose center `x + 0.5` is `>= bound`.
fn first_center_at_or_after(bound: f64) -> i64 {
    let mut x = (bound - 0.5).ceil() as i64;
    while (x - 1) as f64 + 0.5 >= bound {
        x -= 1;
    }
    while (x as f64 + 0.5) < bound {
        x += 1;
    }
    x
}

/// Mean of foreground pixel centers.
pub fn mask_centroid(mask: &Mask) -> Result<Point> {
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
    for (x, y) in mask.foreground() {
        sx += x as f64 + 0.5;
        sy += y as f64 + 0.5;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(Point::new(sx / n as f64, sy / n as f64))
}

/// Ordered 16-vertex polygon. Vertex `k` lies on the ray at angle
/// `k · 22.5°`, measured clockwise (on screen) from `+x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon16 {
    vertices: [Vertex; POLYGON_VERTICES],
}

impl Polygon16 {
    pub fn new(vertices: [Vertex; POLYGON_VERTICES]) -> Self {
        Polygon16 { vertices }
    }

    pub fn from_slice(vertices: &[Vertex]) -> Result<Self> {
        let vertices: [Vertex; POLYGON_VERTICES] = vertices
            .try_into()
            .map_err(|_| Error::Shape(format!("expected {POLYGON_VERTICES} vertices, got {}", vertices.len())))?;
        Ok(Polygon16 { vertices })
    }

    pub fn vertices(&self) -> &[Vertex; POLYGON_VERTICES] {
        &self.vertices
    }

    /// Shoelace area; positive when the vertices run clockwise on screen.
    pub fn signed_area(&self) -> f64 {
        let v = &self.vertices;
        let twice: i64 = (0..POLYGON_VERTICES)
            .map(|i| {
                let (a, b) = (v[i], v[(i + 1) % POLYGON_VERTICES]);
                a.x as i64 * b.y as i64 - b.x as i64 * a.y as i64
            })
            .sum();
        twice as f64 / 2.0
    }

    pub fn is_clockwise(&self) -> bool {
        self.signed_area() >= 0.0
    }

    /// Closed polyline over the vertices (first vertex repeated at the end).
    pub fn to_polyline(&self) -> Vec<Point> {
        let mut pts: Vec<Point> = self.vertices.iter().map(|v| v.to_point()).collect();
        pts.push(pts[0]);
        pts
    }

    pub fn max_coordinate(&self) -> u32 {
        self.vertices.iter().map(|v| v.x.max(v.y)).max().unwrap_or(0)
    }
}

/// One 4-connected foreground component.
#[derive(Debug, Clone)]
pub struct Component {
    /// Row-major pixel indices, in discovery order; the first is the
    /// component's top-left-most pixel.
    pub pixels: Vec<usize>,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn first_pixel(&self) -> usize {
        self.pixels[0]
    }

    pub fn to_mask(&self, width: u32, height: u32) -> Mask {
        let mut mask = Mask::new(width, height);
        for &i in &self.pixels {
            mask.bits[i] = 1;
        }
        mask
    }
}

/// 4-connected components sorted by descending area, ties broken by the
/// smallest row-major first pixel.
pub fn connected_components(mask: &Mask) -> Vec<Component> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut seen = vec![false; w * h];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..w * h {
        if mask.bits[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            pixels.push(i);
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.bits[j] == 1 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        components.push(Component { pixels });
    }
    // Discovery order already ascends by first pixel, so a stable sort on area
    // gives the tie-break for free.
    components.sort_by_key(|c| std::cmp::Reverse(c.area()));
    components
}

/// Polar 16-vertex ground truth for each sufficiently large component.
///
/// For every 4-connected component with at least `min_area` pixels (largest
/// first), 16 rays are cast from the component centroid at `k · 22.5°`. Each
/// ray is marched in 0.25 px steps up to the image border and vertex `k` is
/// the farthest sample that still lies in the component, rounded to the
/// nearest integer and clamped to the image, so non-convex shapes take their
/// outermost crossing. A ray that never leaves the origin pixel yields that
/// pixel. When the centroid falls
/// outside its own component, the center of the nearest component pixel is
/// used as the ray origin instead.
pub fn extract_polygon_gt(mask: &Mask, min_area: usize) -> Vec<Polygon16> {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![u32::MAX; w as usize * h as usize];
    let components = connected_components(mask);
    let mut polygons = Vec::new();
    for (label, comp) in components.iter().enumerate() {
        if comp.area() < min_area.max(1) {
            break;
        }
        for &i in &comp.pixels {
            labels[i] = label as u32;
        }
        let origin = ray_origin(comp, w);
        polygons.push(cast_polygon(&labels, label as u32, w, h, origin));
    }
    polygons
}

fn ray_origin(comp: &Component, width: u32) -> Point {
    let w = width as usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &i in &comp.pixels {
        sx += (i % w) as f64 + 0.5;
        sy += (i / w) as f64 + 0.5;
    }
    let n = comp.area() as f64;
    let centroid = Point::new(sx / n, sy / n);
    let home = centroid.y.floor() as usize * w + centroid.x.floor() as usize;
    if comp.pixels.contains(&home) {
        return centroid;
    }
    let nearest = comp
        .pixels
        .iter()
        .map(|&i| {
            let c = Point::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let d = c - centroid;
            (d.x * d.x + d.y * d.y, i, c)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("component is non-empty");
    nearest.2
}

fn cast_polygon(labels: &[u32], label: u32, w: u32, h: u32, origin: Point) -> Polygon16 {
    let home = Vertex::new(origin.x.floor() as u32, origin.y.floor() as u32);
    let mut vertices = [home; POLYGON_VERTICES];
    for (k, vertex) in vertices.iter_mut().enumerate() {
        let theta = k as f64 * RAY_SPACING;
        let (dy, dx) = theta.sin_cos();
        let mut farthest = None;
        let mut step = 1u32;
        loop {
            let t = step as f64 * RAY_STEP;
            let (px, py) = (origin.x + t * dx, origin.y + t * dy);
            if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
                break;
            }
            let (ix, iy) = (px.floor() as u32, py.floor() as u32);
            if labels[iy as usize * w as usize + ix as usize] == label && (ix, iy) != (home.x, home.y) {
                farthest = Some((px, py));
            }
            step += 1;
        }
        // A ray that never leaves the origin pixel keeps the origin pixel.
        if let Some((px, py)) = farthest {
            *vertex = Vertex::new((px.round() as u32).min(w - 1), (py.round() as u32).min(h - 1));
        }
    }
    Polygon16 { vertices }
}

/// Fill the area enclosed by the polygon with 1, everything else with 0.
pub fn polygon_to_mask(poly: &Polygon16, width: u32, height: u32) -> Result<Mask> {
    rasterize(&poly.to_polyline(), width, height)
}

/// Intersection over union; 1.0 when both masks are empty.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    a.same_shape(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}
