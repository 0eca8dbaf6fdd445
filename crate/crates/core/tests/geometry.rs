use std::f64::consts::PI;

use polyseg_core::geometry::*;
use polyseg_core::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;

/// Crossing-number point-in-polygon test at every pixel center.
fn brute_force_fill(polyline: &[Point], w: u32, h: u32) -> Mask {
    Mask::from_fn(w, h, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut inside = false;
        for e in polyline.windows(2) {
            let (p, q) = (e[0], e[1]);
            if (p.y > py) != (q.y > py) {
                let xi = p.x + (py - p.y) * (q.x - p.x) / (q.y - p.y);
                if px < xi {
                    inside = !inside;
                }
            }
        }
        inside
    })
}

fn disk(w: u32, h: u32, cx: f64, cy: f64, r: f64) -> Mask {
    Mask::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        dx * dx + dy * dy <= r * r
    })
}

fn contour_from(points: Vec<(f64, f64)>) -> BezierContour {
    BezierContour::new(points.into_iter().map(|(x, y)| Point::new(x, y)).collect()).unwrap()
}

fn control_points(lo: f64, hi: f64) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((lo..hi, lo..hi), CONTROL_POINT_COUNT)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rasterize_matches_crossing_number(pts in control_points(-10.0, 106.0)) {
        let samples = sample_bezier_contour(&contour_from(pts)).unwrap();
        prop_assert_eq!(samples.first(), samples.last());
        let fast = rasterize(&samples, 96, 80).unwrap();
        prop_assert_eq!(fast, brute_force_fill(&samples, 96, 80));
    }

    #[test]
    fn polygon_fill_paths_agree(xs in prop::collection::vec((0u32..64, 0u32..64), 16)) {
        let vs: Vec<Vertex> = xs.into_iter().map(|(x, y)| Vertex::new(x, y)).collect();
        let poly = Polygon16::from_slice(&vs).unwrap();
        prop_assert_eq!(polygon_to_mask(&poly, 64, 64).unwrap(), rasterize(&poly.to_polyline(), 64, 64).unwrap());
    }

    #[test]
    fn vertices_lie_on_their_rays(pts in control_points(8.0, 88.0)) {
        let samples = sample_bezier_contour(&contour_from(pts)).unwrap();
        let mask = rasterize(&samples, 96, 96).unwrap();
        let comps = connected_components(&mask);
        prop_assume!(!comps.is_empty() && comps[0].area() >= DEFAULT_MIN_AREA);
        let comp = comps[0].to_mask(96, 96);
        let c = mask_centroid(&comp).unwrap();
        prop_assume!(comp.get(c.x.floor() as u32, c.y.floor() as u32));
        let poly = &extract_polygon_gt(&mask, DEFAULT_MIN_AREA)[0];
        let home = Vertex::new(c.x.floor() as u32, c.y.floor() as u32);
        for (k, v) in poly.vertices().iter().enumerate() {
            // A ray that never leaves the origin pixel keeps that pixel.
            if *v == home {
                continue;
            }
            let (dx, dy) = (v.x as f64 - c.x, v.y as f64 - c.y);
            let dist = (dx * dx + dy * dy).sqrt();
            if dist < 1.0 {
                continue;
            }
            let theta = k as f64 * RAY_SPACING;
            // Distance off the ray line, and the vertex must not point backwards.
            let off = (dx * theta.sin() - dy * theta.cos()).abs();
            let along = dx * theta.cos() + dy * theta.sin();
            prop_assert!(off <= 1.0, "vertex {} is {} px off its ray", k, off);
            prop_assert!(along > -1.0, "vertex {} points backwards", k);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        a in prop::collection::vec(0u8..2, 100),
        b in prop::collection::vec(0u8..2, 100),
    ) {
        let (ma, mb) = (Mask::from_bits(10, 10, a).unwrap(), Mask::from_bits(10, 10, b).unwrap());
        let (ab, ba) = (mask_iou(&ma, &mb).unwrap(), mask_iou(&mb, &ma).unwrap());
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab == 1.0, ma == mb);
    }
}

#[test]
fn circle_controls_stay_near_circle() {
    let pts: Vec<(f64, f64)> = (0..10)
        .map(|i| {
            let t = i as f64 * 2.0 * PI / 10.0;
            (192.0 + 100.0 * t.cos(), 192.0 + 100.0 * t.sin())
        })
        .collect();
    let samples = sample_bezier_contour(&contour_from(pts)).unwrap();
    assert_eq!(samples.len(), DEFAULT_CONTOUR_SAMPLES);
    for p in &samples {
        let r = p.distance(Point::new(192.0, 192.0));
        assert!((80.0..=120.0).contains(&r), "radius {r}");
    }
}

#[test]
fn square_fill_counts_pixel_centers() {
    let sq = [(10.0, 10.0), (20.0, 10.0), (20.0, 20.0), (10.0, 20.0), (10.0, 10.0)].map(|(x, y)| Point::new(x, y));
    let m = rasterize(&sq, 32, 32).unwrap();
    assert_eq!(m.area(), 100);
    assert_eq!(m, brute_force_fill(&sq, 32, 32));
    let outside = [(40.0, 40.0), (50.0, 40.0), (50.0, 50.0), (40.0, 40.0)].map(|(x, y)| Point::new(x, y));
    assert!(rasterize(&outside, 32, 32).unwrap().is_empty());
}

#[test]
fn disk_centroid_within_half_pixel() {
    let mut rng = rng_from_seed(5);
    for _ in 0..20 {
        let (cx, cy, r) = (rng.random_range(60.0..100.0), rng.random_range(60.0..100.0), rng.random_range(10.0..50.0));
        let c = mask_centroid(&disk(160, 160, cx, cy, r)).unwrap();
        assert!(c.distance(Point::new(cx, cy)) <= 0.5, "centroid {c:?} vs ({cx}, {cy})");
    }
}

#[test]
fn disk_vertices_at_radius() {
    let poly = &extract_polygon_gt(&disk(384, 384, 192.0, 192.0, 100.0), 16)[0];
    for v in poly.vertices() {
        let r = v.to_point().distance(Point::new(192.0, 192.0));
        assert!((r - 100.0).abs() <= 2.0, "vertex {v:?} at radius {r}");
    }
    assert!(poly.is_clockwise());
}

#[test]
fn components_sorted_by_area() {
    let mut m = disk(200, 120, 50.0, 60.0, 20.0);
    m = m.or(&disk(200, 120, 150.0, 60.0, 35.0)).unwrap();
    m = m.or(&disk(200, 120, 100.0, 10.0, 2.0)).unwrap();
    let comps = connected_components(&m);
    assert_eq!(comps.len(), 3);
    assert!(comps.windows(2).all(|w| w[0].area() > w[1].area()));
    let polys = extract_polygon_gt(&m, 16);
    assert_eq!(polys.len(), 2);
    assert!(polys[0].vertices()[0].x > 180);
    assert!(polys[1].vertices()[0].x < 80);
}

#[test]
fn empty_and_speckle_masks_give_no_polygons() {
    assert!(extract_polygon_gt(&Mask::new(50, 50), 1).is_empty());
    let mut m = Mask::new(50, 50);
    m.set(3, 3, true);
    assert!(extract_polygon_gt(&m, 16).is_empty());
    let poly = extract_polygon_gt(&m, 1)[0];
    assert!(poly.vertices().iter().all(|&v| v == Vertex::new(3, 3)));
}

#[test]
fn rays_stop_at_image_border() {
    // A full-width band: horizontal rays run to the border.
    let m = Mask::from_fn(64, 64, |_, y| (20..40).contains(&y));
    let poly = &extract_polygon_gt(&m, 16)[0];
    assert_eq!(poly.vertices()[0], Vertex::new(63, 30));
    assert_eq!(poly.vertices()[8].x, 0);
    assert!(poly.max_coordinate() < 64);
}
