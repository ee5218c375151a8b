use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::SceneFrame;
use crate::math::hypot;
use crate::{Error, Result};

/// Lane-center polylines, each resampled to the same point count.
///
/// `frame` records the transform already applied to the coordinates;
/// [`SceneFrame::IDENTITY`] means world meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPolylines {
    pub points_per_polyline: usize,
    pub polylines: Vec<Vec<[f64; 2]>>,
    pub frame: SceneFrame,
}

impl MapPolylines {
    pub fn empty(points_per_polyline: usize) -> Self {
        Self { points_per_polyline, polylines: Vec::new(), frame: SceneFrame::IDENTITY }
    }

    pub fn len(&self) -> usize {
        self.polylines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    /// Re-expresses the coordinates in `target`. A no-op when already there.
    pub fn in_frame(&self, target: &SceneFrame) -> MapPolylines {
        if self.frame == *target {
            return self.clone();
        }
        let polylines = self
            .polylines
            .iter()
            .map(|pl| pl.iter().map(|p| target.point_to_local(self.frame.point_to_world(*p))).collect())
            .collect();
        MapPolylines { points_per_polyline: self.points_per_polyline, polylines, frame: *target }
    }
}

impl MapPolylines {
    /// Normalizes an existing map to `points` per polyline in `frame`.
    /// Maps already in that form come back unchanged.
    pub fn renormalized(&self, points: usize, frame: &SceneFrame) -> Result<MapPolylines> {
        if self.points_per_polyline == points {
            return Ok(self.in_frame(frame));
        }
        let world = self.in_frame(&SceneFrame::IDENTITY);
        Ok(normalize_map(&world.polylines, points, frame)?.0)
    }
}

fn arc_lengths(points: &[[f64; 2]]) -> Vec<f64> {
    let mut acc = Vec::with_capacity(points.len());
    let mut total = 0.0;
    acc.push(0.0);
    for p in points.windows(2) {
        total += hypot(p[1][0] - p[0][0], p[1][1] - p[0][1]);
        acc.push(total);
    }
    acc
}

/// Resamples a polyline to `count` points evenly spaced in arc length.
/// `None` for polylines of zero length.
pub fn resample_polyline(points: &[[f64; 2]], count: usize) -> Option<Vec<[f64; 2]>> {
    if points.len() < 2 || count < 2 {
        return None;
    }
    let s = arc_lengths(points);
    let total = *s.last()?;
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    for i in 0..count {
        let target = if i + 1 == count { total } else { total * i as f64 / (count - 1) as f64 };
        while seg + 2 < s.len() && s[seg + 1] < target {
            seg += 1;
        }
        let len = s[seg + 1] - s[seg];
        let f = if len > 0.0 { ((target - s[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
    }
    Some(out)
}

/// Resamples every polyline to `points` points and transforms it by `frame`.
///
/// Returns the map and the indices of the input polylines that were dropped
/// for having zero length.
pub fn normalize_map(raw: &[Vec<[f64; 2]>], points: usize, frame: &SceneFrame) -> Result<(MapPolylines, Vec<usize>)> {
    if raw.is_empty() {
        return Err(Error::input("map has no polylines"));
    }
    if points < 2 {
        return Err(Error::config("need at least two points per polyline"));
    }
    let mut dropped = Vec::new();
    let mut polylines = Vec::with_capacity(raw.len());
    for (i, pl) in raw.iter().enumerate() {
        match resample_polyline(pl, points) {
            Some(r) => polylines.push(r.into_iter().map(|p| frame.point_to_local(p)).collect()),
            None => dropped.push(i),
        }
    }
    Ok((MapPolylines { points_per_polyline: points, polylines, frame: *frame }, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn straight_segment_spacing() {
        let raw = vec![vec![[0.0, 0.0], [100.0, 0.0]]];
        let (m, dropped) = normalize_map(&raw, 20, &SceneFrame::IDENTITY).unwrap();
        assert!(dropped.is_empty());
        let pl = &m.polylines[0];
        assert_eq!(pl.len(), 20);
        for p in pl.windows(2) {
            // 100 / 19
            assert!((p[1][0] - p[0][0] - 5.263_157_894_736_842).abs() < 1e-9);
        }
    }

    #[test]
    fn renormalizing_is_idempotent() {
        let raw = vec![vec![[0.0, 0.0], [3.0, 4.0], [10.0, 4.0], [12.0, 9.0]]];
        let f = SceneFrame::centered([5.0, 5.0]);
        let (m1, _) = normalize_map(&raw, 12, &f).unwrap();
        assert_eq!(m1.renormalized(12, &f).unwrap(), m1);
        // Straight input: a second resampling pass reproduces the points.
        let line = vec![vec![[0.0, 0.0], [7.0, 0.0], [30.0, 0.0]]];
        let (l1, _) = normalize_map(&line, 9, &SceneFrame::IDENTITY).unwrap();
        let (l2, _) = normalize_map(&l1.polylines, 9, &SceneFrame::IDENTITY).unwrap();
        for (a, b) in l1.polylines[0].iter().zip(&l2.polylines[0]) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        // A different point count resamples from world coordinates.
        let m3 = m1.renormalized(5, &f).unwrap();
        assert_eq!(m3.polylines[0].len(), 5);
        assert_eq!(m3.frame, f);
    }

    #[test]
    fn degenerate_polyline_dropped() {
        let raw = vec![vec![[1.0, 1.0], [1.0, 1.0]], vec![[0.0, 0.0], [1.0, 0.0]]];
        let (m, dropped) = normalize_map(&raw, 5, &SceneFrame::IDENTITY).unwrap();
        assert_eq!(dropped, vec![0]);
        assert_eq!(m.len(), 1);
        assert!(normalize_map(&[], 5, &SceneFrame::IDENTITY).is_err());
    }

    #[test]
    fn scene_frame_applied() {
        let raw = vec![vec![[50.0, 0.0], [150.0, 0.0]]];
        let (m, _) = normalize_map(&raw, 2, &SceneFrame::centered([50.0, 0.0])).unwrap();
        assert_eq!(m.polylines[0], vec![[0.0, 0.0], [2.0, 0.0]]);
    }
}
