//! Litter mapping: detections to floor coordinates through the estimated ROV
//! pose, a first-come deduplicated map, and RMSE scoring against ground truth.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ekf::Pose15;
use crate::geometry::{inverse_project, CameraIntrinsics, CameraModel, GeometryError, PixelCoord, RotationMatrix};
use crate::scalar::Real;

pub const DEFAULT_DEDUP_RADIUS: f64 = 0.30;
pub const DEFAULT_MATCH_GATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LitterClass {
    Plastic,
    Metal,
    Cardboard,
    Glass,
}

impl LitterClass {
    pub const ALL: [LitterClass; 4] = [Self::Plastic, Self::Metal, Self::Cardboard, Self::Glass];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Plastic => "plastic",
            Self::Metal => "metal",
            Self::Cardboard => "cardboard",
            Self::Glass => "glass",
        }
    }
}

impl fmt::Display for LitterClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LitterClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown litter class `{s}`"))
    }
}

/// Rigid mount of the ROV camera: offset in the body frame and downward tilt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraMount<T: Real> {
    pub offset: Vector3<T>,
    pub tilt: T,
}

impl<T: Real> CameraMount<T> {
    /// Camera model for a body at `pose`.
    pub fn camera(&self, intrinsics: CameraIntrinsics<T>, pose: &Pose15<T>) -> CameraModel<T> {
        CameraModel::mounted(
            intrinsics,
            &pose.position(),
            &pose.orientation().to_rotation(),
            &self.offset,
            &RotationMatrix::forward_camera(self.tilt),
        )
    }
}

/// World position of a detection's box center on the pool floor.
pub fn locate_detection<T: Real>(
    center: &PixelCoord<T>,
    rov_pose: &Pose15<T>,
    mount: &CameraMount<T>,
    intrinsics: CameraIntrinsics<T>,
    water_depth: T,
) -> Result<Point3<T>, GeometryError> {
    let camera = mount.camera(intrinsics, rov_pose);
    inverse_project(&camera, center, -water_depth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LitterItem<T: Real> {
    pub position: Point3<T>,
    pub label: LitterClass,
    pub first_seen: T,
    pub observations: u32,
}

/// Ordered litter list. A new point closer than `dedup_radius` (in X, Y) to an
/// existing item only bumps that item's observation count.
#[derive(Debug, Clone, PartialEq)]
pub struct LitterMap<T: Real> {
    items: Vec<LitterItem<T>>,
    dedup_radius: T,
}

impl<T: Real> LitterMap<T> {
    pub fn new(dedup_radius: T) -> Self {
        Self {
            items: Vec::new(),
            dedup_radius,
        }
    }

    pub fn from_items(items: Vec<LitterItem<T>>, dedup_radius: T) -> Self {
        Self {
            items,
            dedup_radius,
        }
    }

    pub fn items(&self) -> &[LitterItem<T>] {
        &self.items
    }

    pub fn dedup_radius(&self) -> T {
        self.dedup_radius
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    /// Index and planar distance of the item nearest to `p`.
    pub fn nearest(&self, p: &Point3<T>) -> Option<(usize, T)> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, item)| (i, planar_distance(&item.position, p)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
    }

    /// Returns `true` when `p` was appended as a new item.
    pub fn insert(&mut self, p: Point3<T>, label: LitterClass, t: T) -> bool {
        if let Some((i, d)) = self.nearest(&p) {
            if d < self.dedup_radius {
                self.items[i].observations += 1;
                return false;
            }
        }
        self.items.push(LitterItem {
            position: p,
            label,
            first_seen: t,
            observations: 1,
        });
        true
    }

    /// Smallest planar distance between any two items.
    pub fn min_pairwise_distance(&self) -> Option<T> {
        let mut best: Option<T> = None;
        for (i, a) in self.items.iter().enumerate() {
            for b in &self.items[i + 1..] {
                let d = planar_distance(&a.position, &b.position);
                best = Some(best.map_or(d, |m| m.min(d)));
            }
        }
        best
    }
}

pub fn planar_distance<T: Real>(a: &Point3<T>, b: &Point3<T>) -> T {
    let (dx, dy) = (a.x - b.x, a.y - b.y);
    (dx * dx + dy * dy).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapScore<T> {
    pub rmse_x: T,
    pub rmse_y: T,
    /// `(truth index, map index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub misses: usize,
    pub spurious: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapEvalError {
    #[error("no map item matched any ground-truth item ({misses} misses, {spurious} spurious)")]
    NoMatches { misses: usize, spurious: usize },
}

/// Greedy nearest-pair matching within `gate` metres, then per-axis RMSE over the pairs.
pub fn evaluate<T: Real>(
    map: &[Point3<T>],
    truth: &[Point3<T>],
    gate: T,
) -> Result<MapScore<T>, MapEvalError> {
    let mut pairs: Vec<(T, usize, usize)> = Vec::new();
    for (ti, tp) in truth.iter().enumerate() {
        for (mi, mp) in map.iter().enumerate() {
            let d = planar_distance(tp, mp);
            if d <= gate {
                pairs.push((d, ti, mi));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut truth_used = vec![false; truth.len()];
    let mut map_used = vec![false; map.len()];
    let mut matches = Vec::new();
    for (_, ti, mi) in pairs {
        if !truth_used[ti] && !map_used[mi] {
            truth_used[ti] = true;
            map_used[mi] = true;
            matches.push((ti, mi));
        }
    }
    let misses = truth.len() - matches.len();
    let spurious = map.len() - matches.len();
    if matches.is_empty() {
        return Err(MapEvalError::NoMatches { misses, spurious });
    }
    matches.sort_unstable();

    let (mut sx, mut sy) = (T::zero(), T::zero());
    for &(ti, mi) in &matches {
        let (dx, dy) = (map[mi].x - truth[ti].x, map[mi].y - truth[ti].y);
        sx += dx * dx;
        sy += dy * dy;
    }
    let n = T::lit(matches.len() as f64);
    Ok(MapScore {
        rmse_x: (sx / n).sqrt(),
        rmse_y: (sy / n).sqrt(),
        matches,
        misses,
        spurious,
    })
}
