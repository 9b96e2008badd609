//! Points, boxes, and the centroid features the model consumes.

use core::ops::{Add, Div, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// A point in meters. Serialized as `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        math::sqrt(self.dot(self))
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn min(self, other: Vec3) -> Vec3 {
        Vec3::new(self.x.min(other.x), self.y.min(other.y), self.z.min(other.z))
    }

    pub fn max(self, other: Vec3) -> Vec3 {
        Vec3::new(self.x.max(other.x), self.y.max(other.y), self.z.max(other.z))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(v: [f64; 3]) -> Self {
        Vec3::new(v[0], v[1], v[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Axis-aligned bounding box, `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// Builds a box, swapping nothing: returns `None` when `min > max` on any axis.
    pub fn new(min: Vec3, max: Vec3) -> Option<Self> {
        (min.x <= max.x && min.y <= max.y && min.z <= max.z).then_some(Self { min, max })
    }

    /// Degenerate box around a single point.
    pub fn point(p: Vec3) -> Self {
        Self { min: p, max: p }
    }

    pub fn from_points(points: &[Vec3]) -> Result<Self> {
        let (first, rest) = points.split_first().ok_or(Error::EmptyPointSet)?;
        let (min, max) = rest
            .iter()
            .fold((*first, *first), |(lo, hi), p| (lo.min(*p), hi.max(*p)));
        Ok(Self { min, max })
    }

    /// Closed-interval overlap on all three axes; touching faces count.
    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.min.x <= other.max.x
            && other.min.x <= self.max.x
            && self.min.y <= other.max.y
            && other.min.y <= self.max.y
            && self.min.z <= other.max.z
            && other.min.z <= self.max.z
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }
}

fn mean(points: &[Vec3]) -> Option<Vec3> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vec3::ZERO, |acc, p| acc + *p);
    Some(sum / points.len() as f64)
}

/// Mean position of an object's points.
pub fn object_centroid(points: &[Vec3]) -> Result<Vec3> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite);
    }
    mean(points).ok_or(Error::EmptyPointSet)
}

/// Room centroid (mean of object centroids) and each object's Euclidean
/// distance to it, in input order.
pub fn room_centroid_and_distances(object_centroids: &[Vec3]) -> Result<(Vec3, alloc::vec::Vec<f64>)> {
    let center = mean(object_centroids).ok_or(Error::EmptyScene)?;
    let distances = object_centroids.iter().map(|c| c.distance(center)).collect();
    Ok((center, distances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn centroid_of_two_points() {
        let c = object_centroid(&[Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0)]).unwrap();
        assert_eq!(c, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn centroid_of_singleton() {
        let p = Vec3::new(5.0, -1.0, 2.0);
        assert_eq!(object_centroid(&[p]).unwrap(), p);
    }

    #[test]
    fn centroid_of_unit_cube_corners() {
        let corners: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        // Each axis has four zeros and four ones.
        let c = object_centroid(&corners).unwrap();
        assert_eq!(c, Vec3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_point_set() {
        assert_eq!(object_centroid(&[]), Err(Error::EmptyPointSet));
        assert_eq!(room_centroid_and_distances(&[]).unwrap_err(), Error::EmptyScene);
    }

    #[test]
    fn symmetric_room() {
        let (c, d) =
            room_centroid_and_distances(&[Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(c, Vec3::ZERO);
        assert_eq!(d, vec![1.0, 1.0]);
        let (c, d) = room_centroid_and_distances(&[Vec3::ZERO]).unwrap();
        assert_eq!(c, Vec3::ZERO);
        assert_eq!(d, vec![0.0]);
    }

    #[test]
    fn three_object_room_matches_hand_arithmetic() {
        let (c, d) = room_centroid_and_distances(&[
            Vec3::ZERO,
            Vec3::new(0.0, 4.0, 0.0),
            Vec3::new(0.0, 0.0, 3.0),
        ])
        .unwrap();
        assert!((c.y - 4.0 / 3.0).abs() < 1e-15 && (c.z - 1.0).abs() < 1e-15 && c.x == 0.0);
        // d0 = sqrt(16/9 + 1) = 5/3; d1 = sqrt(64/9 + 1) = sqrt(73)/3; d2 = sqrt(16/9 + 4) = sqrt(52)/3
        let expected = [5.0 / 3.0, 73f64.sqrt() / 3.0, 52f64.sqrt() / 3.0];
        for (a, b) in d.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn aabb_rules() {
        let a = Aabb::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let face = Aabb::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0)).unwrap();
        let apart = Aabb::new(Vec3::new(1.5, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0)).unwrap();
        assert!(a.overlaps(&a));
        assert!(a.overlaps(&face) && face.overlaps(&a));
        assert!(!a.overlaps(&apart));
        assert!(Aabb::new(Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO).is_none());
    }

    #[test]
    fn vec3_serializes_as_array() {
        // serde round trip through the derive is covered by the std crate; check the conversions.
        let v: [f64; 3] = Vec3::new(1.0, 2.0, 3.0).into();
        assert_eq!(v, [1.0, 2.0, 3.0]);
    }
}
