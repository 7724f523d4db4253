//! Axis-aligned primitives shared by scenes, simulators and evaluation.
//!
//! Everything is axis-aligned and measured in meters. A [`Box3`] is the
//! volume of a room or a furniture item; a [`Rect2`] is its footprint on one
//! of the two surfaces the agents work on (the x-y floor plan or the y-z
//! elevation).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed when testing containment, in meters. Lattice positions are
/// computed as `start + k * step` and may land a few ulps past a wall.
pub const CONTAINMENT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rectangles live on different surfaces ({0:?} vs {1:?})")]
    AxesMismatch(Axes, Axes),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("{what} must have strictly positive size, got {size:?}")]
    Degenerate { what: &'static str, size: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn axis(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis index {axis} out of range"),
        }
    }

    pub fn with_axis(mut self, axis: usize, value: f64) -> Self {
        match axis {
            0 => self.x = value,
            1 => self.y = value,
            2 => self.z = value,
            _ => panic!("axis index {axis} out of range"),
        }
        self
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

/// Axis-aligned box given by its center and full extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct Box3 {
    center: Vec3,
    size: Vec3,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    center: Vec3,
    size: Vec3,
}

impl TryFrom<RawBox> for Box3 {
    type Error = GeometryError;
    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        Box3::new(raw.center, raw.size)
    }
}

impl From<Box3> for RawBox {
    fn from(b: Box3) -> Self {
        RawBox {
            center: b.center,
            size: b.size,
        }
    }
}

impl Box3 {
    pub fn new(center: Vec3, size: Vec3) -> Result<Self, GeometryError> {
        if !center.is_finite() || !size.is_finite() {
            return Err(GeometryError::NonFinite("box"));
        }
        if size.x <= 0.0 || size.y <= 0.0 || size.z <= 0.0 {
            return Err(GeometryError::Degenerate {
                what: "box",
                size: size.to_array(),
            });
        }
        Ok(Self { center, size })
    }

    /// Box spanning `[min, min + size]`.
    pub fn from_min(min: Vec3, size: Vec3) -> Result<Self, GeometryError> {
        Self::new(
            Vec3::new(
                min.x + size.x / 2.0,
                min.y + size.y / 2.0,
                min.z + size.z / 2.0,
            ),
            size,
        )
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn size(&self) -> Vec3 {
        self.size
    }

    pub fn min(&self) -> Vec3 {
        Vec3::new(
            self.center.x - self.size.x / 2.0,
            self.center.y - self.size.y / 2.0,
            self.center.z - self.size.z / 2.0,
        )
    }

    pub fn max(&self) -> Vec3 {
        Vec3::new(
            self.center.x + self.size.x / 2.0,
            self.center.y + self.size.y / 2.0,
            self.center.z + self.size.z / 2.0,
        )
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    /// Same size, new center. The center must be finite.
    pub fn with_center(&self, center: Vec3) -> Self {
        assert!(center.is_finite(), "box center must be finite");
        Self {
            center,
            size: self.size,
        }
    }

    /// Closed containment of `self` in `outer` on all three axes.
    pub fn inside(&self, outer: &Box3) -> bool {
        rect_inside(&project_xy(self), &project_xy(outer)).unwrap_or(false)
            && rect_inside(&project_yz(self), &project_yz(outer)).unwrap_or(false)
    }
}

/// Which 3D surface a rectangle lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axes {
    XY,
    YZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub u: f64,
    pub v: f64,
}

impl Vec2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.u, v.v]
    }
}

/// Axis-aligned rectangle on one surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRect", into = "RawRect")]
pub struct Rect2 {
    center: Vec2,
    size: Vec2,
    axes: Axes,
}

#[derive(Serialize, Deserialize)]
struct RawRect {
    center: Vec2,
    size: Vec2,
    axes: Axes,
}

impl TryFrom<RawRect> for Rect2 {
    type Error = GeometryError;
    fn try_from(raw: RawRect) -> Result<Self, Self::Error> {
        Rect2::new(raw.center, raw.size, raw.axes)
    }
}

impl From<Rect2> for RawRect {
    fn from(r: Rect2) -> Self {
        RawRect {
            center: r.center,
            size: r.size,
            axes: r.axes,
        }
    }
}

impl Rect2 {
    pub fn new(center: Vec2, size: Vec2, axes: Axes) -> Result<Self, GeometryError> {
        if !(center.u.is_finite() && center.v.is_finite() && size.u.is_finite() && size.v.is_finite()) {
            return Err(GeometryError::NonFinite("rect"));
        }
        if size.u <= 0.0 || size.v <= 0.0 {
            return Err(GeometryError::Degenerate {
                what: "rect",
                size: [size.u, size.v, 0.0],
            });
        }
        Ok(Self { center, size, axes })
    }

    pub fn center(&self) -> Vec2 {
        self.center
    }

    pub fn size(&self) -> Vec2 {
        self.size
    }

    pub fn axes(&self) -> Axes {
        self.axes
    }

    pub fn min(&self) -> Vec2 {
        Vec2::new(
            self.center.u - self.size.u / 2.0,
            self.center.v - self.size.v / 2.0,
        )
    }

    pub fn max(&self) -> Vec2 {
        Vec2::new(
            self.center.u + self.size.u / 2.0,
            self.center.v + self.size.v / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.size.u * self.size.v
    }
}

pub fn project_xy(b: &Box3) -> Rect2 {
    Rect2 {
        center: Vec2::new(b.center.x, b.center.y),
        size: Vec2::new(b.size.x, b.size.y),
        axes: Axes::XY,
    }
}

pub fn project_yz(b: &Box3) -> Rect2 {
    Rect2 {
        center: Vec2::new(b.center.y, b.center.z),
        size: Vec2::new(b.size.y, b.size.z),
        axes: Axes::YZ,
    }
}

pub fn project(b: &Box3, axes: Axes) -> Rect2 {
    match axes {
        Axes::XY => project_xy(b),
        Axes::YZ => project_yz(b),
    }
}

/// Interval length computed the same way as [`overlap_1d`], so that an
/// interval overlapping itself yields exactly its own length.
fn extent_1d(c: f64, s: f64) -> f64 {
    (c + s / 2.0) - (c - s / 2.0)
}

/// Length of the overlap of two centered intervals, zero when disjoint.
fn overlap_1d(c1: f64, s1: f64, c2: f64, s2: f64) -> f64 {
    let lo = (c1 - s1 / 2.0).max(c2 - s2 / 2.0);
    let hi = (c1 + s1 / 2.0).min(c2 + s2 / 2.0);
    (hi - lo).max(0.0)
}

pub fn rect_intersection_area(a: &Rect2, b: &Rect2) -> Result<f64, GeometryError> {
    if a.axes != b.axes {
        return Err(GeometryError::AxesMismatch(a.axes, b.axes));
    }
    Ok(overlap_1d(a.center.u, a.size.u, b.center.u, b.size.u)
        * overlap_1d(a.center.v, a.size.v, b.center.v, b.size.v))
}

/// Intersection over union of two rectangles on the same surface.
pub fn rect_iou(a: &Rect2, b: &Rect2) -> Result<f64, GeometryError> {
    let inter = rect_intersection_area(a, b)?;
    if inter <= 0.0 {
        return Ok(0.0);
    }
    let area = |r: &Rect2| extent_1d(r.center.u, r.size.u) * extent_1d(r.center.v, r.size.v);
    let union = area(a) + area(b) - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Volume intersection over union.
pub fn box_iou3d(a: &Box3, b: &Box3) -> f64 {
    let inter = box_intersection_volume(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let vol = |b: &Box3| {
        extent_1d(b.center.x, b.size.x) * extent_1d(b.center.y, b.size.y) * extent_1d(b.center.z, b.size.z)
    };
    let union = vol(a) + vol(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn box_intersection_volume(a: &Box3, b: &Box3) -> f64 {
    overlap_1d(a.center.x, a.size.x, b.center.x, b.size.x)
        * overlap_1d(a.center.y, a.size.y, b.center.y, b.size.y)
        * overlap_1d(a.center.z, a.size.z, b.center.z, b.size.z)
}

/// Closed containment: touching the boundary counts as inside.
pub fn rect_inside(inner: &Rect2, outer: &Rect2) -> Result<bool, GeometryError> {
    if inner.axes != outer.axes {
        return Err(GeometryError::AxesMismatch(inner.axes, outer.axes));
    }
    let (imin, imax) = (inner.min(), inner.max());
    let (omin, omax) = (outer.min(), outer.max());
    Ok(imin.u >= omin.u - CONTAINMENT_EPS
        && imin.v >= omin.v - CONTAINMENT_EPS
        && imax.u <= omax.u + CONTAINMENT_EPS
        && imax.v <= omax.v + CONTAINMENT_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(cu: f64, cv: f64, su: f64, sv: f64) -> Rect2 {
        Rect2::new(Vec2::new(cu, cv), Vec2::new(su, sv), Axes::XY).unwrap()
    }

    fn cube(c: [f64; 3], s: [f64; 3]) -> Box3 {
        Box3::new(c.into(), s.into()).unwrap()
    }

    /// Cell-center rasterization over the joint bounding box.
    fn raster_iou(a: &Rect2, b: &Rect2, n: usize) -> f64 {
        let lo_u = a.min().u.min(b.min().u);
        let lo_v = a.min().v.min(b.min().v);
        let hi_u = a.max().u.max(b.max().u);
        let hi_v = a.max().v.max(b.max().v);
        let (du, dv) = ((hi_u - lo_u) / n as f64, (hi_v - lo_v) / n as f64);
        let contains = |r: &Rect2, u: f64, v: f64| {
            u >= r.min().u && u < r.max().u && v >= r.min().v && v < r.max().v
        };
        let (mut inter, mut union) = (0u64, 0u64);
        for i in 0..n {
            let u = lo_u + (i as f64 + 0.5) * du;
            for j in 0..n {
                let v = lo_v + (j as f64 + 0.5) * dv;
                let (ia, ib) = (contains(a, u, v), contains(b, u, v));
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn projections_drop_one_coordinate() {
        let b = cube([1.0, 2.0, 3.0], [2.0, 1.0, 4.0]);
        let xy = project_xy(&b);
        assert_eq!(xy.center(), Vec2::new(1.0, 2.0));
        assert_eq!(xy.size(), Vec2::new(2.0, 1.0));
        assert_eq!(xy.axes(), Axes::XY);
        let yz = project_yz(&b);
        assert_eq!(yz.center(), Vec2::new(2.0, 3.0));
        assert_eq!(yz.size(), Vec2::new(1.0, 4.0));
        assert_eq!(yz.axes(), Axes::YZ);

        let unit = cube([0.0; 3], [1.0; 3]);
        assert_eq!(project_xy(&unit).center(), Vec2::new(0.0, 0.0));
        assert_eq!(project_yz(&unit).size(), Vec2::new(1.0, 1.0));

        // re-embedding the footprint with the dropped z restores the box
        let back = Box3::new(
            Vec3::new(xy.center().u, xy.center().v, b.center().z),
            Vec3::new(xy.size().u, xy.size().v, b.size().z),
        )
        .unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn iou_examples() {
        let a = rect(0.5, 0.5, 1.0, 1.0);
        assert_eq!(rect_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(rect_iou(&a, &rect(5.0, 5.0, 1.0, 1.0)).unwrap(), 0.0);

        // raster_iou at 2000x2000 gives 666/2000 = 0.333; the grid resolves
        // 1/n, the analytic value is 1/3
        let b = rect(1.0, 0.5, 1.0, 1.0);
        let oracle = raster_iou(&a, &b, 2000);
        assert_eq!(oracle, 0.333);
        let iou = rect_iou(&a, &b).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-6);
        assert!((iou - oracle).abs() < 2e-3);

        let yz = Rect2::new(Vec2::new(0.5, 0.5), Vec2::new(1.0, 1.0), Axes::YZ).unwrap();
        assert!(matches!(
            rect_iou(&a, &yz),
            Err(GeometryError::AxesMismatch(Axes::XY, Axes::YZ))
        ));
    }

    #[test]
    fn box_iou_examples() {
        let a = cube([0.0; 3], [1.0; 3]);
        assert_eq!(box_iou3d(&a, &a), 1.0);
        let face = cube([1.0, 0.0, 0.0], [1.0; 3]);
        assert_eq!(box_iou3d(&a, &face), 0.0);
        let half = cube([0.5, 0.0, 0.0], [1.0; 3]);
        assert!((box_iou3d(&a, &half) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn containment_is_closed() {
        let room = rect(5.0, 5.0, 10.0, 10.0);
        assert!(rect_inside(&rect(5.0, 5.0, 1.0, 1.0), &room).unwrap());
        assert!(rect_inside(&rect(9.5, 5.0, 1.0, 1.0), &room).unwrap());
        assert!(!rect_inside(&rect(9.501, 5.0, 1.0, 1.0), &room).unwrap());
        assert!(!rect_inside(&rect(5.0, 0.49, 1.0, 1.0), &room).unwrap());
        let yz = Rect2::new(Vec2::new(5.0, 5.0), Vec2::new(1.0, 1.0), Axes::YZ).unwrap();
        assert!(rect_inside(&yz, &room).is_err());
    }

    #[test]
    fn degenerate_shapes_are_rejected() {
        assert!(Box3::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 1.0)).is_err());
        assert!(Box3::new(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0)).is_err());
        assert!(Rect2::new(Vec2::new(0.0, 0.0), Vec2::new(-1.0, 1.0), Axes::XY).is_err());
        let err = serde_json::from_str::<Box3>(r#"{"center":[0,0,0],"size":[1,1,0]}"#);
        assert!(err.is_err());
    }

    fn arb_rect() -> impl Strategy<Value = Rect2> {
        (-5.0..5.0f64, -5.0..5.0f64, 0.05..4.0f64, 0.05..4.0f64)
            .prop_map(|(cu, cv, su, sv)| rect(cu, cv, su, sv))
    }

    fn arb_box() -> impl Strategy<Value = Box3> {
        (
            prop::array::uniform3(-3.0..3.0f64),
            prop::array::uniform3(0.05..3.0f64),
        )
            .prop_map(|(c, s)| cube(c, s))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_rect(), b in arb_rect()) {
            let ab = rect_iou(&a, &b).unwrap();
            let ba = rect_iou(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(rect_iou(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn iou_shrinks_as_rects_separate(a in arb_rect(), b in arb_rect(), steps in prop::collection::vec(0.0..0.5f64, 1..20)) {
            // slide b away from a along u, starting from a's center
            let mut last = f64::INFINITY;
            let mut offset = 0.0;
            for d in steps {
                offset += d;
                let moved = rect(a.center().u + offset, a.center().v, b.size().u, b.size().v);
                let iou = rect_iou(&a, &moved).unwrap();
                prop_assert!(iou <= last + 1e-12);
                last = iou;
            }
        }

        #[test]
        fn box_iou_bounded_by_surface_ious(a in arb_box(), b in arb_box()) {
            let v = box_iou3d(&a, &b);
            let xy = rect_iou(&project_xy(&a), &project_xy(&b)).unwrap();
            let yz = rect_iou(&project_yz(&a), &project_yz(&b)).unwrap();
            prop_assert!(v <= xy.min(yz) + 1e-12, "3d {} xy {} yz {}", v, xy, yz);
            prop_assert_eq!(v, box_iou3d(&b, &a));
        }

        #[test]
        fn box_serde_roundtrip(b in arb_box()) {
            let text = serde_json::to_string(&b).unwrap();
            prop_assert_eq!(serde_json::from_str::<Box3>(&text).unwrap(), b);
        }
    }
}
