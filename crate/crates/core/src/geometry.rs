//! Camera geometry shared by fusion, filtering, simulation and evaluation.
//!
//! Conventions: camera frames are right-handed with x to the right, y down
//! and z along the optical axis. The world frame is the first camera frame
//! of a sequence. An [`EgoPose`] maps world points into the camera frame of
//! one timestamp: `X_cam = R * X_world + t`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rays whose direction makes `|ray . normal|` smaller than this are treated
/// as parallel to the ground.
pub const PARALLEL_RAY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    /// Focal length in pixels.
    pub f: f64,
    pub u0: f64,
    pub v0: f64,
    pub image_width: f64,
    pub image_height: f64,
}

impl CameraIntrinsics {
    pub fn new(f: f64, u0: f64, v0: f64, image_width: f64, image_height: f64) -> Result<Self> {
        let intr = Self {
            f,
            u0,
            v0,
            image_width,
            image_height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0 && self.f.is_finite()) {
            return Err(Error::invalid("f", "focal length must be positive"));
        }
        if !(0.0..=self.image_width).contains(&self.u0) {
            return Err(Error::invalid("u0", "principal point outside the image"));
        }
        if !(0.0..=self.image_height).contains(&self.v0) {
            return Err(Error::invalid("v0", "principal point outside the image"));
        }
        Ok(())
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        (0.0..=self.image_width).contains(&pixel.x) && (0.0..=self.image_height).contains(&pixel.y)
    }
}

/// Rigid transform from the world frame into a camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for EgoPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl EgoPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Builds the pose from a camera-to-world rotation and the camera center
    /// expressed in world coordinates.
    pub fn from_camera_to_world(rotation_cw: Matrix3<f64>, center: Vector3<f64>) -> Self {
        let rotation = rotation_cw.transpose();
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let orth = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if orth > 1e-6 || (self.rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("rotation", "must be orthonormal with determinant +1"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation", "must be finite"));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Transform taking points from this camera frame into `other`'s camera frame.
    pub fn relative_to(&self, other: &EgoPose) -> EgoPose {
        let rotation = other.rotation * self.rotation.transpose();
        EgoPose {
            rotation,
            translation: other.translation - rotation * self.translation,
        }
    }
}

/// Plane `{x : normal . x = offset}` in world coordinates. The normal points
/// away from the ground into free space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl GroundPlane {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let norm = normal.norm();
        if !(norm.is_finite() && norm > 0.0) || !offset.is_finite() {
            return Err(Error::invalid("plane", "normal must be a finite non-zero vector"));
        }
        Ok(Self {
            normal: normal / norm,
            offset: offset / norm,
        })
    }

    /// Flat road `camera_height` meters below a camera whose y axis points down.
    pub fn below_camera(camera_height: f64) -> Self {
        Self {
            normal: Vector3::new(0.0, -1.0, 0.0),
            offset: -camera_height,
        }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * self.signed_distance(p)
    }

    /// Orthonormal in-plane axes. The first follows world x (object width),
    /// the second completes a right-handed frame with the normal (object length).
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut seed = Vector3::x();
        if self.normal.dot(&seed).abs() > 0.9 {
            seed = Vector3::z();
        }
        let e_w = (seed - self.normal * self.normal.dot(&seed)).normalize();
        let e_l = self.normal.cross(&e_w);
        (e_w, e_l)
    }

    /// In-plane coordinates of a world point.
    pub fn coordinates(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let (e_w, e_l) = self.basis();
        Vector2::new(e_w.dot(p), e_l.dot(p))
    }

    /// Expresses the plane in the frame given by `pose`.
    pub fn transformed(&self, pose: &EgoPose) -> GroundPlane {
        let normal = pose.rotation * self.normal;
        GroundPlane {
            normal,
            offset: self.offset + normal.dot(&pose.translation),
        }
    }
}

/// Axis-aligned image box in center format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox2D {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox2D {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_corners(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self {
            x: 0.5 * (left + right),
            y: 0.5 * (top + bottom),
            w: right - left,
            h: bottom - top,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn left(&self) -> f64 {
        self.x - 0.5 * self.w
    }

    pub fn right(&self) -> f64 {
        self.x + 0.5 * self.w
    }

    pub fn top(&self) -> f64 {
        self.y - 0.5 * self.h
    }

    pub fn bottom(&self) -> f64 {
        self.y + 0.5 * self.h
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Bottom-center pixel, assumed to touch the ground.
    pub fn footpoint(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.bottom())
    }

    pub fn area(&self) -> f64 {
        (self.right() - self.left()) * (self.bottom() - self.top())
    }
}

pub fn project(point_camera: &Vector3<f64>, intr: &CameraIntrinsics) -> Result<Vector2<f64>> {
    let z = point_camera.z;
    if !(z > 0.0) {
        return Err(Error::BehindCamera { depth: z });
    }
    Ok(Vector2::new(
        intr.f * point_camera.x / z + intr.u0,
        intr.f * point_camera.y / z + intr.v0,
    ))
}

/// Camera-frame point at depth `depth` along the ray through `pixel`.
pub fn backproject_at_depth(pixel: &Vector2<f64>, depth: f64, intr: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new(
        depth * (pixel.x - intr.u0) / intr.f,
        depth * (pixel.y - intr.v0) / intr.f,
        depth,
    )
}

/// Intersects the viewing ray of `pixel` with the ground plane and returns
/// the world point.
pub fn backproject_to_ground(
    pixel: &Vector2<f64>,
    intr: &CameraIntrinsics,
    ego: &EgoPose,
    plane: &GroundPlane,
) -> Result<Vector3<f64>> {
    let ray_cam = Vector3::new((pixel.x - intr.u0) / intr.f, (pixel.y - intr.v0) / intr.f, 1.0);
    let ray_world = ego.rotation.transpose() * ray_cam;
    let center = ego.center();
    let denom = plane.normal.dot(&ray_world);
    if denom.abs() < PARALLEL_RAY_EPS * ray_world.norm() {
        return Err(Error::NoGroundIntersection);
    }
    // ray_cam has unit z, so the ray parameter equals camera depth
    let depth = (plane.offset - plane.normal.dot(&center)) / denom;
    if !(depth > 0.0) {
        return Err(Error::NoGroundIntersection);
    }
    Ok(center + ray_world * depth)
}

/// Moves a box from the previous camera frame into the current one, using
/// `depth_estimate` to lift its footpoint into 3D. Width and height are kept.
pub fn ego_correct_bbox(
    bbox: &BBox2D,
    depth_estimate: f64,
    intr: &CameraIntrinsics,
    ego_prev: &EgoPose,
    ego_curr: &EgoPose,
) -> Result<BBox2D> {
    if !(depth_estimate > 0.0) {
        return Err(Error::BehindCamera {
            depth: depth_estimate,
        });
    }
    if ego_prev == ego_curr {
        return Ok(*bbox);
    }
    let foot_prev = backproject_at_depth(&bbox.footpoint(), depth_estimate, intr);
    let foot_curr = ego_prev.relative_to(ego_curr).world_to_camera(&foot_prev);
    let pixel = project(&foot_curr, intr).map_err(|_| Error::LeftFrustum)?;
    Ok(BBox2D {
        x: pixel.x,
        y: pixel.y - 0.5 * bbox.h,
        w: bbox.w,
        h: bbox.h,
    })
}

pub fn iou_2d(a: &BBox2D, b: &BBox2D) -> f64 {
    if a == b {
        return 1.0;
    }
    let iw = a.right().min(b.right()) - a.left().max(b.left());
    let ih = a.bottom().min(b.bottom()) - a.top().max(b.top());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// 3D size `(width, height, length)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Size3 {
    pub w: f64,
    pub h: f64,
    pub l: f64,
}

impl Size3 {
    pub fn new(w: f64, h: f64, l: f64) -> Self {
        Self { w, h, l }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.w, self.h, self.l)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.l > 0.0
    }
}

/// World-frame corners of an upright box standing on the ground at
/// `footprint_center`, width along the first plane axis and length along the second.
pub fn box_corners(footprint_center: &Vector3<f64>, size: &Size3, plane: &GroundPlane) -> [Vector3<f64>; 8] {
    let (e_w, e_l) = plane.basis();
    let up = plane.normal;
    let mut corners = [Vector3::zeros(); 8];
    let mut k = 0;
    for &sh in &[0.0, 1.0] {
        for &sw in &[-0.5, 0.5] {
            for &sl in &[-0.5, 0.5] {
                corners[k] = footprint_center + e_w * (sw * size.w) + e_l * (sl * size.l) + up * (sh * size.h);
                k += 1;
            }
        }
    }
    corners
}

/// Axis-aligned image hull of the projected upright 3D box. Fails when any
/// corner lies behind the camera.
pub fn project_box_hull(
    footprint_center: &Vector3<f64>,
    size: &Size3,
    plane: &GroundPlane,
    ego: &EgoPose,
    intr: &CameraIntrinsics,
) -> Result<BBox2D> {
    let (mut l, mut t, mut r, mut b) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in box_corners(footprint_center, size, plane) {
        let px = project(&ego.world_to_camera(&corner), intr)?;
        l = l.min(px.x);
        r = r.max(px.x);
        t = t.min(px.y);
        b = b.max(px.y);
    }
    Ok(BBox2D::from_corners(l, t, r, b))
}

/// Rotation about the camera's vertical (y) axis.
pub fn rotation_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 50.0, 50.0, 100.0, 100.0).unwrap()
    }

    fn kitti_like() -> CameraIntrinsics {
        CameraIntrinsics::new(721.5, 609.6, 172.9, 1242.0, 375.0).unwrap()
    }

    #[test]
    fn project_optical_axis_hits_principal_point() {
        let px = project(&Vector3::new(0.0, 0.0, 10.0), &intr()).unwrap();
        assert_eq!(px, Vector2::new(50.0, 50.0));
        let px = project(&Vector3::new(1.0, 0.0, 10.0), &intr()).unwrap();
        assert_eq!(px, Vector2::new(60.0, 50.0));
    }

    #[test]
    fn project_rejects_points_behind_camera() {
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, 0.0), &intr()),
            Err(Error::BehindCamera { .. })
        ));
        assert!(project(&Vector3::new(1.0, 1.0, -3.0), &intr()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 2.0, 2.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 3.0, 1.0, 2.0, 2.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, -1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn ground_distance_from_pixel_offset() {
        // camera 1.5 m above the plane y = 0 (y down), looking horizontally
        let intr = intr();
        let ego = EgoPose::from_camera_to_world(Matrix3::identity(), Vector3::new(0.0, -1.5, 0.0));
        let plane = GroundPlane::new(Vector3::new(0.0, -1.0, 0.0), 0.0).unwrap();
        for dv in [1.0, 5.0, 12.5, 40.0] {
            let p = backproject_to_ground(&Vector2::new(50.0, 50.0 + dv), &intr, &ego, &plane).unwrap();
            assert_abs_diff_eq!(p.z, intr.f * 1.5 / dv, epsilon = 1e-9);
            assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pixel_above_horizon_has_no_intersection() {
        let ego = EgoPose::identity();
        let plane = GroundPlane::below_camera(1.5);
        let r = backproject_to_ground(&Vector2::new(50.0, 20.0), &intr(), &ego, &plane);
        assert!(matches!(r, Err(Error::NoGroundIntersection)));
        // exactly on the horizon: ray parallel to the plane
        let r = backproject_to_ground(&Vector2::new(50.0, 50.0), &intr(), &ego, &plane);
        assert!(matches!(r, Err(Error::NoGroundIntersection)));
    }

    #[test]
    fn iou_examples() {
        let a = BBox2D::from_corners(0.0, 0.0, 2.0, 2.0);
        let b = BBox2D::from_corners(1.0, 1.0, 3.0, 3.0);
        assert_abs_diff_eq!(iou_2d(&a, &b), 1.0 / 7.0, epsilon = 1e-12);
        assert_eq!(iou_2d(&a, &a), 1.0);
        let c = BBox2D::from_corners(5.0, 5.0, 6.0, 6.0);
        assert_eq!(iou_2d(&a, &c), 0.0);
    }

    #[test]
    fn ego_correction_identity_motion() {
        let bbox = BBox2D::new(600.0, 180.0, 40.0, 30.0);
        let pose = EgoPose::from_camera_to_world(rotation_y(0.3), Vector3::new(1.0, 0.0, 4.0));
        let out = ego_correct_bbox(&bbox, 12.0, &kitti_like(), &pose, &pose).unwrap();
        assert_eq!(out, bbox);
    }

    #[test]
    fn ego_correction_forward_motion_matches_manual_chain() {
        let intr = kitti_like();
        let prev = EgoPose::identity();
        let curr = EgoPose::from_camera_to_world(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0));
        let bbox = BBox2D::new(700.0, 200.0, 50.0, 40.0);
        let depth = 15.0;
        let out = ego_correct_bbox(&bbox, depth, &intr, &prev, &curr).unwrap();

        // manual: pixel -> camera ray at depth -> world -> current camera -> pixel
        let foot = bbox.footpoint();
        let p_cam = Vector3::new(
            (foot.x - intr.u0) / intr.f * depth,
            (foot.y - intr.v0) / intr.f * depth,
            depth,
        );
        let world = prev.camera_to_world(&p_cam);
        let q = curr.world_to_camera(&world);
        let u = intr.f * q.x / q.z + intr.u0;
        let v = intr.f * q.y / q.z + intr.v0;
        assert_abs_diff_eq!(out.x, u, epsilon = 1e-9);
        assert_abs_diff_eq!(out.bottom(), v, epsilon = 1e-9);
        // approaching a static object moves its footpoint down and outward
        assert!(out.bottom() > bbox.bottom());
        assert!(out.x > bbox.x);
        assert_eq!((out.w, out.h), (bbox.w, bbox.h));
    }

    #[test]
    fn ego_correction_behind_camera_is_frustum_exit() {
        let intr = kitti_like();
        let prev = EgoPose::identity();
        let curr = EgoPose::from_camera_to_world(Matrix3::identity(), Vector3::new(0.0, 0.0, 20.0));
        let bbox = BBox2D::new(609.0, 200.0, 50.0, 40.0);
        assert!(matches!(
            ego_correct_bbox(&bbox, 10.0, &intr, &prev, &curr),
            Err(Error::LeftFrustum)
        ));
    }

    #[test]
    fn plane_transform_keeps_points_on_plane() {
        let plane = GroundPlane::below_camera(1.65);
        let pose = EgoPose::from_camera_to_world(rotation_y(0.4), Vector3::new(3.0, 0.0, 7.0));
        let local = plane.transformed(&pose);
        let p = Vector3::new(2.0, 1.65, 11.0);
        assert_abs_diff_eq!(local.signed_distance(&pose.world_to_camera(&p)), 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn project_matches_pinhole_formula(
            x in -20.0..20.0f64, y in -5.0..5.0f64, z in 0.5..80.0f64,
        ) {
            let intr = kitti_like();
            let px = project(&Vector3::new(x, y, z), &intr).unwrap();
            prop_assert!((px.x - (intr.f * x / z + intr.u0)).abs() < 1e-12);
            prop_assert!((px.y - (intr.f * y / z + intr.v0)).abs() < 1e-12);
        }

        #[test]
        fn ground_roundtrip(
            u in 0.0..1242.0f64, dv in 1.0..200.0f64,
            yaw in -1.0..1.0f64, cx in -10.0..10.0f64, cz in -10.0..30.0f64,
        ) {
            let intr = kitti_like();
            let ego = EgoPose::from_camera_to_world(rotation_y(yaw), Vector3::new(cx, 0.0, cz));
            let plane = GroundPlane::below_camera(1.65);
            let pixel = Vector2::new(u, intr.v0 + dv);
            let world = backproject_to_ground(&pixel, &intr, &ego, &plane).unwrap();
            prop_assert!(plane.signed_distance(&world).abs() < 1e-9);
            let back = project(&ego.world_to_camera(&world), &intr).unwrap();
            prop_assert!((back - pixel).norm() < 1e-9);
        }

        #[test]
        fn iou_symmetric_and_bounded(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64, aw in 0.1..40.0f64, ah in 0.1..40.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64, bw in 0.1..40.0f64, bh in 0.1..40.0f64,
        ) {
            let a = BBox2D::new(ax, ay, aw, ah);
            let b = BBox2D::new(bx, by, bw, bh);
            let ab = iou_2d(&a, &b);
            prop_assert_eq!(ab, iou_2d(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!(ab < 1.0 || a == b);
            let disjoint = a.right() <= b.left() || b.right() <= a.left()
                || a.bottom() <= b.top() || b.bottom() <= a.top();
            prop_assert_eq!(ab == 0.0, disjoint);
        }

        #[test]
        fn ego_correction_preserves_size(
            x in 100.0..1100.0f64, y in 150.0..300.0f64, w in 5.0..200.0f64, h in 5.0..150.0f64,
            depth in 3.0..50.0f64, dz in -1.0..1.5f64, yaw in -0.05..0.05f64,
        ) {
            let intr = kitti_like();
            let prev = EgoPose::identity();
            let curr = EgoPose::from_camera_to_world(rotation_y(yaw), Vector3::new(0.0, 0.0, dz));
            let bbox = BBox2D::new(x, y, w, h);
            if let Ok(out) = ego_correct_bbox(&bbox, depth, &intr, &prev, &curr) {
                prop_assert_eq!(out.w, w);
                prop_assert_eq!(out.h, h);
            }
        }
    }
}
