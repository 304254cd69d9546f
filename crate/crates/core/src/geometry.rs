//! Pinhole camera primitives: intrinsics, rigid poses, projection.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

/// Pinhole intrinsics. No distortion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateInput("intrinsics out of range"))
        }
    }

    /// Image diagonal in pixels.
    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }
}

/// World-to-camera rigid transform `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

const ROTATION_TOL: f64 = 1e-9;

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Build a pose, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Pose { rotation, translation };
        if pose.is_valid(ROTATION_TOL) {
            Ok(pose)
        } else {
            Err(Error::DegenerateInput("rotation matrix is not orthonormal with det +1"))
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Pose { rotation: *rot.matrix(), translation }
    }

    /// Camera at `center` looking at `target`, with `up` roughly the world up
    /// direction. The camera y axis points down in the image.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let z = (target - center).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -rotation * center;
        Pose { rotation, translation }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        ortho <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }
}

/// `a ∘ b`: apply `b` first, then `a`.
pub fn compose_pose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub id: u64,
    pub xyz: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        PixelPoint { u, v }
    }

    pub fn dist(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Project a world point through a pinhole camera.
pub fn project(p: &WorldPoint, pose: &Pose, k: &Intrinsics) -> Result<PixelPoint> {
    project_xyz(&p.xyz, pose, k)
}

pub fn project_xyz(xyz: &Vector3<f64>, pose: &Pose, k: &Intrinsics) -> Result<PixelPoint> {
    let c = pose.transform(xyz);
    if c.z <= 0.0 {
        return Err(Error::PointBehindCamera { depth: c.z });
    }
    Ok(PixelPoint { u: k.fx * c.x / c.z + k.cx, v: k.fy * c.y / c.z + k.cy })
}

/// Project the SO(3)-nearest rotation of an arbitrary 3x3 matrix.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn k100() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    fn wp(x: f64, y: f64, z: f64) -> WorldPoint {
        WorldPoint { id: 0, xyz: Vector3::new(x, y, z) }
    }

    /// Test helper: back-project a pixel at camera depth `d`.
    fn unproject(q: PixelPoint, d: f64, pose: &Pose, k: &Intrinsics) -> Vector3<f64> {
        let cam = Vector3::new((q.u - k.cx) / k.fx * d, (q.v - k.cy) / k.fy * d, d);
        pose.rotation.transpose() * (cam - pose.translation)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = project(&wp(0.0, 0.0, 5.0), &Pose::identity(), &k100()).unwrap();
        assert_eq!((p.u, p.v), (50.0, 50.0));
    }

    #[test]
    fn lateral_offset() {
        let p = project(&wp(1.0, 0.0, 5.0), &Pose::identity(), &k100()).unwrap();
        assert!(close(p.u, 70.0, 1e-12) && close(p.v, 50.0, 1e-12));
    }

    #[test]
    fn behind_camera() {
        let r = project(&wp(0.0, 0.0, -1.0), &Pose::identity(), &k100());
        assert!(matches!(r, Err(Error::PointBehindCamera { .. })));
        let r = project(&wp(0.0, 0.0, 0.0), &Pose::identity(), &k100());
        assert!(matches!(r, Err(Error::PointBehindCamera { .. })));
    }

    #[test]
    fn intrinsics_invariants() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 3.9, 0.0, 4, 4).is_ok());
    }

    #[test]
    fn compose_identity_and_inverse() {
        let p = Pose::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.7, Vector3::new(1.0, -2.0, 0.5));
        assert_eq!(compose_pose(&Pose::identity(), &p), p);
        let e = compose_pose(&p, &p.inverse());
        assert!((e.rotation - Matrix3::identity()).norm() < 1e-9);
        assert!(e.translation.norm() < 1e-9);
    }

    #[test]
    fn two_quarter_turns_make_half_turn() {
        let q = Pose::from_axis_angle(Vector3::z(), std::f64::consts::FRAC_PI_2, Vector3::zeros());
        let h = compose_pose(&q, &q);
        // direct product of [[0,-1,0],[1,0,0],[0,0,1]] with itself
        let expected = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!((h.rotation - expected).norm() < 1e-9);
        assert!(h.is_valid(1e-9));
    }

    #[test]
    fn pose_new_rejects_reflection() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn look_at_centers_target() {
        let pose = Pose::look_at(Vector3::new(3.0, -1.0, -10.0), Vector3::new(0.5, 0.2, 0.0), -Vector3::y());
        assert!(pose.is_valid(1e-9));
        assert!((pose.center() - Vector3::new(3.0, -1.0, -10.0)).norm() < 1e-12);
        let k = k100();
        let p = project_xyz(&Vector3::new(0.5, 0.2, 0.0), &pose, &k).unwrap();
        assert!(close(p.u, 50.0, 1e-9) && close(p.v, 50.0, 1e-9));
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -3.0f64..3.0,
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_filter("non-zero axis", |(a, _, _)| a.iter().map(|v| v * v).sum::<f64>() > 1e-3)
            .prop_map(|(a, ang, t)| {
                Pose::from_axis_angle(Vector3::from(a), ang, Vector3::from(t))
            })
    }

    proptest! {
        #[test]
        fn unproject_project_roundtrip(pose in arb_pose(), u in 0.0f64..100.0, v in 0.0f64..100.0, d in 0.5f64..50.0) {
            let k = k100();
            let q = PixelPoint::new(u, v);
            let x = unproject(q, d, &pose, &k);
            let back = project_xyz(&x, &pose, &k).unwrap();
            prop_assert!(back.dist(&q) < 1e-9);
        }

        #[test]
        fn composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = compose_pose(&compose_pose(&a, &b), &c);
            let r = compose_pose(&a, &compose_pose(&b, &c));
            prop_assert!((l.rotation - r.rotation).norm() < 1e-9);
            prop_assert!((l.translation - r.translation).norm() < 1e-9);
            prop_assert!(l.is_valid(1e-9));
        }
    }
}
