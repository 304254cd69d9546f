//! Model container: world points, image tables and a descriptor blob.
//!
//! Layout after the framing header: the point table (`id u64`, `xyz 3×f64`),
//! the image table (`id u64`, pose as 9 rotation entries row-major then 3
//! translation entries, intrinsics, keypoint count and per-keypoint
//! geometry, link and context flag) and finally the blob of `f32` local
//! descriptors followed by each keypoint's context vector when present.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};

use super::binary::{read_header, write_header, Reader, Writer};
use crate::error::{Error, Result};
use crate::features::{Descriptor, Keypoint, CONTEXT_DIM, DESCRIPTOR_DIM};
use crate::geometry::{Intrinsics, PixelPoint, Pose, WorldPoint};
use crate::registration::{Model3D, ModelImage};

pub const MODEL_MAGIC: &[u8; 4] = b"EMRG";
pub const MODEL_VERSION: u32 = 1;

pub(crate) fn put_pose(w: &mut Writer, p: &Pose) {
    for r in 0..3 {
        for c in 0..3 {
            w.f64(p.rotation[(r, c)]);
        }
    }
    for i in 0..3 {
        w.f64(p.translation[i]);
    }
}

/// Poses are read back verbatim, without re-orthonormalization.
pub(crate) fn get_pose(r: &mut Reader) -> Result<Pose> {
    let mut m = [0.0; 12];
    for v in &mut m {
        *v = r.f64()?;
    }
    Ok(Pose { rotation: Matrix3::from_row_slice(&m[..9]), translation: Vector3::new(m[9], m[10], m[11]) })
}

pub(crate) fn put_intrinsics(w: &mut Writer, k: &Intrinsics) {
    for v in [k.fx, k.fy, k.cx, k.cy] {
        w.f64(v);
    }
    w.u32(k.width);
    w.u32(k.height);
}

pub(crate) fn get_intrinsics(r: &mut Reader) -> Result<Intrinsics> {
    let start = r.offset();
    let (fx, fy, cx, cy) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let (width, height) = (r.u32()?, r.u32()?);
    Intrinsics::new(fx, fy, cx, cy, width, height).map_err(|_| Error::CorruptTable { table: r.table, offset: start })
}

const KEYPOINT_RECORD: usize = 5 * 8 + 1;

pub(crate) fn put_keypoint_geometry(w: &mut Writer, k: &Keypoint) {
    for v in [k.pos.u, k.pos.v, k.scale, k.orientation, k.response] {
        w.f64(v);
    }
    w.u8(u8::from(k.context.is_some()));
}

pub(crate) fn get_keypoint_geometry(r: &mut Reader) -> Result<(Keypoint, bool)> {
    let (u, v, scale, orientation, response) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let has_ctx = r.flag()?;
    let mut kp = Keypoint::new(PixelPoint::new(u, v), scale, orientation, Descriptor([0.0; DESCRIPTOR_DIM]));
    kp.response = response;
    Ok((kp, has_ctx))
}

pub(crate) fn put_keypoint_blob(w: &mut Writer, k: &Keypoint) {
    k.descriptor.0.iter().for_each(|&v| w.f32(v));
    if let Some(ctx) = &k.context {
        ctx.iter().for_each(|&v| w.f32(v));
    }
}

pub(crate) fn get_keypoint_blob(r: &mut Reader, kp: &mut Keypoint, has_ctx: bool) -> Result<()> {
    for v in kp.descriptor.0.iter_mut() {
        *v = r.f32()?;
    }
    if has_ctx {
        let raw = r.take(CONTEXT_DIM * 4)?;
        let ctx: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        kp.context = Some(Arc::from(ctx));
    }
    Ok(())
}

pub fn encode_model(model: &Model3D) -> Vec<u8> {
    let mut w = Writer::default();
    let kps: usize = model.images().iter().map(|im| im.keypoints.len()).sum();
    write_header(
        &mut w,
        MODEL_MAGIC,
        MODEL_VERSION,
        &[
            ("points", model.points().len().to_string()),
            ("images", model.images().len().to_string()),
            ("keypoints", kps.to_string()),
            ("descriptor_dim", DESCRIPTOR_DIM.to_string()),
            ("context_dim", CONTEXT_DIM.to_string()),
        ],
    );
    for p in model.points() {
        w.u64(p.id);
        (0..3).for_each(|i| w.f64(p.xyz[i]));
    }
    for im in model.images() {
        w.u64(im.id);
        put_pose(&mut w, &im.pose);
        put_intrinsics(&mut w, &im.intrinsics);
        w.len_u32(im.keypoints.len());
        for (k, link) in im.keypoints.iter().zip(&im.links) {
            put_keypoint_geometry(&mut w, k);
            w.u8(u8::from(link.is_some()));
            w.u64(link.unwrap_or(0));
        }
    }
    for im in model.images() {
        im.keypoints.iter().for_each(|k| put_keypoint_blob(&mut w, k));
    }
    w.buf
}

pub fn decode_model(data: &[u8]) -> Result<Model3D> {
    let mut r = Reader::new(data);
    let h = read_header(&mut r, MODEL_MAGIC, MODEL_VERSION)?;
    let n_points = h.count("points", &r)?;
    let n_images = h.count("images", &r)?;
    if h.count("descriptor_dim", &r)? != DESCRIPTOR_DIM || h.count("context_dim", &r)? != CONTEXT_DIM {
        return Err(r.corrupt());
    }

    r.table = "points";
    if n_points.saturating_mul(32) > data.len() {
        return Err(r.corrupt());
    }
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let id = r.u64()?;
        let xyz = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
        points.push(WorldPoint { id, xyz });
    }

    r.table = "images";
    let mut images = Vec::with_capacity(n_images.min(data.len()));
    let mut flags = Vec::with_capacity(n_images.min(data.len()));
    for _ in 0..n_images {
        let id = r.u64()?;
        let pose = get_pose(&mut r)?;
        let intrinsics = get_intrinsics(&mut r)?;
        let n = r.len(KEYPOINT_RECORD + 9)?;
        let mut keypoints = Vec::with_capacity(n);
        let mut links = Vec::with_capacity(n);
        let mut ctx = Vec::with_capacity(n);
        for _ in 0..n {
            let (kp, has_ctx) = get_keypoint_geometry(&mut r)?;
            let linked = r.flag()?;
            let target = r.u64()?;
            keypoints.push(kp);
            links.push(linked.then_some(target));
            ctx.push(has_ctx);
        }
        images.push(ModelImage { id, pose, intrinsics, keypoints, links });
        flags.push(ctx);
    }

    r.table = "descriptors";
    for (im, ctx) in images.iter_mut().zip(&flags) {
        for (kp, &has_ctx) in im.keypoints.iter_mut().zip(ctx) {
            get_keypoint_blob(&mut r, kp, has_ctx)?;
        }
    }
    if !r.is_done() {
        return Err(r.corrupt());
    }
    let h_kps = h.count("keypoints", &r)?;
    if images.iter().map(|im| im.keypoints.len()).sum::<usize>() != h_kps {
        return Err(Error::CorruptTable { table: "header", offset: 0 });
    }
    Model3D::new(points, images)
}

pub fn save_model(model: &Model3D, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model3D> {
    decode_model(&std::fs::read(path)?)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_keypoint(rng: &mut ChaCha8Rng, with_ctx: bool) -> Keypoint {
        let mut d = [0.0f32; DESCRIPTOR_DIM];
        d.iter_mut().for_each(|v| *v = rng.random());
        let mut kp = Keypoint::new(
            PixelPoint::new(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0)),
            rng.random_range(1.0..8.0),
            rng.random_range(0.0..6.28),
            Descriptor(d),
        );
        kp.response = rng.random();
        if with_ctx {
            let ctx: Vec<f32> = (0..CONTEXT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            kp.context = Some(Arc::from(ctx));
        }
        kp
    }

    pub(crate) fn random_model(seed: u64) -> Model3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<WorldPoint> = (0..20)
            .map(|i| WorldPoint { id: 100 + i, xyz: Vector3::new(rng.random(), rng.random(), rng.random::<f64>() + 3.0) })
            .collect();
        let k = Intrinsics::new(280.0, 281.5, 160.0, 120.0, 320, 240).unwrap();
        let images = (0..3)
            .map(|i| {
                let n = 4 + i as usize;
                let keypoints: Vec<Keypoint> = (0..n).map(|j| random_keypoint(&mut rng, j % 2 == 0)).collect();
                let links = (0..n).map(|j| (j % 3 != 0).then_some(100 + j as u64)).collect();
                let pose = Pose::from_axis_angle(Vector3::new(0.1, 1.0, 0.2).normalize(), 0.3 * i as f64, Vector3::new(0.5, -0.2, 0.1));
                ModelImage { id: 7 * i, pose, intrinsics: k, keypoints, links }
            })
            .collect();
        Model3D::new(points, images).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = random_model(3);
        let bytes = encode_model(&m);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn round_trip_through_a_file() {
        let m = random_model(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emrg");
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_model(&random_model(1));
        bytes[0] = b'X';
        assert!(matches!(decode_model(&bytes), Err(Error::BadMagic(_))));
        assert!(matches!(decode_model(&[]), Err(Error::BadMagic(_))));
    }

    #[test]
    fn future_version() {
        let mut bytes = encode_model(&random_model(1));
        bytes[4] = 9;
        assert!(matches!(decode_model(&bytes), Err(Error::VersionUnsupported(9))));
    }

    #[test]
    fn truncated_blob_is_corrupt() {
        let bytes = encode_model(&random_model(2));
        let cut = &bytes[..bytes.len() - 10];
        match decode_model(cut) {
            Err(Error::CorruptTable { table: "descriptors", offset }) => assert!(offset as usize <= cut.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_corrupt() {
        let mut bytes = encode_model(&random_model(2));
        bytes.push(0);
        assert!(matches!(decode_model(&bytes), Err(Error::CorruptTable { .. })));
    }

    #[test]
    fn every_truncation_errors_cleanly() {
        let bytes = encode_model(&random_model(5));
        for cut in (0..bytes.len()).step_by(97) {
            assert!(decode_model(&bytes[..cut]).is_err());
        }
    }
}
