//! Query sequence container. Frames carry 8-bit rasters, so images are
//! stored at `u8` precision; quantized images round-trip exactly.

use std::path::Path;

use super::binary::{read_header, write_header, Reader, Writer};
use super::model::{
    get_intrinsics, get_keypoint_blob, get_keypoint_geometry, get_pose, put_intrinsics, put_keypoint_blob,
    put_keypoint_geometry, put_pose,
};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::registration::{QuerySequence, SequenceFrame};

pub const SEQUENCE_MAGIC: &[u8; 4] = b"EMSQ";
pub const SEQUENCE_VERSION: u32 = 1;

fn check_order(seq: &QuerySequence) -> Result<()> {
    if seq.frames.windows(2).all(|w| w[0].timestamp < w[1].timestamp) {
        Ok(())
    } else {
        Err(Error::DegenerateInput("frame timestamps must increase strictly"))
    }
}

pub fn encode_sequence(seq: &QuerySequence) -> Result<Vec<u8>> {
    check_order(seq)?;
    let mut w = Writer::default();
    write_header(&mut w, SEQUENCE_MAGIC, SEQUENCE_VERSION, &[("frames", seq.frames.len().to_string())]);
    for f in &seq.frames {
        w.f64(f.timestamp);
        put_intrinsics(&mut w, &f.intrinsics);
        w.len_u32(f.image.width());
        w.len_u32(f.image.height());
        w.bytes(&f.image.to_u8());
        w.u8(u8::from(f.gt_pose.is_some()));
        if let Some(p) = &f.gt_pose {
            put_pose(&mut w, p);
        }
        w.u8(u8::from(f.keypoints.is_some()));
        if let Some(kps) = &f.keypoints {
            w.len_u32(kps.len());
            for k in kps {
                put_keypoint_geometry(&mut w, k);
                put_keypoint_blob(&mut w, k);
            }
        }
    }
    Ok(w.buf)
}

pub fn decode_sequence(data: &[u8]) -> Result<QuerySequence> {
    let mut r = Reader::new(data);
    let h = read_header(&mut r, SEQUENCE_MAGIC, SEQUENCE_VERSION)?;
    let n = h.count("frames", &r)?;
    r.table = "frames";
    let mut frames: Vec<SequenceFrame> = Vec::with_capacity(n.min(data.len()));
    for _ in 0..n {
        let start = r.offset();
        let timestamp = r.f64()?;
        if frames.last().is_some_and(|p| !(p.timestamp < timestamp)) {
            return Err(Error::CorruptTable { table: "frames", offset: start });
        }
        let intrinsics = get_intrinsics(&mut r)?;
        let (width, height) = (r.u32()? as usize, r.u32()? as usize);
        let raster_at = r.offset();
        let raster = r.take(width.checked_mul(height).ok_or_else(|| r.corrupt())?)?;
        let image = GrayImage::from_u8(width, height, raster)
            .map_err(|_| Error::CorruptTable { table: "frames", offset: raster_at })?;
        let gt_pose = if r.flag()? { Some(get_pose(&mut r)?) } else { None };
        let keypoints = if r.flag()? {
            let count = r.len(41)?;
            let mut kps = Vec::with_capacity(count);
            for _ in 0..count {
                let (mut kp, has_ctx) = get_keypoint_geometry(&mut r)?;
                get_keypoint_blob(&mut r, &mut kp, has_ctx)?;
                kps.push(kp);
            }
            Some(kps)
        } else {
            None
        };
        frames.push(SequenceFrame { timestamp, intrinsics, image, gt_pose, keypoints });
    }
    if !r.is_done() {
        return Err(r.corrupt());
    }
    Ok(QuerySequence { frames })
}

pub fn save_sequence(seq: &QuerySequence, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_sequence(seq)?)?;
    Ok(())
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<QuerySequence> {
    decode_sequence(&std::fs::read(path)?)
}
