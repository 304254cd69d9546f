//! Retrieval index container: vocabulary centers, idf weights and the
//! per-image tf-idf vectors.

use std::path::Path;

use super::binary::{read_header, write_header, Reader, Writer};
use crate::error::{Error, Result};
use crate::features::DESCRIPTOR_DIM;
use crate::registration::ImageIndex;
use crate::retrieval::{InvertedIndex, Vocabulary};

pub const INDEX_MAGIC: &[u8; 4] = b"EMIX";
pub const INDEX_VERSION: u32 = 1;

pub fn encode_index(index: &ImageIndex) -> Vec<u8> {
    let mut w = Writer::default();
    let k = index.vocab.k();
    write_header(
        &mut w,
        INDEX_MAGIC,
        INDEX_VERSION,
        &[("words", k.to_string()), ("images", index.index.len().to_string()), ("descriptor_dim", DESCRIPTOR_DIM.to_string())],
    );
    for c in &index.vocab.centers {
        c.iter().for_each(|&v| w.f32(v));
    }
    index.index.idf.iter().for_each(|&v| w.f64(v));
    for (id, vec) in index.index.ids.iter().zip(&index.index.vectors) {
        w.u64(*id);
        vec.iter().for_each(|&v| w.f64(v));
    }
    w.buf
}

pub fn decode_index(data: &[u8]) -> Result<ImageIndex> {
    let mut r = Reader::new(data);
    let h = read_header(&mut r, INDEX_MAGIC, INDEX_VERSION)?;
    let k = h.count("words", &r)?;
    let n = h.count("images", &r)?;
    if h.count("descriptor_dim", &r)? != DESCRIPTOR_DIM {
        return Err(r.corrupt());
    }
    let need = k
        .checked_mul(DESCRIPTOR_DIM * 4 + 8)
        .and_then(|v| v.checked_add(n.checked_mul(8 + 8 * k)?))
        .ok_or(Error::CorruptTable { table: "header", offset: 0 })?;
    if need > data.len() {
        return Err(Error::CorruptTable { table: "header", offset: 0 });
    }

    r.table = "vocabulary";
    let mut centers = Vec::with_capacity(k);
    for _ in 0..k {
        let mut c = [0.0f32; DESCRIPTOR_DIM];
        for v in c.iter_mut() {
            *v = r.f32()?;
        }
        centers.push(c);
    }
    r.table = "idf";
    let idf = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.table = "vectors";
    let mut ids = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(r.u64()?);
        vectors.push((0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    }
    if !r.is_done() {
        return Err(r.corrupt());
    }
    Ok(ImageIndex { vocab: Vocabulary { centers }, index: InvertedIndex { idf, ids, vectors } })
}

pub fn save_index(index: &ImageIndex, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_index(index))?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<ImageIndex> {
    decode_index(&std::fs::read(path)?)
}
