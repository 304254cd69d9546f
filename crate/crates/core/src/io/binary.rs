//! Little-endian primitives with offset tracking for error reports.

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn len_u32(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("table longer than u32::MAX"));
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    /// Table currently being read, for error messages.
    pub table: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0, table: "header" }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn corrupt(&self) -> Error {
        Error::CorruptTable { table: self.table, offset: self.offset() }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| self.corrupt())?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice of length N"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    pub fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    pub fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => {
                self.pos -= 1;
                Err(self.corrupt())
            }
        }
    }

    /// A `u32` length, checked against the bytes left assuming each entry
    /// takes at least `min_entry` bytes.
    pub fn len(&mut self, min_entry: usize) -> Result<usize> {
        let start = self.pos;
        let n = self.u32()? as usize;
        if n.saturating_mul(min_entry) > self.data.len() - self.pos {
            self.pos = start;
            return Err(self.corrupt());
        }
        Ok(n)
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.data.len()
    }
}

/// Container framing: magic, version, then a `key=value` text header.
pub(crate) fn write_header(w: &mut Writer, magic: &[u8; 4], version: u32, fields: &[(&str, String)]) {
    w.bytes(magic);
    w.u32(version);
    let text: String = fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    w.len_u32(text.len());
    w.bytes(text.as_bytes());
}

pub(crate) struct Header {
    fields: Vec<(String, String)>,
}

impl Header {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn count(&self, key: &str, r: &Reader) -> Result<usize> {
        self.get(key).and_then(|v| v.parse().ok()).ok_or_else(|| r.corrupt())
    }
}

pub(crate) fn read_header(r: &mut Reader, magic: &[u8; 4], version: u32) -> Result<Header> {
    let got: [u8; 4] = r.take(4).map_err(|_| Error::BadMagic([0; 4]))?.try_into().expect("4 bytes");
    if &got != magic {
        return Err(Error::BadMagic(got));
    }
    let v = r.u32()?;
    if v != version {
        return Err(Error::VersionUnsupported(v));
    }
    let n = r.len(1)?;
    let start = r.offset();
    let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::CorruptTable { table: "header", offset: start })?;
    let mut fields = Vec::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or(Error::CorruptTable { table: "header", offset: start })?;
        fields.push((k.to_string(), v.to_string()));
    }
    Ok(Header { fields })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_round_trip() {
        let mut w = Writer::default();
        w.u8(7);
        w.u32(0xdead_beef);
        w.u64(u64::MAX - 3);
        w.f32(-1.5e-7);
        w.f64(f64::MIN_POSITIVE);
        let mut r = Reader::new(&w.buf);
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u32().unwrap(), 0xdead_beef);
        assert_eq!(r.u64().unwrap(), u64::MAX - 3);
        assert_eq!(r.f32().unwrap().to_bits(), (-1.5e-7f32).to_bits());
        assert_eq!(r.f64().unwrap().to_bits(), f64::MIN_POSITIVE.to_bits());
        assert!(r.is_done());
    }

    #[test]
    fn little_endian_layout() {
        let mut w = Writer::default();
        w.u32(1);
        assert_eq!(w.buf, [1, 0, 0, 0]);
    }

    #[test]
    fn short_read_reports_offset() {
        let mut r = Reader::new(&[1, 2, 3]);
        r.table = "points";
        r.u8().unwrap();
        match r.u32() {
            Err(Error::CorruptTable { table: "points", offset: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_checks_magic_and_version() {
        let mut w = Writer::default();
        write_header(&mut w, b"TEST", 3, &[("n", "4".into())]);
        let h = read_header(&mut Reader::new(&w.buf), b"TEST", 3).unwrap();
        assert_eq!(h.get("n"), Some("4"));
        assert!(matches!(read_header(&mut Reader::new(&w.buf), b"NOPE", 3), Err(Error::BadMagic(m)) if &m == b"TEST"));
        assert!(matches!(read_header(&mut Reader::new(&w.buf), b"TEST", 2), Err(Error::VersionUnsupported(3))));
    }
}
