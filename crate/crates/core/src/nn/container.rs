//! Self-describing checkpoint container.
//!
//! Byte layout (all integers little-endian):
//!
//! | size      | field                                                   |
//! |-----------|---------------------------------------------------------|
//! | 8         | magic `DCPLCKPT`                                        |
//! | 4         | format version, `u32` (= 1)                             |
//! | 4         | byte-order mark, `u32` `0x01020304`                     |
//! | 4         | header length `H`, `u32`                                |
//! | H         | UTF-8 header, one `key = value` per line                 |
//! | 4         | section count `S`, `u32`                                |
//! | S times   | section: `u16` name length, UTF-8 name, `u8` dtype (1 = f64), `u8` rank `r`, `r` x `u64` dims, `prod(dims)` x `f64` values |
//! | 4         | CRC-32 (IEEE) of every preceding byte, `u32`             |

use std::path::Path;

use crate::error::{Error, Result};

use super::params::{ParamLayout, ParamStore};

pub const MAGIC: &[u8; 8] = b"DCPLCKPT";
pub const VERSION: u32 = 1;
pub const BYTE_ORDER_MARK: u32 = 0x0102_0304;
pub const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub header: Vec<(String, String)>,
    pub sections: Vec<Section>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_header(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        assert!(
            !key.contains('=') && !key.contains('\n') && !value.contains('\n'),
            "header entries must be single-line key = value pairs"
        );
        if let Some(slot) = self.header.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value;
        } else {
            self.header.push((key.to_string(), value));
        }
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Appends every tensor of `store` as a section named `prefix` + tensor name.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for spec in store.layout().specs() {
            self.sections.push(Section {
                name: format!("{prefix}{}", spec.name),
                shape: spec.shape.clone(),
                data: store.get(&spec.name).expect("own layout").to_vec(),
            });
        }
    }

    /// Rebuilds a store for `layout` from sections written by [`Container::push_store`].
    pub fn load_store(&self, prefix: &str, layout: ParamLayout) -> Result<ParamStore> {
        let mut data = Vec::with_capacity(layout.total());
        for spec in layout.specs() {
            let name = format!("{prefix}{}", spec.name);
            let s = self
                .section(&name)
                .ok_or_else(|| Error::contract(format!("missing parameter section {name}")))?;
            if s.shape != spec.shape {
                return Err(Error::contract(format!(
                    "section {name} has shape {:?}, architecture expects {:?}",
                    s.shape, spec.shape
                )));
            }
            data.extend_from_slice(&s.data);
        }
        let expected = self
            .sections
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .count();
        if expected != layout.specs().len() {
            return Err(Error::contract(format!(
                "{expected} sections under '{prefix}', architecture declares {}",
                layout.specs().len()
            )));
        }
        ParamStore::from_data(layout, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&BYTE_ORDER_MARK.to_le_bytes());
        let header: String = self
            .header
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.push(DTYPE_F64);
            out.push(s.shape.len() as u8);
            for d in &s.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 8 + 4 + 4 + 4 + 4 + 4 {
            return Err(corrupt("file truncated before the end of the preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored_crc = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
        let mut r = Reader {
            buf: body,
            pos: 8,
        };
        let version = r.u32().ok_or_else(|| corrupt("truncated version"))?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported format version {version}")));
        }
        let bom = r.u32().ok_or_else(|| corrupt("truncated byte-order mark"))?;
        if bom != BYTE_ORDER_MARK {
            return Err(corrupt("byte-order mark mismatch"));
        }
        if crc32fast::hash(body) != stored_crc {
            return Err(corrupt("checksum mismatch (truncated or modified file)"));
        }
        let hlen = r.u32().ok_or_else(|| corrupt("truncated header length"))? as usize;
        let htext = r.bytes(hlen).ok_or_else(|| corrupt("truncated header"))?;
        let htext = std::str::from_utf8(htext).map_err(|_| corrupt("header is not UTF-8"))?;
        let mut header = Vec::new();
        for line in htext.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| corrupt("malformed header line"))?;
            header.push((k.to_string(), v.to_string()));
        }
        let count = r.u32().ok_or_else(|| corrupt("truncated section count"))? as usize;
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = r.u16().ok_or_else(|| corrupt("truncated section name"))? as usize;
            let name = r.bytes(nlen).ok_or_else(|| corrupt("truncated section name"))?;
            let name = String::from_utf8(name.to_vec())
                .map_err(|_| corrupt("section name is not UTF-8"))?;
            let dtype = r.u8().ok_or_else(|| corrupt("truncated dtype"))?;
            if dtype != DTYPE_F64 {
                return Err(corrupt(&format!("unsupported dtype code {dtype}")));
            }
            let rank = r.u8().ok_or_else(|| corrupt("truncated rank"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64().ok_or_else(|| corrupt("truncated dims"))? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r
                .bytes(n.checked_mul(8).ok_or_else(|| corrupt("section too large"))?)
                .ok_or_else(|| corrupt("truncated section data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            sections.push(Section { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after the last section"));
        }
        Ok(Self { header, sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.bytes(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.bytes(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.bytes(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.bytes(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}
