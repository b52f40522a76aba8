//! Checkpoint container and key=value configuration text.
//!
//! Checkpoint layout, all little-endian:
//!
//! ```text
//! "RAPC" | u32 version | u32 blob_len | blob (key=value lines)
//! u32 tensor_count
//! per tensor: u32 name_len | name (utf-8) | u8 dtype (0 = f32) | u32 rank | u64 dims[rank] | u64 offset
//! u64 payload_len | payload (row-major f32 buffers, in table order)
//! u32 crc32 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::codec::{write_bytes, Reader};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"RAPC";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: KvConfig,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_versioned(CHECKPOINT_VERSION)
    }

    fn to_bytes_versioned(&self, version: u32) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&version.to_le_bytes());
        let blob = self.config.to_text();
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.len() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for (_, t) in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        const WHAT: &str = "checkpoint";
        if buf.len() < 12 {
            return Err(Error::format(WHAT, "header", format!("only {} bytes", buf.len())));
        }
        let mut r = Reader::new(buf, WHAT);
        r.magic(MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let (body, tail) = buf.split_at(buf.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let blob_len = r.u32("config length")? as usize;
        let blob = r.take(blob_len, "config blob")?;
        let text = std::str::from_utf8(blob).map_err(|_| Error::format(WHAT, "config blob", "not utf-8"))?;
        let config = KvConfig::parse(text)?;
        let count = r.u32("tensor count")? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(n, "tensor name")?)
                .map_err(|_| Error::format(WHAT, "tensor name", "not utf-8"))?
                .to_string();
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(Error::format(WHAT, "dtype", format!("{name}: dtype {dtype} is not f32")));
            }
            let rank = r.u32("rank")? as usize;
            if rank > 8 {
                return Err(Error::format(WHAT, "rank", format!("{name}: rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64("dims")? as usize);
            }
            let offset = r.u64("offset")?;
            table.push((name, dims, offset));
        }
        let payload_len = r.u64("payload length")?;
        if r.pos as u64 + payload_len + 4 != buf.len() as u64 {
            return Err(Error::format(
                WHAT,
                "payload length",
                format!("declared {payload_len} bytes, file holds {}", buf.len().saturating_sub(r.pos + 4)),
            ));
        }
        let computed = crc32fast::hash(body);
        if computed != stored {
            return Err(Error::format(WHAT, "crc", format!("stored {stored:08x}, computed {computed:08x}")));
        }
        let payload = &buf[r.pos..r.pos + payload_len as usize];
        let mut expect = 0u64;
        let mut tensors = Vec::with_capacity(table.len());
        for (name, dims, offset) in table {
            if offset != expect {
                return Err(Error::format(WHAT, "offset", format!("{name}: offset {offset}, expected {expect}")));
            }
            let n: usize = dims.iter().product();
            let end = offset + 4 * n as u64;
            if end > payload_len {
                return Err(Error::format(WHAT, "offset", format!("{name} runs past the payload")));
            }
            let bytes = &payload[offset as usize..end as usize];
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor::from_vec(&dims, data)));
            expect = end;
        }
        if expect != payload_len {
            return Err(Error::format(WHAT, "payload length", "unreferenced trailing payload"));
        }
        Ok(Self { config, tensors })
    }
}

/// Writes and fsyncs the checkpoint.
pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_bytes(path, &ckpt.to_bytes())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&buf)
}

/// `key = value` lines; `#` starts a comment. Keys are unique.
#[derive(Clone, Debug, Default)]
pub struct KvConfig {
    /// Value and the line it came from (0 when set programmatically).
    entries: BTreeMap<String, (usize, String)>,
}

impl PartialEq for KvConfig {
    fn eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((k1, (_, v1)), (k2, (_, v2)))| k1 == k2 && v1 == v2)
    }
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::ConfigParse {
                    line: line_no,
                    msg: format!("bad key `{k}`"),
                });
            }
            if let Some((first, _)) = entries.insert(k.to_string(), (line_no, v.to_string())) {
                return Err(Error::ConfigParse {
                    line: line_no,
                    msg: format!("duplicate key `{k}` (first set on line {first})"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let line = self.entries.get(key).map_or(0, |e| e.0);
        self.entries.insert(key.to_string(), (line, value.to_string()));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Errors on the first key outside `known`, naming its line.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(Error::ConfigParse {
                    line: *line,
                    msg: format!("unknown key `{k}`"),
                });
            }
        }
        Ok(())
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::ConfigParse {
                line: *line,
                msg: format!("`{key}`: cannot parse `{v}`"),
            }),
        }
    }

    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, (_, v))| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut config = KvConfig::default();
        config.set("steps", 10);
        config.set("lr", 0.001);
        Checkpoint {
            config,
            tensors: vec![
                ("a".into(), Tensor::from_vec(&[2, 3], vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, -0.0])),
                ("b.c".into(), Tensor::from_vec(&[1], vec![7.0])),
                ("empty".into(), Tensor::zeros(&[0, 4])),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.config, c.config);
        for ((n1, t1), (n2, t2)) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            assert!(t1.bit_eq(t2));
        }
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 11, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 10] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Format { field: "crc", .. })));
        let newer = sample().to_bytes_versioned(2);
        let err = Checkpoint::from_bytes(&newer).unwrap_err();
        assert!(err.to_string().contains("unsupported version 2"), "{err}");
    }

    #[test]
    fn config_errors_name_lines_and_keys() {
        let c = KvConfig::parse("# header\nsteps = 5 # trailing\n\nseed=3\n").unwrap();
        assert_eq!(c.require::<u64>("steps").unwrap(), 5);
        assert_eq!(c.get_or("lr", 0.5).unwrap(), 0.5);
        assert!(matches!(c.require::<u64>("batch"), Err(Error::MissingKey(k)) if k == "batch"));
        assert!(matches!(KvConfig::parse("a = 1\nnonsense\n"), Err(Error::ConfigParse { line: 2, .. })));
        assert!(matches!(KvConfig::parse("a = 1\na = 2\n"), Err(Error::ConfigParse { line: 2, .. })));
        let bad = KvConfig::parse("steps = x\n").unwrap();
        assert!(matches!(bad.require::<u64>("steps"), Err(Error::ConfigParse { line: 1, .. })));
        assert!(matches!(c.check_known(&["steps"]), Err(Error::ConfigParse { line: 4, .. })));
        assert_eq!(KvConfig::parse(&c.to_text()).unwrap().raw("seed"), Some("3"));
    }
}
