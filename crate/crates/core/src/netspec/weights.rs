//! `EMWT` weights container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EMWT" | u32 version | u32 entry_count
//! entry_count × { u32 name_len | name bytes | u64 byte_offset | u64 element_count }
//! payload: IEEE-754 binary32 values
//! ```
//!
//! `byte_offset` is measured from the first byte of the container.

use std::collections::BTreeMap;

use super::NetSpecError;

pub const MAGIC: &[u8; 4] = b"EMWT";
pub const VERSION: u32 = 1;

/// Named f32 tensors, row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<String, Vec<f32>>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f32>) {
        self.entries.insert(name.into(), values);
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let table: usize = self.entries.keys().map(|k| 4 + k.len() + 16).sum();
        let mut offset = (12 + table) as u64;
        let payload: usize = self.entries.values().map(|v| v.len() * 4).sum();
        let mut out = Vec::with_capacity(12 + table + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, values) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            offset += values.len() as u64 * 4;
        }
        for values in self.entries.values() {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetSpecError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(bad("bad magic, expected \"EMWT\""));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported weights version {}", version)));
        }
        let count = cur.u32()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| bad("entry name is not UTF-8"))?
                .to_string();
            let offset = cur.u64()?;
            let elems = cur.u64()?;
            let start = usize::try_from(offset).map_err(|_| bad("offset overflow"))?;
            let len = usize::try_from(elems)
                .ok()
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| bad("element count overflow"))?;
            let end = start
                .checked_add(len)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| bad(format!("entry '{}' runs past end of container", name)))?;
            let values = bytes[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if entries.insert(name.clone(), values).is_some() {
                return Err(bad(format!("duplicate entry '{}'", name)));
            }
        }
        Ok(WeightStore { entries })
    }
}

fn bad(msg: impl Into<String>) -> NetSpecError {
    NetSpecError::Schema(format!("weights container: {}", msg.into()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetSpecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetSpecError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, NetSpecError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut s = WeightStore::new();
        s.insert("a", vec![1.0, -2.5]);
        let b = s.to_bytes();
        assert_eq!(&b[..4], b"EMWT");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(&b[16..17], b"a");
        let off = u64::from_le_bytes(b[17..25].try_into().unwrap());
        assert_eq!(off, 33);
        assert_eq!(u64::from_le_bytes(b[25..33].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[33..37].try_into().unwrap()), 1.0);
        assert_eq!(b.len(), 41);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let mut s = WeightStore::new();
        s.insert("w", vec![0.5; 10]);
        let b = s.to_bytes();
        assert!(WeightStore::from_bytes(&b[..b.len() - 1]).is_err());
        let mut m = b.clone();
        m[0] = b'X';
        assert!(WeightStore::from_bytes(&m).is_err());
        assert!(WeightStore::from_bytes(&[]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in proptest::collection::btree_map("[a-z.]{1,8}", proptest::collection::vec(any::<u32>(), 0..40), 0..5)
        ) {
            let mut s = WeightStore::new();
            for (k, v) in &entries {
                s.insert(k.clone(), v.iter().map(|&b| f32::from_bits(b)).collect());
            }
            let back = WeightStore::from_bytes(&s.to_bytes()).unwrap();
            for (k, v) in &entries {
                let got: Vec<u32> = back.get(k).unwrap().iter().map(|f| f.to_bits()).collect();
                prop_assert_eq!(&got, v);
            }
            prop_assert_eq!(back.len(), entries.len());
        }
    }
}
