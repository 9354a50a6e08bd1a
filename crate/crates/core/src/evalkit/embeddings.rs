//! Embedding storage and its two on-disk encodings.
//!
//! Binary format `EMB1`: magic `EMB1`, little-endian `u32` dimension,
//! `u64` record count, then per record a `u16`-length-prefixed UTF-8
//! instance id, a `u16`-length-prefixed UTF-8 class id, and `dim` × `f32`
//! little-endian components. The CSV alternative is
//! `instance_id,class_id,v0,v1,…`.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::EvalError;

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";

/// Immutable map from instance id to (class id, embedding vector).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    records: HashMap<String, (String, Vec<f32>)>,
}

/// Load a store from raw file bytes, sniffing the encoding: `EMB1` magic
/// selects the binary format, anything else is parsed as CSV.
pub fn load_embeddings(bytes: &[u8]) -> Result<EmbeddingStore, EvalError> {
    if bytes.len() >= 4 && &bytes[..4] == EMB1_MAGIC {
        EmbeddingStore::read_emb1(bytes)
    } else {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| EvalError::Parse(format!("not EMB1 and not UTF-8 CSV: {e}")))?;
        EmbeddingStore::from_csv(text)
    }
}

impl EmbeddingStore {
    pub fn from_records<I>(records: I) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = (String, String, Vec<f32>)>,
    {
        let mut map: HashMap<String, (String, Vec<f32>)> = HashMap::new();
        let mut dim = None;
        for (instance, class, vector) in records {
            let d = *dim.get_or_insert(vector.len());
            if vector.len() != d {
                return Err(EvalError::DimensionMismatch {
                    id: instance,
                    expected: d,
                    got: vector.len(),
                });
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(EvalError::NonFiniteVector(instance));
            }
            if map.insert(instance.clone(), (class, vector)).is_some() {
                return Err(EvalError::DuplicateInstance(instance));
            }
        }
        let dim = dim.ok_or_else(|| EvalError::Parse("no embedding records".into()))?;
        if dim == 0 {
            return Err(EvalError::Parse("embedding dimension is zero".into()));
        }
        Ok(Self { dim, records: map })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vector(&self, instance: &str) -> Option<(&str, &[f32])> {
        self.records
            .get(instance)
            .map(|(class, v)| (class.as_str(), v.as_slice()))
    }

    pub fn contains(&self, instance: &str) -> bool {
        self.records.contains_key(instance)
    }

    pub fn read_emb1(bytes: &[u8]) -> Result<Self, EvalError> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != EMB1_MAGIC {
            return Err(EvalError::Parse("bad magic, expected EMB1".into()));
        }
        let mut u32buf = [0u8; 4];
        read_exact(&mut r, &mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let mut u64buf = [0u8; 8];
        read_exact(&mut r, &mut u64buf)?;
        let count = u64::from_le_bytes(u64buf) as usize;
        let mut records = Vec::with_capacity(count);
        let mut f32buf = [0u8; 4];
        let mut u16buf = [0u8; 2];
        for _ in 0..count {
            read_exact(&mut r, &mut u16buf)?;
            let id = read_string(&mut r, u16::from_le_bytes(u16buf) as usize)?;
            read_exact(&mut r, &mut u16buf)?;
            let class = read_string(&mut r, u16::from_le_bytes(u16buf) as usize)?;
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                read_exact(&mut r, &mut f32buf)?;
                vector.push(f32::from_le_bytes(f32buf));
            }
            records.push((id, class, vector));
        }
        if !r.is_empty() {
            return Err(EvalError::Parse(format!(
                "{} trailing bytes after the last record",
                r.len()
            )));
        }
        Self::from_records(records)
    }

    /// Serialize as EMB1, records sorted by instance id so the encoding is
    /// deterministic.
    pub fn write_emb1(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(EMB1_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        let mut ids: Vec<&String> = self.records.keys().collect();
        ids.sort();
        for id in ids {
            let (class, vector) = &self.records[id];
            w.write_all(&(id.len() as u16).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            w.write_all(&(class.len() as u16).to_le_bytes())?;
            w.write_all(class.as_bytes())?;
            for v in vector {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_emb1(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_emb1(&mut out).expect("in-memory write");
        out
    }

    pub fn from_csv(source: &str) -> Result<Self, EvalError> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(source.as_bytes());
        let mut records = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| EvalError::Parse(e.to_string()))?;
            if rec.len() < 3 {
                return Err(EvalError::Parse(format!(
                    "row needs instance_id,class_id and at least one component, got {} cells",
                    rec.len()
                )));
            }
            let id = rec[0].to_string();
            let class = rec[1].to_string();
            let mut vector = Vec::with_capacity(rec.len() - 2);
            for cell in rec.iter().skip(2) {
                let v: f32 = cell
                    .parse()
                    .map_err(|e| EvalError::Parse(format!("instance `{id}`: {e}")))?;
                vector.push(v);
            }
            records.push((id, class, vector));
        }
        Self::from_records(records)
    }

    /// Deterministic CSV: records sorted by instance id, components printed
    /// with round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut ids: Vec<&String> = self.records.keys().collect();
        ids.sort();
        for id in ids {
            let (class, vector) = &self.records[id];
            let mut row = vec![id.clone(), class.clone()];
            row.extend(vector.iter().map(|v| format!("{v}")));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), EvalError> {
    Read::read_exact(r, buf).map_err(|_| EvalError::Parse("truncated EMB1 data".into()))
}

fn read_string(r: &mut &[u8], len: usize) -> Result<String, EvalError> {
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|e| EvalError::Parse(format!("invalid UTF-8 id: {e}")))
}
