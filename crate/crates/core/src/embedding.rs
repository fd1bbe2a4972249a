//! Clause encoders and the `CREB` embedding container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CREB" | u32 version=1 | u32 dim | u32 count
//! count x ( u32 id_len | id bytes (UTF-8) | dim x f32 )
//! ```
//!
//! The built-in encoder is a seeded feature hasher over unigrams and bigrams.
//! Vectors from pretrained encoders arrive through the same container.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::corpus::Contract;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CREB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    HashDeterministic,
    ExternalFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl EncoderSpec {
    pub fn hash(dim: usize, seed: u64) -> Self {
        EncoderSpec {
            kind: EncoderKind::HashDeterministic,
            dim,
            seed,
        }
    }
}

impl fmt::Display for EncoderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EncoderKind::HashDeterministic => {
                write!(f, "hash-deterministic(dim={}, seed={})", self.dim, self.seed)
            }
            EncoderKind::ExternalFile => write!(f, "external-file(dim={})", self.dim),
        }
    }
}

/// A d-dimensional clause vector with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Format("embedding has zero dimensions".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("embedding has non-finite component".into()));
        }
        Ok(Embedding(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

fn hash_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Feature-hashes `text` into an L2-normalized vector.
///
/// A text of n tokens yields 2n-1 signed features, so the unnormalized sum
/// can never cancel to the zero vector.
pub fn encode(spec: &EncoderSpec, text: &str) -> Result<Embedding> {
    if spec.kind != EncoderKind::HashDeterministic {
        return Err(Error::Config(
            "external-file embeddings are loaded, not computed".into(),
        ));
    }
    if spec.dim == 0 {
        return Err(Error::Config("encoder dim must be positive".into()));
    }
    let tokens = hash_tokens(text);
    if tokens.is_empty() {
        return Err(Error::UnencodableText);
    }

    let mut acc = vec![0f64; spec.dim];
    let mut add = |feature: &str| {
        let h = xxh3_64_with_seed(feature.as_bytes(), spec.seed);
        let bucket = (h % spec.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    };
    for t in &tokens {
        add(t);
    }
    for pair in tokens.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]));
    }

    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::UnencodableText);
    }
    Embedding::new(acc.iter().map(|v| (v / norm) as f32).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: IndexMap<String, Vec<f32>>,
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    provenance: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

impl EmbeddingStore {
    pub fn new(dim: usize, provenance: impl Into<String>) -> Self {
        EmbeddingStore {
            dim,
            entries: IndexMap::new(),
            provenance: provenance.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite component in {id}")));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::Format(format!("duplicate id {id}")));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn insert_f64(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        self.insert(id, vector.iter().map(|&v| v as f32).collect())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn require(&self, id: &str) -> Result<&[f32]> {
        self.get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Exact size of the encoded container in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .entries
                .keys()
                .map(|id| 4 + id.len() + 4 * self.dim)
                .sum::<usize>()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.entries.is_empty() {
            return Err(Error::Format("refusing to write an empty store".into()));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, vector) in &self.entries {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = cursor.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dim = cursor.u32()? as usize;
        if dim == 0 {
            return Err(Error::Format("dim is zero".into()));
        }
        let count = cursor.u32()? as usize;
        let mut store = EmbeddingStore::new(dim, "");
        for _ in 0..count {
            let id_len = cursor.u32()? as usize;
            let id = std::str::from_utf8(cursor.take(id_len)?)
                .map_err(|_| Error::Format("id is not UTF-8".into()))?
                .to_owned();
            let raw = cursor.take(4 * dim)?;
            let vector = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            store.insert(id, vector)?;
        }
        if cursor.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - cursor.pos
            )));
        }
        Ok(store)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let sidecar = sidecar_path(path);
        let body = serde_json::to_string_pretty(&Sidecar {
            provenance: self.provenance.clone(),
        })?;
        fs::write(&sidecar, body).map_err(|e| Error::io(&sidecar, e))
    }

    /// Reads a container; the provenance sidecar is optional.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut store = Self::from_bytes(&bytes)?;
        let sidecar = sidecar_path(path);
        if sidecar.exists() {
            let raw = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            let meta: Sidecar = serde_json::from_str(&raw)?;
            store.provenance = meta.provenance;
        }
        Ok(store)
    }

    pub fn read_with_dim(path: &Path, dim: usize) -> Result<Self> {
        let store = Self::read(path)?;
        if store.dim != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: store.dim,
            });
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Encodes every clause of every contract, keyed by clause id.
pub fn embed_corpus(spec: &EncoderSpec, contracts: &[Contract]) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(spec.dim, spec.to_string());
    for clause in contracts.iter().flat_map(|c| c.clauses.iter()) {
        let emb = encode(spec, &clause.text).map_err(|e| match e {
            Error::UnencodableText => Error::Format(format!(
                "clause {} is unencodable",
                clause.clause_id
            )),
            other => other,
        })?;
        store.insert(clause.clause_id.clone(), emb.into_inner())?;
    }
    Ok(store)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Clause;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> EncoderSpec {
        EncoderSpec::hash(64, 11)
    }

    #[test]
    fn encoding_is_deterministic_and_normalized() {
        let a = encode(&spec(), "governing law").unwrap();
        let b = encode(&spec(), "governing law").unwrap();
        assert_eq!(a, b);
        let c = encode(&spec(), "Governing   LAW").unwrap();
        assert_eq!(a, c);
        let norm: f64 = a.as_slice().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_is_unencodable() {
        assert!(matches!(encode(&spec(), "  ,;  "), Err(Error::UnencodableText)));
    }

    #[test]
    fn round_trip_three_entries() {
        let mut store = EmbeddingStore::new(8, "test");
        for (i, id) in ["a", "bb", "ccc"].iter().enumerate() {
            store
                .insert(*id, (0..8).map(|j| (i * 8 + j) as f32 * 0.25 - 3.0).collect())
                .unwrap();
        }
        let bytes = store.to_bytes().unwrap();
        let mut back = EmbeddingStore::from_bytes(&bytes).unwrap();
        back.provenance = store.provenance.clone();
        assert_eq!(back, store);
        let ids: Vec<_> = back.iter().map(|(k, _)| k).collect();
        assert_eq!(ids, ["a", "bb", "ccc"]);
    }

    #[test]
    fn file_size_matches_layout() {
        let mut store = EmbeddingStore::new(8, "");
        store.insert("x", vec![0.0; 8]).unwrap();
        store.insert("clause-17", vec![1.0; 8]).unwrap();
        // 16 + (4 + 1 + 32) + (4 + 9 + 32)
        assert_eq!(store.to_bytes().unwrap().len(), 98);
        assert_eq!(store.encoded_len(), 98);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_duplicates() {
        let mut store = EmbeddingStore::new(2, "");
        store.insert("a", vec![1.0, 2.0]).unwrap();
        let mut bytes = store.to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(EmbeddingStore::from_bytes(&bad), Err(Error::Format(_))));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(EmbeddingStore::from_bytes(truncated).is_err());

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 2;
        assert!(EmbeddingStore::from_bytes(&wrong_version).is_err());

        // duplicate the only record and bump count
        let record = bytes[HEADER_LEN..].to_vec();
        bytes.extend_from_slice(&record);
        bytes[12..16].copy_from_slice(&2u32.to_le_bytes());
        assert!(EmbeddingStore::from_bytes(&bytes).is_err());
    }

    #[test]
    fn embed_corpus_cardinality_and_seed_sensitivity() {
        let contracts: Vec<Contract> = (0..2)
            .map(|c| Contract {
                contract_id: format!("c{c}"),
                clauses: (0..3)
                    .map(|i| {
                        Clause::new(
                            format!("c{c}-{i}"),
                            format!("c{c}"),
                            "notices",
                            format!("notice number {i} for contract {c}"),
                        )
                    })
                    .collect(),
            })
            .collect();
        let a = embed_corpus(&spec(), &contracts).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, embed_corpus(&spec(), &contracts).unwrap());
        let other = embed_corpus(&EncoderSpec::hash(64, 12), &contracts).unwrap();
        assert!(a.iter().zip(other.iter()).any(|((_, x), (_, y))| x != y));
    }

    #[test]
    fn hash_encoder_similarity_sanity() {
        let words: Vec<String> = (0..500).map(|i| format!("w{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = EncoderSpec::hash(768, 3);
        let mut wins = 0;
        for _ in 0..1000 {
            let len = rng.random_range(8..40);
            let doc = |rng: &mut ChaCha8Rng| -> Vec<String> {
                (0..len).map(|_| words[rng.random_range(0..words.len())].clone()).collect()
            };
            let a = doc(&mut rng);
            let b = doc(&mut rng);
            let mut a2 = a.clone();
            let pos = rng.random_range(0..len);
            a2[pos] = words[rng.random_range(0..words.len())].clone();
            let ea = encode(&spec, &a.join(" ")).unwrap();
            let ea2 = encode(&spec, &a2.join(" ")).unwrap();
            let eb = encode(&spec, &b.join(" ")).unwrap();
            if cosine(ea.as_slice(), ea2.as_slice()) > cosine(ea.as_slice(), eb.as_slice()) {
                wins += 1;
            }
        }
        assert!(wins >= 950, "only {wins}/1000 trials ranked the edited copy closer");
    }

    proptest! {
        #[test]
        fn encode_is_pure(text in "[a-zA-Z ,.]{1,60}", seed in 0u64..1000) {
            let spec = EncoderSpec::hash(32, seed);
            let first = encode(&spec, &text);
            let second = encode(&spec, &text);
            match (first, second) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(a.as_slice(), b.as_slice());
                    let n: f64 = a.as_slice().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                    prop_assert!((n - 1.0).abs() < 1e-6);
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "nondeterministic outcome"),
            }
        }

        #[test]
        fn store_round_trip_is_bit_exact(values in proptest::collection::vec(-1e6f32..1e6, 12)) {
            let mut store = EmbeddingStore::new(4, "");
            for (i, chunk) in values.chunks(4).enumerate() {
                store.insert(format!("id{i}"), chunk.to_vec()).unwrap();
            }
            let back = EmbeddingStore::from_bytes(&store.to_bytes().unwrap()).unwrap();
            for ((_, a), (_, b)) in store.iter().zip(back.iter()) {
                let ab: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u32> = b.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }
}
