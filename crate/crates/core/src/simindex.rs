//! Hierarchical navigable small-world graph over contract representations.
//!
//! Distances are squared L2 and are reported as such. Levels are drawn from a
//! seeded generator so rebuilding with the same seed and insertion order
//! yields the same graph. Searches can exclude one id (the query contract).

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_K: usize = 2;
pub const DEFAULT_K: usize = 6;
const SNAPSHOT_MAGIC: &[u8; 4] = b"CRHN";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    /// Squared L2 distance.
    pub distance: f32,
}

/// Anything that can answer k-NN queries with an optional excluded id.
pub trait NeighborSearch {
    fn search(&self, query: &[f32], k: usize, exclude: Option<&str>) -> Result<Vec<Neighbor>>;
}

pub fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Copy, PartialEq)]
struct Scored {
    dist: f32,
    node: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnIndex {
    dim: usize,
    params: HnswParams,
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
    vectors: Vec<f32>,
    // links[node][layer] -> neighbor nodes
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
}

fn check_params(params: &HnswParams) -> Result<()> {
    if params.m < 2 {
        return Err(Error::Config("HNSW M must be at least 2".into()));
    }
    if params.ef_construction == 0 || params.ef_search == 0 {
        return Err(Error::Config("ef parameters must be positive".into()));
    }
    Ok(())
}

impl AnnIndex {
    /// Inserts entries in the given order.
    pub fn build(entries: &[(String, Vec<f32>)], params: HnswParams) -> Result<Self> {
        check_params(&params)?;
        let first = entries.first().ok_or(Error::EmptyIndex)?;
        let dim = first.1.len();
        if dim == 0 {
            return Err(Error::Config("index vectors have zero dimensions".into()));
        }
        let mut index = AnnIndex {
            dim,
            params,
            ids: Vec::with_capacity(entries.len()),
            lookup: HashMap::with_capacity(entries.len()),
            vectors: Vec::with_capacity(entries.len() * dim),
            links: Vec::with_capacity(entries.len()),
            entry: 0,
            max_level: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let level_mult = 1.0 / (params.m as f64).ln();
        for (id, vector) in entries {
            if vector.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: vector.len(),
                });
            }
            if index.lookup.contains_key(id) {
                return Err(Error::Config(format!("duplicate index id {id}")));
            }
            let u: f64 = 1.0 - rng.random::<f64>();
            let level = (-u.ln() * level_mult).floor() as usize;
            index.insert(id.clone(), vector, level);
        }
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lookup.contains_key(id)
    }

    fn vector(&self, node: u32) -> &[f32] {
        let start = node as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, id: String, vector: &[f32], level: usize) {
        let node = self.ids.len() as u32;
        self.lookup.insert(id.clone(), node);
        self.ids.push(id);
        self.vectors.extend_from_slice(vector);
        self.links.push(vec![Vec::new(); level + 1]);
        if node == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }

        let query = vector.to_vec();
        let mut ep = self.entry;
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.greedy_closest(&query, ep, layer);
        }
        let mut entry_points = vec![ep];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&query, &entry_points, self.params.ef_construction, layer);
            let selected = self.select_neighbors(&found, self.params.m);
            self.links[node as usize][layer] = selected.iter().map(|s| s.node).collect();
            for s in &selected {
                self.connect(s.node, node, layer);
            }
            entry_points = found.iter().map(|s| s.node).collect();
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = node;
        }
    }

    fn connect(&mut self, from: u32, to: u32, layer: usize) {
        let cap = self.max_links(layer);
        let links = &mut self.links[from as usize][layer];
        links.push(to);
        if links.len() <= cap {
            return;
        }
        let base = self.vector(from).to_vec();
        let mut candidates: Vec<Scored> = self.links[from as usize][layer]
            .iter()
            .map(|&n| Scored {
                dist: squared_l2(&base, self.vector(n)),
                node: n,
            })
            .collect();
        candidates.sort();
        let kept = self.select_neighbors(&candidates, cap);
        self.links[from as usize][layer] = kept.iter().map(|s| s.node).collect();
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every neighbor already kept. `candidates` must be sorted.
    fn select_neighbors(&self, candidates: &[Scored], m: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        for c in candidates {
            if kept.len() >= m {
                break;
            }
            let cv = self.vector(c.node);
            let diverse = kept
                .iter()
                .all(|k| squared_l2(cv, self.vector(k.node)) > c.dist);
            if diverse {
                kept.push(*c);
            }
        }
        kept
    }

    fn greedy_closest(&self, query: &[f32], start: u32, layer: usize) -> u32 {
        let mut best = Scored {
            dist: squared_l2(query, self.vector(start)),
            node: start,
        };
        loop {
            let mut improved = false;
            for &n in self.neighbors(best.node, layer) {
                let cand = Scored {
                    dist: squared_l2(query, self.vector(n)),
                    node: n,
                };
                if cand < best {
                    best = cand;
                    improved = true;
                }
            }
            if !improved {
                return best.node;
            }
        }
    }

    fn neighbors(&self, node: u32, layer: usize) -> &[u32] {
        self.links[node as usize]
            .get(layer)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Beam search on one layer; returns up to `ef` nodes sorted ascending.
    fn search_layer(&self, query: &[f32], entry_points: &[u32], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited = vec![false; self.ids.len()];
        let mut candidates: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        let mut results: BinaryHeap<Scored> = BinaryHeap::new();
        for &ep in entry_points {
            if visited[ep as usize] {
                continue;
            }
            visited[ep as usize] = true;
            let s = Scored {
                dist: squared_l2(query, self.vector(ep)),
                node: ep,
            };
            candidates.push(Reverse(s));
            results.push(s);
            if results.len() > ef {
                results.pop();
            }
        }
        while let Some(Reverse(current)) = candidates.pop() {
            if let Some(worst) = results.peek() {
                if current > *worst && results.len() >= ef {
                    break;
                }
            }
            for &n in self.neighbors(current.node, layer) {
                if visited[n as usize] {
                    continue;
                }
                visited[n as usize] = true;
                let s = Scored {
                    dist: squared_l2(query, self.vector(n)),
                    node: n,
                };
                let admit = results.len() < ef || results.peek().is_some_and(|w| s < *w);
                if admit {
                    candidates.push(Reverse(s));
                    results.push(s);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        results.into_sorted_vec()
    }

    pub fn search(&self, query: &[f32], k: usize, exclude: Option<&str>) -> Result<Vec<Neighbor>> {
        if k < MIN_K {
            return Err(Error::Config(format!("k must be at least {MIN_K}, got {k}")));
        }
        if self.ids.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let ef = self.params.ef_search.max(k + usize::from(exclude.is_some()));
        let mut ep = self.entry;
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy_closest(query, ep, layer);
        }
        let found = self.search_layer(query, &[ep], ef, 0);
        Ok(finish(
            found
                .into_iter()
                .map(|s| (self.ids[s.node as usize].as_str(), s.dist)),
            k,
            exclude,
        ))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
        out.extend_from_slice(SNAPSHOT_MAGIC);
        put(&mut out, SNAPSHOT_VERSION);
        put(&mut out, self.dim as u32);
        put(&mut out, self.params.m as u32);
        put(&mut out, self.params.ef_construction as u32);
        put(&mut out, self.params.ef_search as u32);
        out.extend_from_slice(&self.params.seed.to_le_bytes());
        put(&mut out, self.ids.len() as u32);
        put(&mut out, self.entry);
        put(&mut out, self.max_level as u32);
        for id in &self.ids {
            put(&mut out, id.len() as u32);
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for node_links in &self.links {
            put(&mut out, node_links.len() as u32);
            for layer in node_links {
                put(&mut out, layer.len() as u32);
                for &n in layer {
                    put(&mut out, n);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(Error::Format("bad index snapshot magic".into()));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let dim = r.u32()? as usize;
        let m = r.u32()? as usize;
        let ef_construction = r.u32()? as usize;
        let ef_search = r.u32()? as usize;
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let params = HnswParams {
            m,
            ef_construction,
            ef_search,
            seed,
        };
        check_params(&params)?;
        let count = r.u32()? as usize;
        let entry = r.u32()?;
        let max_level = r.u32()? as usize;
        if count == 0 || entry as usize >= count {
            return Err(Error::Format("index snapshot has invalid entry point".into()));
        }
        let mut ids = Vec::with_capacity(count);
        let mut lookup = HashMap::with_capacity(count);
        for i in 0..count {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("index id is not UTF-8".into()))?
                .to_owned();
            if lookup.insert(id.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate index id {id}")));
            }
            ids.push(id);
        }
        let vectors: Vec<f32> = r
            .take(4 * dim * count)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut links = Vec::with_capacity(count);
        for _ in 0..count {
            let layers = r.u32()? as usize;
            let mut node_links = Vec::with_capacity(layers);
            for _ in 0..layers {
                let n = r.u32()? as usize;
                let mut layer = Vec::with_capacity(n);
                for _ in 0..n {
                    let target = r.u32()?;
                    if target as usize >= count {
                        return Err(Error::Format("index link out of range".into()));
                    }
                    layer.push(target);
                }
                node_links.push(layer);
            }
            links.push(node_links);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes in index snapshot".into()));
        }
        Ok(AnnIndex {
            dim,
            params,
            ids,
            lookup,
            vectors,
            links,
            entry,
            max_level,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl NeighborSearch for AnnIndex {
    fn search(&self, query: &[f32], k: usize, exclude: Option<&str>) -> Result<Vec<Neighbor>> {
        AnnIndex::search(self, query, k, exclude)
    }
}

fn finish<'a>(
    hits: impl Iterator<Item = (&'a str, f32)>,
    k: usize,
    exclude: Option<&str>,
) -> Vec<Neighbor> {
    let mut hits: Vec<(&str, f32)> = hits.filter(|(id, _)| Some(*id) != exclude).collect();
    hits.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    hits.truncate(k);
    hits.into_iter()
        .map(|(id, distance)| Neighbor {
            id: id.to_owned(),
            distance,
        })
        .collect()
}

/// Exact k-NN by linear scan; ties go to the smaller id.
pub fn brute_force_search(
    entries: &[(String, Vec<f32>)],
    query: &[f32],
    k: usize,
    exclude: Option<&str>,
) -> Result<Vec<Neighbor>> {
    if k < MIN_K {
        return Err(Error::Config(format!("k must be at least {MIN_K}, got {k}")));
    }
    if entries.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let mut hits = Vec::with_capacity(entries.len());
    for (id, v) in entries {
        if v.len() != query.len() {
            return Err(Error::DimMismatch {
                expected: v.len(),
                got: query.len(),
            });
        }
        hits.push((id.as_str(), squared_l2(query, v)));
    }
    Ok(finish(hits.into_iter(), k, exclude))
}

/// Linear-scan [`NeighborSearch`] over owned entries.
pub struct BruteForce(pub Vec<(String, Vec<f32>)>);

impl NeighborSearch for BruteForce {
    fn search(&self, query: &[f32], k: usize, exclude: Option<&str>) -> Result<Vec<Neighbor>> {
        brute_force_search(&self.0, query, k, exclude)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated index snapshot".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Fraction of the exact neighbors recovered, averaged over queries.
pub fn recall(approx: &[Vec<Neighbor>], exact: &[Vec<Neighbor>]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (a, e) in approx.iter().zip(exact) {
        total += e.len();
        hit += e.iter().filter(|n| a.iter().any(|x| x.id == n.id)).count();
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_entries(n: usize, dim: usize, seed: u64) -> Vec<(String, Vec<f32>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                (
                    format!("c{i:05}"),
                    (0..dim).map(|_| rng.random::<f32>()).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn single_vector_with_self_exclusion_is_empty() {
        let entries = vec![("only".to_string(), vec![1.0, 2.0])];
        let index = AnnIndex::build(&entries, HnswParams::default()).unwrap();
        assert!(index.search(&[1.0, 2.0], 2, Some("only")).unwrap().is_empty());
    }

    #[test]
    fn hand_computed_three_points() {
        let entries = vec![
            ("p0".to_string(), vec![0.0, 0.0]),
            ("p1".to_string(), vec![1.0, 0.0]),
            ("p5".to_string(), vec![5.0, 0.0]),
        ];
        let index = AnnIndex::build(&entries, HnswParams::default()).unwrap();
        let got = index.search(&[0.1, 0.0], 2, None).unwrap();
        let ids: Vec<_> = got.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["p0", "p1"]);
        assert!((got[0].distance - 0.01).abs() < 1e-6);
        assert!((got[1].distance - 0.81).abs() < 1e-6);
    }

    #[test]
    fn exclusion_returns_other_nearest() {
        let entries = random_entries(50, 4, 3);
        let index = AnnIndex::build(&entries, HnswParams::default()).unwrap();
        let (id, v) = &entries[7];
        let got = index.search(v, 2, Some(id)).unwrap();
        let exact = brute_force_search(&entries, v, 2, Some(id)).unwrap();
        assert_eq!(got, exact);
    }

    #[test]
    fn k_below_floor_and_dim_mismatch() {
        let entries = random_entries(5, 3, 1);
        let index = AnnIndex::build(&entries, HnswParams::default()).unwrap();
        assert!(matches!(index.search(&[0.0; 3], 1, None), Err(Error::Config(_))));
        assert!(matches!(
            index.search(&[0.0; 4], 2, None),
            Err(Error::DimMismatch { .. })
        ));
        let mut bad = entries.clone();
        bad.push(("x".into(), vec![0.0; 2]));
        assert!(AnnIndex::build(&bad, HnswParams::default()).is_err());
        assert!(matches!(AnnIndex::build(&[], HnswParams::default()), Err(Error::EmptyIndex)));
    }

    #[test]
    fn brute_force_tie_break_and_full_sweep() {
        let entries = vec![
            ("b".to_string(), vec![1.0]),
            ("a".to_string(), vec![-1.0]),
            ("c".to_string(), vec![0.0]),
        ];
        let got = brute_force_search(&entries, &[0.0], 3, Some("c")).unwrap();
        let ids: Vec<_> = got.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn rebuild_and_snapshot_are_deterministic() {
        let entries = random_entries(300, 8, 9);
        let a = AnnIndex::build(&entries, HnswParams::default()).unwrap();
        let b = AnnIndex::build(&entries, HnswParams::default()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let loaded = AnnIndex::from_bytes(&a.to_bytes()).unwrap();
        for (id, v) in entries.iter().step_by(17) {
            assert_eq!(a.search(v, 6, Some(id)).unwrap(), loaded.search(v, 6, Some(id)).unwrap());
        }
    }

    #[test]
    fn snapshot_rejects_garbage() {
        assert!(AnnIndex::from_bytes(b"NOPE").is_err());
        let entries = random_entries(10, 2, 1);
        let bytes = AnnIndex::build(&entries, HnswParams::default()).unwrap().to_bytes();
        assert!(AnnIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn k_sweep_preserves_shared_prefix() {
        let entries = random_entries(400, 16, 21);
        let index = AnnIndex::build(&entries, HnswParams::default()).unwrap();
        for (id, v) in entries.iter().step_by(40) {
            let longest = index.search(v, 12, Some(id)).unwrap();
            for k in [2, 4, 6, 8, 10] {
                let got = index.search(v, k, Some(id)).unwrap();
                assert_eq!(got[..], longest[..k]);
            }
            assert!(longest.windows(2).all(|w| w[0].distance <= w[1].distance));
        }
    }
}
