//! The CREB container as produced by an external encoder.

use std::fs;

use clauseforge_core::corpus::{ingest_str, InputFormat};
use clauseforge_core::embedding::{cosine, encode, EmbeddingStore, EncoderSpec};
use clauseforge_core::Error;

const FIXTURE: &str = concat!(
    r#"{"contract_id": "f1", "clauses": [{"clause_id": "f1-c0", "type": "governing laws", "text": "This Agreement is governed by the laws of the State of Delaware."}, {"clause_id": "f1-c1", "type": "notices", "text": "All notices shall be in writing and sent to the addresses above."}]}"#,
    "\n",
    r#"{"contract_id": "f2", "clauses": [{"clause_id": "f2-c0", "type": "governing laws", "text": "This Agreement shall be governed by the laws of the State of New York."}, {"clause_id": "f2-c1", "type": "notices", "text": "Notices must be delivered by certified mail to the receiving party."}]}"#,
    "\n",
    r#"{"contract_id": "f3", "clauses": [{"clause_id": "f3-c0", "type": "governing laws", "text": "The laws of the State of Texas govern this Agreement."}, {"clause_id": "f3-c1", "type": "notices", "text": "Any notice is deemed given five days after mailing."}]}"#,
);

/// Writes the container the way an independent producer would.
fn hand_written(records: &[(String, Vec<f32>)], dim: u32) -> Vec<u8> {
    let mut out = b"CREB".to_vec();
    for v in [1u32, dim, records.len() as u32] {
        out.extend(v.to_le_bytes());
    }
    for (id, vector) in records {
        out.extend((id.len() as u32).to_le_bytes());
        out.extend(id.as_bytes());
        for x in vector {
            out.extend(x.to_le_bytes());
        }
    }
    out
}

fn fixture_records() -> Vec<(String, Vec<f32>)> {
    let contracts = ingest_str(FIXTURE, InputFormat::Contract).unwrap();
    let spec = EncoderSpec::hash(768, 0);
    contracts
        .iter()
        .flat_map(|c| &c.clauses)
        .map(|cl| (cl.clause_id.clone(), encode(&spec, &cl.text).unwrap().into_inner()))
        .collect()
}

#[test]
fn six_clause_fixture_round_trips() {
    let records = fixture_records();
    assert_eq!(records.len(), 6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.creb");
    let bytes = hand_written(&records, 768);
    assert_eq!(bytes.len(), 16 + records.iter().map(|(id, _)| 4 + id.len() + 768 * 4).sum::<usize>());
    fs::write(&path, &bytes).unwrap();

    let store = EmbeddingStore::read_with_dim(&path, 768).unwrap();
    assert_eq!((store.len(), store.dim()), (6, 768));
    for (id, v) in &records {
        assert_eq!(store.require(id).unwrap(), v.as_slice());
    }
    assert_eq!(store.to_bytes().unwrap(), bytes);
}

#[test]
fn sidecar_carries_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("with_meta.creb");
    let mut store = EmbeddingStore::new(768, "legal-encoder mean-pooled");
    for (id, v) in fixture_records() {
        store.insert(id, v).unwrap();
    }
    store.write(&path).unwrap();
    let sidecar = path.with_file_name("with_meta.creb.json");
    assert!(fs::read_to_string(sidecar).unwrap().contains("legal-encoder mean-pooled"));
    assert_eq!(EmbeddingStore::read(&path).unwrap(), store);
}

#[test]
fn producer_mistakes_are_caught() {
    let records = fixture_records();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.creb");

    fs::write(&path, hand_written(&records, 768)).unwrap();
    assert!(matches!(
        EmbeddingStore::read_with_dim(&path, 1024),
        Err(Error::DimMismatch { expected: 1024, got: 768 })
    ));

    let mut truncated = hand_written(&records, 768);
    truncated.truncate(truncated.len() - 3);
    fs::write(&path, truncated).unwrap();
    assert!(matches!(EmbeddingStore::read(&path), Err(Error::Format(_))));

    let mut wrong_version = hand_written(&records, 768);
    wrong_version[4] = 2;
    fs::write(&path, wrong_version).unwrap();
    assert!(matches!(EmbeddingStore::read(&path), Err(Error::Format(_))));

    let mut duplicated = records.clone();
    duplicated.push(records[0].clone());
    fs::write(&path, hand_written(&duplicated, 768)).unwrap();
    assert!(EmbeddingStore::read(&path).is_err());
}

#[test]
fn same_type_clauses_are_closer() {
    let records = fixture_records();
    let get = |id: &str| &records.iter().find(|(i, _)| i == id).unwrap().1;
    let (law_a, law_b, notice) = (get("f1-c0"), get("f2-c0"), get("f3-c1"));
    assert!(cosine(law_a, law_b) > cosine(law_a, notice));
}
