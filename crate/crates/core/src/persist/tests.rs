use super::*;
use crate::analysis::embed_corpus;
use crate::encoders::{FusionMode, Modality, ModelConfig, ModelParams, Tap};
use crate::synthcorpus::{make_corpus, make_domain, Corpus, DomainKnobs, Split};
use crate::Error;

fn small_params(fusion: FusionMode) -> ModelParams {
    ModelParams::init(&ModelConfig {
        width: 8,
        speech_depth: 1,
        shared_depth: 1,
        refiner_depth: 1,
        vocab: 6,
        feature_dim: 4,
        fusion,
        seed: 3,
    })
    .unwrap()
}

fn small_corpus() -> Corpus {
    let knobs = DomainKnobs {
        vocab: 6,
        feature_dim: 4,
        max_tokens: 4,
        prototype_separation: 6.0,
        ..DomainKnobs::read()
    };
    make_corpus(&make_domain(&knobs, 4).unwrap(), 6, Split::Test, 4).unwrap()
}

fn bits(p: &ModelParams) -> Vec<(String, Vec<u64>)> {
    p.tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    for fusion in [FusionMode::Maestro, FusionMode::SlamConcat] {
        let p = small_params(fusion);
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), CHECKPOINT_VERSION);
        let q = decode_checkpoint(&bytes).unwrap();
        assert_eq!(q.config(), p.config());
        assert_eq!(bits(&q), bits(&p));
        assert_eq!(encode_checkpoint(&q), bytes);
    }
}

#[test]
fn checkpoint_rejects_damage() {
    let bytes = encode_checkpoint(&small_params(FusionMode::Maestro));
    for cut in [0, 3, 8, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(decode_checkpoint(&trailing), Err(Error::Format(_))));
    let mut version = bytes.clone();
    version[4] = 2;
    let err = decode_checkpoint(&version).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&magic), Err(Error::Format(_))));
}

#[test]
fn corpus_round_trip_and_damage() {
    let c = small_corpus();
    let bytes = encode_corpus(&c);
    let back = decode_corpus(&bytes).unwrap();
    assert_eq!(back, c);
    assert_eq!(encode_corpus(&back), bytes);
    for cut in [2, 10, bytes.len() - 8] {
        assert!(decode_corpus(&bytes[..cut]).is_err());
    }
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(decode_corpus(&version).is_err());
    assert!(decode_checkpoint(&bytes).is_err());
}

#[test]
fn files_are_written_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let p = small_params(FusionMode::Maestro);
    save_checkpoint(&path, &p).unwrap();
    save_checkpoint(&path, &p).unwrap();
    assert_eq!(bits(&load_checkpoint(&path).unwrap()), bits(&p));
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("model.ckpt")]);
    let c = small_corpus();
    save_corpus(dir.path().join("c.mcor"), &c).unwrap();
    assert_eq!(load_corpus(dir.path().join("c.mcor")).unwrap(), c);
    assert!(matches!(save_corpus(dir.path().join("missing/c.mcor"), &c), Err(Error::Io(_))));
}

#[test]
fn ini_grammar() {
    let doc = IniDoc::parse("# top\n[a]\nx = 1 # trailing\ny=two words\n\n[b]\nz =\n").unwrap();
    let a = doc.section("a").unwrap();
    assert_eq!((a[0].key.as_str(), a[0].value.as_str(), a[0].line), ("x", "1", 3));
    assert_eq!(a[1].value, "two words");
    assert_eq!(doc.section("b").unwrap()[0].value, "");
    for bad in ["x = 1", "[a]\nx = 1\nx = 2", "[a]\n[a]", "[a\n", "[a]\nnovalue", "[]"] {
        assert!(matches!(IniDoc::parse(bad), Err(Error::Config(_))), "{bad:?}");
    }
}

#[test]
fn embedding_tsv_round_trip() {
    let set = embed_corpus(&small_params(FusionMode::Maestro), &small_corpus(), Tap::Shared, Modality::Text).unwrap();
    let text = embeddings_to_tsv(&set, "seed = 3\nname = x");
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# seed = 3"));
    assert_eq!(lines.next(), Some("# name = x"));
    assert_eq!(lines.next(), Some("id\tmodality\tdomain\ttap\tmean_duration\tv0\tv1\tv2\tv3\tv4\tv5\tv6\tv7"));
    assert_eq!(lines.count(), set.len());
    let back = embeddings_from_tsv(&text).unwrap();
    assert_eq!(back, set);
    assert!(embeddings_from_tsv("id\tmodality\n").is_err());
    let broken = text.replacen("\tshared\t", "\tshared\t\t", 1);
    assert!(matches!(embeddings_from_tsv(&broken), Err(Error::Format(_))));
}
