use std::collections::BTreeMap;

use crate::encoders::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::synthcorpus::{Corpus, DomainSpec, Split, Utterance};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSTL";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CORPUS_MAGIC: &[u8; 4] = b"MCOR";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("value fits in 32 bits");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len());
        for &d in t.shape() {
            self.u32(d);
        }
        self.f64s(t.data());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "truncated {}: needed {n} bytes at offset {}, file has {}",
                self.what,
                self.pos,
                self.bytes.len()
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        // Bound the allocation by what is actually left in the buffer.
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format(format!("corrupt {} length", self.what)))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<usize>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format(format!("corrupt {} length", self.what)))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect())
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format(format!("invalid UTF-8 in {}", self.what)))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()?;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("unsupported tensor rank {rank} in {}", self.what)));
        }
        let shape = self.u32s(rank)?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor size overflow in {}", self.what)))?;
        let data = self.f64s(len)?;
        Tensor::new(shape, data).map_err(|e| Error::Format(format!("bad tensor in {}: {e}", self.what)))
    }

    fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("not a {} file (bad magic)", self.what)));
        }
        let v = self.u32()?;
        if v != version as usize {
            return Err(Error::Format(format!("{} format version {v}, expected {version}", self.what)));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} has {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Serializes parameters: header, config echo, then every named tensor.
pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);
    w.str(&params.config().to_echo());
    w.u32(params.tensors().len());
    for (name, t) in params.tensors() {
        w.str(name);
        w.tensor(t);
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let cfg = ModelConfig::from_echo(&r.str()?)?;
    let n = r.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..n {
        let name = r.str()?;
        let t = r.tensor()?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name} in checkpoint")));
        }
    }
    r.finish()?;
    ModelParams::from_tensors(cfg, tensors)
}

fn write_spec(w: &mut Writer, spec: &DomainSpec) {
    w.str(&spec.id);
    w.tensor(&spec.prototypes);
    w.f64s(&spec.duration_mu);
    w.f64s(&spec.duration_sigma);
    w.f64s(&spec.unigram);
    w.f64(spec.noise);
    w.u32(spec.min_tokens);
    w.u32(spec.max_tokens);
    w.u32(spec.max_token_frames);
}

fn read_spec(r: &mut Reader<'_>) -> Result<DomainSpec> {
    let id = r.str()?;
    let prototypes = r.tensor()?;
    if prototypes.shape().len() != 2 {
        return Err(Error::Format("prototype matrix must be 2-D".into()));
    }
    let v = prototypes.rows();
    let spec = DomainSpec {
        id,
        prototypes,
        duration_mu: r.f64s(v)?,
        duration_sigma: r.f64s(v)?,
        unigram: r.f64s(v)?,
        noise: r.f64()?,
        min_tokens: r.u32()?,
        max_tokens: r.u32()?,
        max_token_frames: r.u32()?,
    };
    spec.validate().map_err(|e| Error::Format(format!("invalid domain spec: {e}")))?;
    Ok(spec)
}

/// Serializes a corpus with its domain spec, split and seed.
pub fn encode_corpus(corpus: &Corpus) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(CORPUS_MAGIC);
    w.u32(CORPUS_VERSION as usize);
    write_spec(&mut w, &corpus.spec);
    w.u8(corpus.split.code() as u8);
    w.u64(corpus.seed);
    w.u32(corpus.utterances.len());
    for u in &corpus.utterances {
        w.str(&u.id);
        w.str(&u.domain);
        w.u32(u.tokens.len());
        for &t in &u.tokens {
            w.u32(t);
        }
        for &d in &u.durations {
            w.u32(d);
        }
        w.tensor(&u.frames);
    }
    w.buf
}

pub fn decode_corpus(bytes: &[u8]) -> Result<Corpus> {
    let mut r = Reader::new(bytes, "corpus");
    r.header(CORPUS_MAGIC, CORPUS_VERSION)?;
    let spec = read_spec(&mut r)?;
    let code = r.u8()?;
    let split = Split::from_code(code).ok_or_else(|| Error::Format(format!("unknown split code {code}")))?;
    let seed = r.u64()?;
    let n = r.u32()?;
    let mut utterances = Vec::new();
    for _ in 0..n {
        let id = r.str()?;
        let domain = r.str()?;
        let u = r.u32()?;
        let tokens = r.u32s(u)?;
        let durations = r.u32s(u)?;
        let frames = r.tensor()?;
        let utt = Utterance {
            id,
            domain,
            tokens,
            durations,
            frames,
        };
        utt.validate()?;
        if let Some(&bad) = utt.tokens.iter().find(|&&t| t == 0 || t > spec.vocab()) {
            return Err(Error::Vocabulary {
                id: bad,
                vocab: spec.vocab(),
            });
        }
        if utt.frames.cols() != spec.feature_dim() {
            return Err(Error::Format(format!("utterance {} has feature dim {}", utt.id, utt.frames.cols())));
        }
        utterances.push(utt);
    }
    r.finish()?;
    Ok(Corpus {
        spec,
        split,
        seed,
        utterances,
    })
}
