use crate::encoders::{
    embed_text, encode_shared, encode_speech, slam_segments, synthesize_text, FusionMode, Modality, ModelParams, Session, Tap,
};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::synthcorpus::{Corpus, Utterance};

/// Time-pooled activations of one utterance at one tap.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding {
    pub id: String,
    pub modality: Modality,
    pub domain: String,
    pub tap: Tap,
    /// Mean gold token duration of the utterance.
    pub mean_duration: f64,
    pub vector: Vec<f64>,
}

/// Embeddings of one modality at one tap, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub tap: Tap,
    pub modality: Modality,
    pub items: Vec<PooledEmbedding>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Vectors stacked as an `N×D` matrix.
    pub fn matrix(&self) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = self.items.iter().map(|e| e.vector.clone()).collect();
        Tensor::from_rows(&rows)
    }
}

/// Speech item `i` is paired with text item `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSet {
    pub speech: EmbeddingSet,
    pub text: EmbeddingSet,
}

impl PairedSet {
    pub fn new(speech: EmbeddingSet, text: EmbeddingSet) -> Result<Self> {
        if speech.len() != text.len() {
            return Err(Error::Input(format!(
                "paired sets differ in size: {} speech vs {} text",
                speech.len(),
                text.len()
            )));
        }
        if let Some((a, b)) = speech.items.iter().zip(&text.items).find(|(a, b)| a.id != b.id) {
            return Err(Error::Input(format!("pairing broken: speech {} aligned with text {}", a.id, b.id)));
        }
        Ok(Self { speech, text })
    }

    pub fn len(&self) -> usize {
        self.speech.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speech.is_empty()
    }

    /// Both sides of a set built from the same vectors, for identity checks.
    pub fn from_vectors(speech: Vec<Vec<f64>>, text: Vec<Vec<f64>>) -> Result<Self> {
        let wrap = |vs: Vec<Vec<f64>>, modality| EmbeddingSet {
            tap: Tap::Shared,
            modality,
            items: vs
                .into_iter()
                .enumerate()
                .map(|(i, vector)| PooledEmbedding {
                    id: format!("item-{i:05}"),
                    modality,
                    domain: String::new(),
                    tap: Tap::Shared,
                    mean_duration: 0.0,
                    vector,
                })
                .collect(),
        };
        Self::new(wrap(speech, Modality::Speech), wrap(text, Modality::Text))
    }
}

/// Column means of a `T×D` matrix.
pub fn mean_pool(x: &Tensor) -> Vec<f64> {
    let cols = x.cols();
    let mut out = vec![0.0; cols];
    for row in x.data().chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let n = x.rows() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn pooled_activations(params: &ModelParams, u: &Utterance, tap: Tap, modality: Modality) -> Result<Vec<f64>> {
    let mut s = Session::new(params);
    let fusion = params.config().fusion;
    let var = match (fusion, modality, tap) {
        (_, Modality::Speech, Tap::Modal) => encode_speech(&mut s, &u.frames)?.activations,
        (FusionMode::Maestro, Modality::Speech, Tap::Shared) => {
            let m = encode_speech(&mut s, &u.frames)?;
            encode_shared(&mut s, m)?.activations
        }
        (FusionMode::Maestro, Modality::Text, Tap::Modal) => synthesize_text(&mut s, &u.tokens)?.0.activations,
        (FusionMode::Maestro, Modality::Text, Tap::Shared) => {
            let (m, _) = synthesize_text(&mut s, &u.tokens)?;
            encode_shared(&mut s, m)?.activations
        }
        (FusionMode::SlamConcat, Modality::Text, Tap::Modal) => embed_text(&mut s, &u.tokens)?,
        // The concatenated model has no standalone shared path: pool each
        // segment of the fused pass over the paired utterance.
        (FusionMode::SlamConcat, m, Tap::Shared) => {
            let (sp, tx) = slam_segments(&mut s, u)?;
            if m == Modality::Speech {
                sp
            } else {
                tx
            }
        }
    };
    Ok(mean_pool(s.graph.value(var)))
}

/// Mean-pooled embedding of every utterance at `tap` for `modality`.
///
/// The Maestro text path uses predicted durations.
pub fn embed_corpus(params: &ModelParams, corpus: &Corpus, tap: Tap, modality: Modality) -> Result<EmbeddingSet> {
    let items = corpus
        .utterances
        .iter()
        .map(|u| {
            let vector = pooled_activations(params, u, tap, modality)?;
            if !vector.iter().all(|v| v.is_finite()) {
                return Err(Error::Evaluation(format!("non-finite embedding for {}", u.id)));
            }
            Ok(PooledEmbedding {
                id: u.id.clone(),
                modality,
                domain: u.domain.clone(),
                tap,
                mean_duration: u.mean_duration(),
                vector,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmbeddingSet { tap, modality, items })
}

/// Speech and text embeddings of a paired corpus at one tap.
pub fn embed_pairs(params: &ModelParams, corpus: &Corpus, tap: Tap) -> Result<PairedSet> {
    PairedSet::new(
        embed_corpus(params, corpus, tap, Modality::Speech)?,
        embed_corpus(params, corpus, tap, Modality::Text)?,
    )
}
