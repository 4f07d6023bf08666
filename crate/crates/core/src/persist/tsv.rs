use std::fmt::Write as _;

use crate::analysis::{EmbeddingSet, PooledEmbedding};
use crate::encoders::{Modality, Tap};
use crate::error::{Error, Result};

/// Embedding dump: `#` comment lines (`preamble`), a header
/// `id modality domain tap mean_duration v0..v{D-1}`, then one row per item.
/// Reals use the shortest representation that parses back exactly.
pub fn embeddings_to_tsv(set: &EmbeddingSet, preamble: &str) -> String {
    let mut out = String::new();
    for line in preamble.lines() {
        let _ = writeln!(out, "# {}", line.trim_start_matches('#').trim_start());
    }
    let dim = set.items.first().map_or(0, |e| e.vector.len());
    out.push_str("id\tmodality\tdomain\ttap\tmean_duration");
    for i in 0..dim {
        let _ = write!(out, "\tv{i}");
    }
    out.push('\n');
    for e in &set.items {
        let _ = write!(out, "{}\t{}\t{}\t{}\t{}", e.id, e.modality.name(), e.domain, e.tap.name(), e.mean_duration);
        for v in &e.vector {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses [`embeddings_to_tsv`] output. All rows must share one modality and tap.
pub fn embeddings_from_tsv(text: &str) -> Result<EmbeddingSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Format("embedding TSV has no header".into()))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let fixed = ["id", "modality", "domain", "tap", "mean_duration"];
    if cols.len() < fixed.len() || cols[..fixed.len()] != fixed {
        return Err(Error::Format(format!("unexpected embedding TSV header `{header}`")));
    }
    let dim = cols.len() - fixed.len();
    if cols[fixed.len()..].iter().enumerate().any(|(i, c)| *c != format!("v{i}")) {
        return Err(Error::Format("vector columns must be v0..v{D-1}".into()));
    }
    let mut items = Vec::new();
    for (i, line) in lines {
        let at = |m: String| Error::Format(format!("line {}: {m}", i + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(at(format!("expected {} fields, got {}", cols.len(), f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| at(format!("bad number `{s}`")));
        let modality = Modality::parse(f[1]).map_err(|e| at(e.to_string()))?;
        let tap = Tap::parse(f[3]).map_err(|e| at(e.to_string()))?;
        items.push(PooledEmbedding {
            id: f[0].to_string(),
            modality,
            domain: f[2].to_string(),
            tap,
            mean_duration: num(f[4])?,
            vector: f[5..].iter().map(|s| num(s)).collect::<Result<_>>()?,
        });
    }
    let first = items.first().ok_or_else(|| Error::Format("embedding TSV has no rows".into()))?;
    let (modality, tap) = (first.modality, first.tap);
    if items.iter().any(|e| e.modality != modality || e.tap != tap) {
        return Err(Error::Format("embedding TSV mixes modalities or taps".into()));
    }
    debug_assert!(items.iter().all(|e| e.vector.len() == dim));
    Ok(EmbeddingSet { tap, modality, items })
}
