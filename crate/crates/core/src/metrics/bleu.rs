use std::collections::HashMap;

use super::MetricsError;

const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuBreakdown {
    /// Brevity penalty in (0, 1].
    pub bp: f64,
    /// Modified precisions for n = 1..=4; orders above 1 are add-one smoothed.
    pub precisions: [f64; MAX_ORDER],
    pub score: f64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence-level BLEU-4 with add-one smoothing on orders n > 1.
///
/// An empty candidate, or one without a single matching unigram, scores 0.
pub fn smoothed_bleu4(candidate: &[String], reference: &[String]) -> Result<BleuBreakdown, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    if candidate.is_empty() {
        // bp of a one-token candidate keeps `bp` inside (0, 1]
        return Ok(BleuBreakdown {
            bp: (1.0 - reference.len() as f64).min(0.0).exp(),
            precisions: [0.0; MAX_ORDER],
            score: 0.0,
        });
    }

    let mut precisions = [0.0; MAX_ORDER];
    for (k, p) in precisions.iter_mut().enumerate() {
        let n = k + 1;
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let total = candidate.len().saturating_sub(n - 1);
        let smooth = if n > 1 { 1.0 } else { 0.0 };
        *p = (clipped as f64 + smooth) / (total as f64 + smooth);
    }

    let ratio = reference.len() as f64 / candidate.len() as f64;
    let bp = (1.0 - ratio).min(0.0).exp();
    let score = if precisions[0] == 0.0 {
        0.0
    } else {
        bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64).exp()
    };
    Ok(BleuBreakdown {
        bp,
        precisions,
        score,
    })
}
