//! Retrieval and diagnostic metrics: cross-modal mean average precision,
//! division accuracy, correction accuracy, and the per-epoch histogram
//! export behind loss-distribution plots.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::ArrayView2;
use thiserror::Error;

use crate::correct::CorrectionState;
use crate::divide::Division;
use crate::net::row_normalize;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query embeddings are {query}-wide, gallery {gallery}-wide")]
    WidthMismatch { query: usize, gallery: usize },
    #[error("empty gallery")]
    EmptyGallery,
    #[error("empty query set")]
    EmptyQuery,
    #[error("{side} has {rows} embeddings but {labels} labels")]
    LabelCount { side: &'static str, rows: usize, labels: usize },
    #[error("no query has a relevant gallery item; mAP undefined")]
    NoRelevantQueries,
    #[error("column arrays differ in length")]
    ColumnLength,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean average precision plus the per-query values it averages.
/// Queries with zero relevant gallery items carry `None` and are excluded
/// from the mean.
#[derive(Debug, Clone)]
pub struct MapResult {
    pub map: f64,
    pub per_query_ap: Vec<Option<f64>>,
}

/// Ranks every gallery item per query by descending cosine similarity
/// (inner product of unit-normalized embeddings), ties broken by ascending
/// gallery index, and averages precision over the relevant ranks.
pub fn map_retrieval(
    query_embeds: ArrayView2<f64>,
    query_labels: &[usize],
    gallery_embeds: ArrayView2<f64>,
    gallery_labels: &[usize],
) -> Result<MapResult, EvalError> {
    if query_embeds.ncols() != gallery_embeds.ncols() {
        return Err(EvalError::WidthMismatch {
            query: query_embeds.ncols(),
            gallery: gallery_embeds.ncols(),
        });
    }
    if gallery_embeds.nrows() == 0 {
        return Err(EvalError::EmptyGallery);
    }
    if query_embeds.nrows() == 0 {
        return Err(EvalError::EmptyQuery);
    }
    for (side, rows, labels) in [
        ("query", query_embeds.nrows(), query_labels.len()),
        ("gallery", gallery_embeds.nrows(), gallery_labels.len()),
    ] {
        if rows != labels {
            return Err(EvalError::LabelCount { side, rows, labels });
        }
    }

    let (q, _) = row_normalize(&query_embeds.to_owned());
    let (g, _) = row_normalize(&gallery_embeds.to_owned());
    let sims = q.dot(&g.t());

    let mut per_query_ap = Vec::with_capacity(query_labels.len());
    for (i, &label) in query_labels.iter().enumerate() {
        let row = sims.row(i);
        let mut order: Vec<usize> = (0..gallery_labels.len()).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank0, &g_idx) in order.iter().enumerate() {
            if gallery_labels[g_idx] == label {
                hits += 1;
                precision_sum += hits as f64 / (rank0 + 1) as f64;
            }
        }
        per_query_ap.push(if hits == 0 { None } else { Some(precision_sum / hits as f64) });
    }

    let evaluable: Vec<f64> = per_query_ap.iter().filter_map(|&ap| ap).collect();
    if evaluable.is_empty() {
        return Err(EvalError::NoRelevantQueries);
    }
    let map = evaluable.iter().sum::<f64>() / evaluable.len() as f64;
    Ok(MapResult { map, per_query_ap })
}

/// Fraction of samples whose clean/noisy assignment matches whether their
/// given label is actually correct. `None` when true labels are unavailable.
pub fn division_accuracy(
    division: &Division,
    noisy_labels: &[usize],
    true_labels: Option<&[usize]>,
) -> Option<f64> {
    let true_labels = true_labels?;
    assert_eq!(division.clean_mask.len(), noisy_labels.len());
    assert_eq!(noisy_labels.len(), true_labels.len());
    if noisy_labels.is_empty() {
        return None;
    }
    let correct = division
        .clean_mask
        .iter()
        .zip(noisy_labels.iter().zip(true_labels))
        .filter(|(&flag, (&ny, &ty))| flag == (ny == ty))
        .count();
    Some(correct as f64 / noisy_labels.len() as f64)
}

/// Fraction of noisy-routed samples whose accumulated hard label equals the
/// true label. `None` when the noisy set is empty or true labels are
/// unavailable. Samples with no accumulated estimate count as incorrect.
pub fn correction_accuracy(
    state: &CorrectionState,
    division: &Division,
    true_labels: Option<&[usize]>,
) -> Option<f64> {
    let true_labels = true_labels?;
    assert_eq!(division.clean_mask.len(), state.n_samples());
    assert_eq!(state.n_samples(), true_labels.len());
    let noisy: Vec<usize> = (0..state.n_samples())
        .filter(|&i| !division.clean_mask[i])
        .collect();
    if noisy.is_empty() {
        return None;
    }
    let correct = noisy
        .iter()
        .filter(|&&i| state.hard_label(i).is_ok_and(|h| h == true_labels[i]))
        .count();
    Some(correct as f64 / noisy.len() as f64)
}

/// Formats with 9 significant digits and a period separator, independent of
/// locale.
pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes the per-sample division snapshot as CSV:
/// `index,normalized_loss,credibility,clean_flag,label_is_true` with flags
/// as 1/0 and the last column empty when true labels are unavailable.
pub fn export_histogram(
    l_norm: &[f64],
    credibility: &[f64],
    clean_mask: &[bool],
    label_is_true: Option<&[bool]>,
    path: &Path,
) -> Result<(), EvalError> {
    let n = l_norm.len();
    if credibility.len() != n
        || clean_mask.len() != n
        || label_is_true.is_some_and(|l| l.len() != n)
    {
        return Err(EvalError::ColumnLength);
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "index,normalized_loss,credibility,clean_flag,label_is_true")?;
    for i in 0..n {
        let truth = match label_is_true {
            Some(flags) => if flags[i] { "1" } else { "0" },
            None => "",
        };
        writeln!(
            w,
            "{i},{},{},{},{truth}",
            fmt_float(l_norm[i]),
            fmt_float(credibility[i]),
            u8::from(clean_mask[i]),
        )?;
    }
    w.flush()?;
    Ok(())
}
