//! Feature-layer similarity diagnostics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{det_psd, logdet_psd, DetMode, Matrix};
use crate::network::Mlp;
use crate::similarity::pairwise_similarity;

/// Samples in the evaluation batch: the first rows of the dataset.
pub const DUMP_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDump {
    pub matrix: Matrix,
    pub det: f64,
    /// `-inf` when S is singular.
    pub logdet: f64,
    pub samples: usize,
}

/// Writes S of the feature layer over the first [`DUMP_BATCH`] samples of
/// `ds`, one row per line, preceded by `# det=<d> logdet=<l> gamma=<g> samples=<m>`.
pub fn dump_similarity(model: &Mlp, ds: &Dataset, gamma: f64, path: impl AsRef<Path>) -> Result<SimilarityDump> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot dump similarity of an empty dataset".into()));
    }
    let rows: Vec<usize> = (0..ds.len().min(DUMP_BATCH)).collect();
    let trace = model.forward(&ds.features.select_rows(&rows))?;
    let sim = pairwise_similarity(&trace.features()?, gamma)?;
    let s = sim.matrix().clone();
    let det = det_psd(&s, 0.0, DetMode::Tolerant)?;
    let logdet = if det > 0.0 {
        logdet_psd(&s, 0.0).unwrap_or(det.ln())
    } else {
        f64::NEG_INFINITY
    };

    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# det={det:e} logdet={logdet:e} gamma={gamma} samples={}", rows.len())?;
    for i in 0..s.rows() {
        let line: Vec<String> = s.row(i).iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(SimilarityDump {
        matrix: s,
        det,
        logdet,
        samples: rows.len(),
    })
}
