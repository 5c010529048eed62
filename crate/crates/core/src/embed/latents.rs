use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::EmbedError;
use crate::ingest::{Catalog, Labels};
use crate::sae::SaeModel;
use crate::tensorize::EventTensor;

/// Row-stacked latent codes with aligned series ids and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMatrix {
    pub n: usize,
    pub d: usize,
    /// Row-major `n x d`.
    pub rows: Vec<f64>,
    pub ids: Vec<String>,
    pub labels: Vec<Labels>,
}

impl LatentMatrix {
    pub fn new(rows: Vec<f64>, d: usize, ids: Vec<String>, labels: Vec<Labels>) -> Result<Self, EmbedError> {
        let n = ids.len();
        if rows.len() != n * d || labels.len() != n {
            return Err(EmbedError::Shape(format!(
                "{} values, {} ids, {} label rows for width {d}",
                rows.len(),
                n,
                labels.len()
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(EmbedError::DuplicateId(dup.clone()));
        }
        Ok(LatentMatrix { n, d, rows, ids, labels })
    }

    /// Unlabeled matrix with ids `0..n`.
    pub fn from_rows(rows: Vec<f64>, d: usize) -> Result<Self, EmbedError> {
        let n = if d == 0 { 0 } else { rows.len() / d };
        Self::new(rows, d, (0..n).map(|i| i.to_string()).collect(), vec![Labels::default(); n])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Label column by name: `variability_index`, `hardness_ratio` or `class_tag`.
    pub fn label_column(&self, name: &str) -> Option<Vec<Option<String>>> {
        let get = |l: &Labels| -> Option<String> {
            match name {
                "variability_index" => l.variability_index.map(|v| v.to_string()),
                "hardness_ratio" => l.hardness_ratio.map(|v| v.to_string()),
                "class_tag" => l.class_tag.clone(),
                _ => None,
            }
        };
        matches!(name, "variability_index" | "hardness_ratio" | "class_tag")
            .then(|| self.labels.iter().map(get).collect())
    }

    /// Subset of rows in the given order.
    pub fn select(&self, idx: &[usize]) -> LatentMatrix {
        LatentMatrix {
            n: idx.len(),
            d: self.d,
            rows: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }
}

/// Encode every catalog entry; rows follow catalog order and carry its labels.
pub fn extract_latents(
    model: &SaeModel,
    catalog: &Catalog,
    tensors: &HashMap<String, EventTensor>,
) -> Result<LatentMatrix, EmbedError> {
    use rayon::prelude::*;
    let codes = catalog
        .entries
        .par_iter()
        .map(|entry| {
            let t = tensors
                .get(&entry.series_id)
                .ok_or_else(|| EmbedError::MissingTensor(entry.series_id.clone()))?;
            Ok(model.encode(t)?.z)
        })
        .collect::<Result<Vec<_>, EmbedError>>()?;
    LatentMatrix::new(
        codes.into_iter().flatten().collect(),
        model.latent_dim(),
        catalog.entries.iter().map(|e| e.series_id.clone()).collect(),
        catalog.entries.iter().map(|e| e.labels.clone()).collect(),
    )
}

const LABEL_COLUMNS: [&str; 3] = ["variability_index", "hardness_ratio", "class_tag"];

fn label_cells(l: &Labels) -> [String; 3] {
    [
        l.variability_index.map(|v| format!("{v:?}")).unwrap_or_default(),
        l.hardness_ratio.map(|v| format!("{v:?}")).unwrap_or_default(),
        l.class_tag.clone().unwrap_or_default(),
    ]
}

fn parse_label(labels: &mut Labels, column: &str, cell: &str, line: usize) -> Result<(), EmbedError> {
    if cell.is_empty() {
        return Ok(());
    }
    let number = || {
        cell.parse::<f64>()
            .map_err(|_| EmbedError::Malformed(format!("line {line}: bad {column} value {cell:?}")))
    };
    match column {
        "variability_index" => labels.variability_index = Some(number()?),
        "hardness_ratio" => labels.hardness_ratio = Some(number()?),
        "class_tag" => labels.class_tag = Some(cell.to_string()),
        _ => unreachable!(),
    }
    Ok(())
}

/// `series_id,z0,...,z{d-1},variability_index,hardness_ratio,class_tag`.
pub fn write_latents_csv(m: &LatentMatrix, path: &Path) -> Result<(), EmbedError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["series_id".to_string()];
    header.extend((0..m.d).map(|k| format!("z{k}")));
    header.extend(LABEL_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for i in 0..m.n {
        let mut rec = vec![m.ids[i].clone()];
        rec.extend(m.row(i).iter().map(|v| format!("{v:?}")));
        rec.extend(label_cells(&m.labels[i]));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| EmbedError::Io(path.to_path_buf(), e))?;
    Ok(())
}

/// Read a latent CSV: `z<k>` columns are coordinates, known label columns are
/// optional; anything else is rejected.
pub fn read_latents_csv(path: &Path) -> Result<LatentMatrix, EmbedError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("series_id") {
        return Err(EmbedError::Malformed("first column must be series_id".into()));
    }
    let mut z_cols = Vec::new();
    let mut label_cols = Vec::new();
    for (i, name) in header.iter().enumerate().skip(1) {
        if let Some(k) = name.strip_prefix('z').and_then(|k| k.parse::<usize>().ok()) {
            z_cols.push((k, i));
        } else if LABEL_COLUMNS.contains(&name.as_str()) {
            label_cols.push((name.clone(), i));
        } else {
            return Err(EmbedError::Malformed(format!("unknown column {name:?}")));
        }
    }
    z_cols.sort();
    if z_cols.iter().enumerate().any(|(pos, &(k, _))| pos != k) || z_cols.is_empty() {
        return Err(EmbedError::Malformed("latent columns must be z0..z{d-1}".into()));
    }
    let d = z_cols.len();
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        ids.push(rec.get(0).unwrap_or_default().to_string());
        for &(_, col) in &z_cols {
            let cell = rec.get(col).unwrap_or_default();
            rows.push(
                cell.parse::<f64>()
                    .map_err(|_| EmbedError::Malformed(format!("line {line}: bad latent value {cell:?}")))?,
            );
        }
        let mut l = Labels::default();
        for (name, col) in &label_cols {
            parse_label(&mut l, name, rec.get(*col).unwrap_or_default(), line)?;
        }
        labels.push(l);
    }
    LatentMatrix::new(rows, d, ids, labels)
}
