//! JSON space documents.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::MetricMeasureSpace;

/// Either ragged rows of the strict lower triangle (`rows[i]` holds
/// `d(i, 0..i)`) or the full square table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistTable {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDocument {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<DistTable>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(default)]
    pub label: String,
}

fn square(doc: &SpaceDocument) -> Result<Vec<f64>> {
    let n = doc.n;
    let mut d = vec![0.0; n * n];
    match (&doc.points, &doc.dist) {
        (Some(_), Some(_)) => Err(Error::Format("give either `points` or `dist`, not both".into())),
        (None, None) => {
            if n == 1 {
                Ok(d)
            } else {
                Err(Error::Format("document needs `points` or `dist`".into()))
            }
        }
        (Some(pts), None) => {
            if pts.len() != n {
                return Err(Error::Format(format!("{} points for n = {n}", pts.len())));
            }
            let dim = pts.first().map_or(0, |p| p.len());
            if pts.iter().any(|p| p.len() != dim) {
                return Err(Error::Format("points have mixed dimensions".into()));
            }
            for i in 0..n {
                for j in 0..n {
                    d[i * n + j] = pts[i]
                        .iter()
                        .zip(&pts[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                }
            }
            Ok(d)
        }
        (None, Some(DistTable::Rows(rows))) => {
            if rows.len() == n && rows.iter().all(|r| r.len() == n) {
                for (i, r) in rows.iter().enumerate() {
                    d[i * n..(i + 1) * n].copy_from_slice(r);
                }
                return Ok(d);
            }
            if rows.len() != n || rows.iter().enumerate().any(|(i, r)| r.len() != i) {
                return Err(Error::Format(
                    "`dist` rows must form the strict lower triangle (row i has i entries) or an n x n table".into(),
                ));
            }
            for (i, r) in rows.iter().enumerate() {
                for (j, &v) in r.iter().enumerate() {
                    d[i * n + j] = v;
                    d[j * n + i] = v;
                }
            }
            Ok(d)
        }
        (None, Some(DistTable::Flat(flat))) => {
            if flat.len() == n * n {
                return Ok(flat.clone());
            }
            if flat.len() != n * (n - 1) / 2 {
                return Err(Error::Format(format!(
                    "flat `dist` has {} entries; expected {} (lower triangle) or {} (full)",
                    flat.len(),
                    n * (n - 1) / 2,
                    n * n
                )));
            }
            let mut it = flat.iter();
            for i in 0..n {
                for j in 0..i {
                    let v = *it.next().unwrap();
                    d[i * n + j] = v;
                    d[j * n + i] = v;
                }
            }
            Ok(d)
        }
    }
}

pub fn space_from_document<T: Scalar>(doc: &SpaceDocument) -> Result<MetricMeasureSpace<T>> {
    if doc.weights.len() != doc.n {
        return Err(Error::Format(format!(
            "{} weights for n = {}",
            doc.weights.len(),
            doc.n
        )));
    }
    let d = square(doc)?;
    let space = MetricMeasureSpace::from_table(
        d.into_iter().map(T::lit).collect(),
        doc.weights.iter().map(|&w| T::lit(w)).collect(),
        doc.label.clone(),
        doc.a0,
    )?;
    Ok(space)
}

/// Always writes the lower-triangle rows: generated coordinates need not
/// induce the stored (possibly snowflaked or graph) distance.
pub fn space_to_document<T: Scalar>(space: &MetricMeasureSpace<T>) -> SpaceDocument {
    let n = space.len();
    SpaceDocument {
        n,
        points: None,
        dist: Some(DistTable::Rows(
            (0..n).map(|i| (0..i).map(|j| space.d(i, j).as_f64()).collect()).collect(),
        )),
        weights: space.weights().iter().map(|w| w.as_f64()).collect(),
        a0: Some(space.a0()),
        label: space.label().to_string(),
    }
}

pub fn parse_space<T: Scalar>(text: &str) -> Result<MetricMeasureSpace<T>> {
    let doc: SpaceDocument = serde_json::from_str(text).map_err(|e| Error::Format(format!("space document: {e}")))?;
    space_from_document(&doc)
}

pub fn load_space<T: Scalar>(path: &Path) -> Result<MetricMeasureSpace<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_space(&text)
}
