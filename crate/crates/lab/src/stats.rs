use serde::{Deserialize, Serialize};

/// Summary of a set of positive ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub geo_mean: f64,
    /// `max / min`.
    pub spread: f64,
}

pub fn band(v: &[f64]) -> Band {
    if v.is_empty() {
        return Band {
            count: 0,
            min: f64::NAN,
            median: f64::NAN,
            max: f64::NAN,
            geo_mean: f64::NAN,
            spread: f64::NAN,
        };
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let geo_mean = (s.iter().map(|x| x.ln()).sum::<f64>() / n as f64).exp();
    Band {
        count: n,
        min: s[0],
        median,
        max: s[n - 1],
        geo_mean,
        spread: s[n - 1] / s[0],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// An inequality or identity that must hold with zero violations.
    Exact,
    /// A measured constant compared with a configured cap.
    Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub name: String,
    pub kind: RowKind,
    pub checked: usize,
    /// Exact rows: failed checks. Band rows: 0 or 1.
    pub violations: usize,
    pub min: f64,
    pub max: f64,
    /// The value compared with `cap` (band rows).
    pub statistic: f64,
    pub cap: Option<f64>,
    pub pass: bool,
    pub note: String,
}

impl SuiteRow {
    pub fn exact(name: &str, checked: usize, violations: usize, min: f64, max: f64, note: impl Into<String>) -> Self {
        SuiteRow {
            name: name.into(),
            kind: RowKind::Exact,
            checked,
            violations,
            min,
            max,
            statistic: violations as f64,
            cap: None,
            pass: violations == 0 && checked > 0,
            note: note.into(),
        }
    }

    pub fn band(name: &str, values: &[f64], statistic: f64, cap: f64, note: impl Into<String>) -> Self {
        let b = band(values);
        let pass = statistic.is_finite() && statistic <= cap && !values.is_empty();
        SuiteRow {
            name: name.into(),
            kind: RowKind::Band,
            checked: values.len(),
            violations: usize::from(!pass),
            min: b.min,
            max: b.max,
            statistic,
            cap: Some(cap),
            pass,
            note: note.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub n: usize,
    pub rows: Vec<SuiteRow>,
}

impl SuiteReport {
    pub fn exact_pass(&self) -> bool {
        self.rows.iter().filter(|r| r.kind == RowKind::Exact).all(|r| r.pass)
    }

    pub fn bands_pass(&self) -> bool {
        self.rows.iter().filter(|r| r.kind == RowKind::Band).all(|r| r.pass)
    }

    pub fn row(&self, name: &str) -> Option<&SuiteRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn table(&self) -> crate::table::Table {
        let mut t = crate::table::Table::new(&[
            "name", "kind", "checked", "violations", "min", "max", "statistic", "cap", "pass", "note",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.name.clone().into(),
                match r.kind {
                    RowKind::Exact => "exact",
                    RowKind::Band => "band",
                }
                .into(),
                r.checked.into(),
                r.violations.into(),
                r.min.into(),
                r.max.into(),
                r.statistic.into(),
                r.cap.into(),
                r.pass.into(),
                r.note.clone().into(),
            ]);
        }
        t
    }
}
