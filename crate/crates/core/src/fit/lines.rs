use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{SweepAxis, SweepTable};

/// Observed dip frequencies grouped by axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedLines {
    pub axis: SweepAxis,
    pub points: Vec<ObservedPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedPoint {
    /// Flux (radians) or applied gate charge (Cooper pairs).
    pub axis_value: f64,
    /// GHz; the number of dips may differ between points.
    pub freqs: Vec<f64>,
}

impl ObservedLines {
    /// Groups `(axis_value, freq)` pairs by exact axis value, keeping first-seen order.
    pub fn from_pairs(axis: SweepAxis, pairs: &[(f64, f64)]) -> Self {
        let mut points: Vec<ObservedPoint> = Vec::new();
        for &(v, f) in pairs {
            match points.iter_mut().find(|p| p.axis_value.to_bits() == v.to_bits()) {
                Some(p) => p.freqs.push(f),
                None => points.push(ObservedPoint {
                    axis_value: v,
                    freqs: vec![f],
                }),
            }
        }
        Self { axis, points }
    }

    /// Every predicted line in `table` as an observed dip.
    pub fn from_table(table: &SweepTable) -> Self {
        let pairs: Vec<(f64, f64)> = table
            .rows
            .iter()
            .flat_map(|r| r.frequencies.iter().map(move |&f| (r.value, f)))
            .collect();
        Self::from_pairs(table.axis, &pairs)
    }

    /// Total number of dips.
    pub fn len(&self) -> usize {
        self.points.iter().map(|p| p.freqs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parses `axis_value,freq_ghz` CSV, one dip per row, header required.
    pub fn from_csv(axis: SweepAxis, text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 {
            return Err(Error::parse(
                Some(1),
                format!("expected header `axis_value,freq_ghz`, found {} columns", headers.len()),
            ));
        }
        let mut pairs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize);
            if rec.len() != 2 {
                return Err(Error::parse(line, format!("expected 2 columns, found {}", rec.len())));
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad {what} `{s}`")))?;
                if !v.is_finite() {
                    return Err(Error::parse(line, format!("non-finite {what}")));
                }
                Ok(v)
            };
            pairs.push((parse(&rec[0], "axis value")?, parse(&rec[1], "frequency")?));
        }
        if pairs.is_empty() {
            return Err(Error::parse(None, "no observed dips"));
        }
        Ok(Self::from_pairs(axis, &pairs))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis_value,freq_ghz\n");
        for p in &self.points {
            for f in &p.freqs {
                s.push_str(&format!("{},{}\n", p.axis_value, f));
            }
        }
        s
    }
}
