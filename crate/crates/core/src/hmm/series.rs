use crate::error::{Error, Result};
use crate::numfmt::sig9;
use crate::scattering::ScatteringMatrix;

/// Default sample interval, seconds.
pub const DEFAULT_DT: f64 = 30e-6;

/// Number of real components in a flattened 3x3 complex S-matrix.
pub const SMATRIX_DIM: usize = 18;

/// Equally spaced samples of fixed dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    dt: f64,
    dim: usize,
    data: Vec<f64>,
}

/// `re11,im11,re12,...,im33`.
pub fn smatrix_columns() -> Vec<String> {
    let mut cols = Vec::with_capacity(SMATRIX_DIM);
    for i in 1..=3 {
        for j in 1..=3 {
            cols.push(format!("re{i}{j}"));
            cols.push(format!("im{i}{j}"));
        }
    }
    cols
}

impl TimeSeries {
    pub fn new(dt: f64, samples: &[Vec<f64>]) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.len());
        let mut data = Vec::with_capacity(dim * samples.len());
        for (t, s) in samples.iter().enumerate() {
            if s.len() != dim {
                return Err(Error::invalid(
                    format!("samples[{t}]"),
                    format!("expected {dim} components, found {}", s.len()),
                ));
            }
            data.extend_from_slice(s);
        }
        Self::from_flat(dt, dim, data)
    }

    pub fn from_flat(dt: f64, dim: usize, data: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", "sample interval must be positive"));
        }
        if dim == 0 {
            return Err(Error::invalid("samples", "dimension must be at least 1"));
        }
        if data.len() % dim != 0 {
            return Err(Error::invalid("samples", "data length is not a multiple of dim"));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("samples[{}]", i / dim), "non-finite component"));
        }
        Ok(Self { dt, dim, data })
    }

    /// Flattens each matrix as `(re, im)` pairs in row-major entry order.
    pub fn from_smatrices(dt: f64, matrices: &[ScatteringMatrix]) -> Result<Self> {
        let mut data = Vec::with_capacity(matrices.len() * SMATRIX_DIM);
        for m in matrices {
            for i in 0..3 {
                for j in 0..3 {
                    let z = m.entries[(i, j)];
                    data.push(z.re);
                    data.push(z.im);
                }
            }
        }
        Self::from_flat(dt, SMATRIX_DIM, data)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Per-component population variance averaged over components.
    pub fn mean_variance(&self) -> f64 {
        let n = self.len() as f64;
        if self.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for d in 0..self.dim {
            let mean = self.samples().map(|s| s[d]).sum::<f64>() / n;
            total += self.samples().map(|s| (s[d] - mean).powi(2)).sum::<f64>() / n;
        }
        total / self.dim as f64
    }

    /// A `# dt=<seconds>` line, a header, then one sample per row.
    pub fn to_csv(&self) -> String {
        let header = if self.dim == SMATRIX_DIM {
            smatrix_columns()
        } else {
            (1..=self.dim).map(|d| format!("x{d}")).collect()
        };
        let mut out = format!("# dt={}\n{}\n", self.dt, header.join(","));
        for s in self.samples() {
            let row: Vec<String> = s.iter().map(|&x| sig9(x)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut dt = None;
        let mut body_start = 0;
        let mut line_no = 0;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                break;
            }
            line_no += 1;
            body_start += line.len();
            if let Some(rest) = trimmed.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("dt=") {
                    let v: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::parse(Some(line_no), format!("bad dt `{}`", v.trim())))?;
                    dt = Some(v);
                }
            }
        }
        let dt = dt.ok_or_else(|| Error::parse(None, "missing `# dt=<seconds>` metadata line"))?;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text[body_start..].as_bytes());
        let dim = rdr.headers()?.len();
        if dim == 0 {
            return Err(Error::parse(Some(line_no + 1), "missing header row"));
        }
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize + line_no);
            if rec.len() != dim {
                return Err(Error::parse(
                    line,
                    format!("expected {dim} columns, found {}", rec.len()),
                ));
            }
            for field in rec.iter() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad number `{field}`")))?;
                if !v.is_finite() {
                    return Err(Error::parse(line, "non-finite value"));
                }
                data.push(v);
            }
        }
        if data.is_empty() {
            return Err(Error::parse(None, "time series has no samples"));
        }
        Self::from_flat(dt, dim, data).map_err(|e| Error::parse(None, e.to_string()))
    }
}
