use crate::error::{ensure_finite, Error, Result};

/// Local minima of a magnitude trace (dB) with at least `prominence` dB,
/// deepest first, at most `max_dips`. Returns their frequencies.
///
/// A dip's prominence is the smaller of the highest levels reached on each
/// side before the trace drops below the dip (or ends), minus the dip level.
/// Minima at the trace edges are not reported; flat bottoms report their
/// midpoint.
pub fn extract_dips(trace: &[(f64, f64)], prominence: f64, max_dips: usize) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::invalid("trace", "empty trace"));
    }
    if !(prominence > 0.0) {
        return Err(Error::invalid("prominence", "must be > 0"));
    }
    for (i, &(f, m)) in trace.iter().enumerate() {
        ensure_finite(&format!("trace[{i}].freq"), f)?;
        ensure_finite(&format!("trace[{i}].mag"), m)?;
        if i > 0 && f < trace[i - 1].0 {
            return Err(Error::invalid("trace", "frequencies must be sorted ascending"));
        }
    }

    let mag: Vec<f64> = trace.iter().map(|p| p.1).collect();
    let n = mag.len();
    let mut found: Vec<(f64, f64)> = Vec::new(); // (prominence, freq)
    let mut i = 1;
    while i + 1 < n {
        if mag[i] < mag[i - 1] {
            let mut j = i;
            while j + 1 < n && mag[j + 1] == mag[i] {
                j += 1;
            }
            if j + 1 < n && mag[j + 1] > mag[i] {
                let level = mag[i];
                let left = mag[..i]
                    .iter()
                    .rev()
                    .take_while(|&&m| m >= level)
                    .fold(f64::NEG_INFINITY, |a, &m| a.max(m));
                let right = mag[j + 1..]
                    .iter()
                    .take_while(|&&m| m >= level)
                    .fold(f64::NEG_INFINITY, |a, &m| a.max(m));
                let prom = left.min(right) - level;
                if prom >= prominence {
                    let mid = (i + j) / 2;
                    let freq = if (i + j) % 2 == 0 {
                        trace[mid].0
                    } else {
                        0.5 * (trace[mid].0 + trace[mid + 1].0)
                    };
                    found.push((prom, freq));
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(found.into_iter().take(max_dips).map(|(_, f)| f).collect())
}

/// Parses a `freq_ghz,mag_db` trace CSV (header required).
pub fn parse_trace_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize);
        if rec.len() != 2 {
            return Err(Error::parse(line, format!("expected 2 columns, found {}", rec.len())));
        }
        let f: f64 = rec[0]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad frequency `{}`", &rec[0])))?;
        let m: f64 = rec[1]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad magnitude `{}`", &rec[1])))?;
        out.push((f, m));
    }
    Ok(out)
}
