//! CSV and JSON artifacts. Floats are written with 17 significant digits so
//! that every value round-trips exactly.

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::PatternSet;
use crate::sampling::{PairSample, SampleBatch};
use crate::study::RateRow;

/// Lossless decimal form of a double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Patterns as an `n x p` table with header `mu_1..mu_p`.
pub fn write_patterns_csv<W: Write>(out: W, xi: &PatternSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((1..=xi.p()).map(|mu| format!("mu_{mu}")))?;
    for i in 0..xi.n() {
        w.write_record(xi.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_patterns_csv<R: Read>(input: R, seed: u64) -> Result<PatternSet> {
    let mut r = csv::Reader::from_reader(input);
    let p = r.headers()?.len();
    let mut entries = Vec::new();
    let mut n = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: rec.len() });
        }
        for field in rec.iter() {
            entries.push(field.trim().parse::<i8>().map_err(|e| Error::Parse(format!("pattern entry {field:?}: {e}")))?);
        }
        n += 1;
    }
    PatternSet::from_rows(n, p, entries, seed)
}

/// Draws or atoms as `chain,draw,w_1..w_k[,prob]`.
pub fn write_batch_csv<W: Write>(out: W, batch: &SampleBatch) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend((1..=batch.k).map(|i| format!("w_{i}")));
    if batch.is_exact() {
        header.push("prob".into());
    }
    w.write_record(&header)?;
    for (r, row) in batch.rows().enumerate() {
        let mut rec = vec![batch.chain[r].to_string(), batch.draw[r].to_string()];
        rec.extend(row.iter().map(|v| fmt_f64(*v)));
        if let Some(p) = &batch.weights {
            rec.push(fmt_f64(p[r]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a batch CSV: `(chain, draw, w, prob)`.
pub type BatchRecord = (u32, u64, Vec<f64>, Option<f64>);

pub fn read_batch_csv<R: Read>(input: R) -> Result<Vec<BatchRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let has_prob = headers.iter().next_back() == Some("prob");
    let k = headers.len() - 2 - usize::from(has_prob);
    let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let chain = rec[0].parse().map_err(|e| Error::Parse(format!("chain: {e}")))?;
        let draw = rec[1].parse().map_err(|e| Error::Parse(format!("draw: {e}")))?;
        let w = (0..k).map(|i| parse(&rec[2 + i])).collect::<Result<Vec<_>>>()?;
        let prob = if has_prob { Some(parse(&rec[2 + k])?) } else { None };
        out.push((chain, draw, w, prob));
    }
    Ok(out)
}

/// Exchangeable pairs as `index,site,new_spin,w_1..w_k,w_prime_1..w_prime_k,delta_bound_ok`.
pub fn write_pairs_csv<W: Write>(out: W, pairs: &[PairSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let k = pairs.first().map_or(0, |p| p.w.len());
    let mut header = vec!["index".to_string(), "site".to_string(), "new_spin".to_string()];
    header.extend((1..=k).map(|i| format!("w_{i}")));
    header.extend((1..=k).map(|i| format!("w_prime_{i}")));
    header.push("delta_bound_ok".into());
    w.write_record(&header)?;
    for (r, pair) in pairs.iter().enumerate() {
        let mut rec = vec![r.to_string(), pair.site.to_string(), pair.new_spin.to_string()];
        rec.extend(pair.w.iter().chain(&pair.w_prime).map(|v| fmt_f64(*v)));
        rec.push(pair.delta_bound_ok.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub const RATE_HEADER: [&str; 10] = ["n", "p", "beta", "h", "family", "g_id", "distance", "se", "bound", "a_constant"];

/// Rate-study rows; `bound` and `a_constant` are empty when undefined.
pub fn write_rate_csv<W: Write>(out: W, p: usize, beta: f64, h: f64, rows: &[RateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RATE_HEADER)?;
    for row in rows {
        w.write_record([
            row.n.to_string(),
            p.to_string(),
            fmt_f64(beta),
            fmt_f64(h),
            row.family.name().to_string(),
            row.g_id.clone(),
            fmt_f64(row.distance),
            fmt_f64(row.se),
            fmt_opt(row.bound),
            fmt_opt(row.a_constant),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON followed by a newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_energy::CenteringResult;
    use crate::model::ModelParams;
    use crate::sampling::enumerate_distribution;

    #[test]
    fn patterns_round_trip() {
        let xi = PatternSet::generate(9, 3, 12).unwrap();
        let mut buf = Vec::new();
        write_patterns_csv(&mut buf, &xi).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("mu_1,mu_2,mu_3\n"));
        let back = read_patterns_csv(buf.as_slice(), 12).unwrap();
        assert_eq!(back, xi);
        assert!(read_patterns_csv("mu_1\n2\n".as_bytes(), 0).is_err());
    }

    #[test]
    fn batch_values_round_trip_exactly() {
        let xi = PatternSet::generate(7, 2, 1).unwrap();
        let pr = ModelParams::unprojected(7, 2, 0.0, 0.0).unwrap();
        let mut c = CenteringResult::at_origin(2);
        c.x_center = vec![0.1 / 3.0, -2.0f64.sqrt() / 7.0];
        let batch = enumerate_distribution(&xi, &pr, &c).unwrap();
        let mut buf = Vec::new();
        write_batch_csv(&mut buf, &batch).unwrap();
        let rows = read_batch_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), batch.len());
        for (r, (_, draw, w, prob)) in rows.iter().enumerate() {
            assert_eq!(*draw, r as u64);
            assert_eq!(w.as_slice(), batch.row(r));
            assert_eq!(prob.unwrap(), batch.weights.as_ref().unwrap()[r]);
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
