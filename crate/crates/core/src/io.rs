//! CSV sample logs and JSON documents.
//!
//! Bidder indices are 1-based on disk and 0-based in memory. In partial
//! logs the index `k + 1` stands for the planted reserve.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dist::PiecewiseCdf;
use crate::error::{Error, Result};
use crate::sim::{
    AuctionModel, FpObservation, FpSampleSet, PartialFpObservation, PartialSpObservation, PartialWinner,
    SpObservation, SpSampleSet,
};

/// Which observation log a CSV file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleFormat {
    /// `y,z`: winning bid and winner.
    Fp,
    /// `y,w`: second-highest bid and winner.
    Sp,
}

impl SampleFormat {
    fn header(self) -> [&'static str; 2] {
        match self {
            SampleFormat::Fp => ["y", "z"],
            SampleFormat::Sp => ["y", "w"],
        }
    }
}

struct Row {
    line: u64,
    fields: Vec<String>,
}

fn read_rows<R: Read>(reader: R, expected: &[&[&str]]) -> Result<(usize, Vec<Row>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let Some(variant) = expected.iter().position(|h| h.len() == header.len() && h.iter().zip(&header).all(|(a, b)| a == b)) else {
        let want: Vec<String> = expected.iter().map(|h| h.join(",")).collect();
        return Err(Error::Parse { line: 1, message: format!("header `{}`, expected {}", header.join(","), want.join(" or ")) });
    };
    let width = expected[variant].len();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(Error::Parse { line, message: format!("{} fields, expected {width}", rec.len()) });
        }
        rows.push(Row { line, fields: rec.iter().map(str::to_owned).collect() });
    }
    Ok((variant, rows))
}

fn parse_real(row: &Row, col: usize, name: &str) -> Result<f64> {
    let v: f64 = row.fields[col]
        .parse()
        .map_err(|_| Error::Parse { line: row.line, message: format!("{name} = `{}` is not a number", row.fields[col]) })?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Parse { line: row.line, message: format!("{name} = {v} outside [0,1]") });
    }
    Ok(v)
}

/// 1-based index in `1..=max`, returned 0-based.
fn parse_index(row: &Row, col: usize, name: &str, max: Option<usize>) -> Result<usize> {
    let s = &row.fields[col];
    let v: usize =
        s.parse().map_err(|_| Error::Parse { line: row.line, message: format!("{name} = `{s}` is not a positive integer") })?;
    if v == 0 {
        return Err(Error::Parse { line: row.line, message: format!("{name} = 0, indices are 1-based") });
    }
    if let Some(m) = max {
        if v > m {
            return Err(Error::Parse { line: row.line, message: format!("{name} = {v} outside 1..={m}") });
        }
    }
    Ok(v - 1)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// `(y, winner)` pairs; `k` is inferred from the largest index when absent.
fn read_pairs<R: Read>(reader: R, format: SampleFormat, k: Option<usize>) -> Result<(usize, Vec<(f64, usize)>)> {
    let [_, idx] = format.header();
    let (_, rows) = read_rows(reader, &[&format.header()])?;
    let mut out = Vec::with_capacity(rows.len());
    for row in &rows {
        out.push((parse_real(row, 0, "y")?, parse_index(row, 1, idx, k)?));
    }
    let k = match k {
        Some(k) => k,
        None => out.iter().map(|o| o.1 + 1).max().unwrap_or(0).max(2),
    };
    Ok((k, out))
}

pub fn read_fp_samples_from<R: Read>(reader: R, k: Option<usize>) -> Result<FpSampleSet> {
    let (k, pairs) = read_pairs(reader, SampleFormat::Fp, k)?;
    FpSampleSet::new(k, pairs.into_iter().map(|(y, winner)| FpObservation { y, winner }).collect())
}

pub fn read_sp_samples_from<R: Read>(reader: R, k: Option<usize>) -> Result<SpSampleSet> {
    let (k, pairs) = read_pairs(reader, SampleFormat::Sp, k)?;
    SpSampleSet::new(k, pairs.into_iter().map(|(y, winner)| SpObservation { y, winner }).collect())
}

pub fn read_fp_samples(path: &Path, k: Option<usize>) -> Result<FpSampleSet> {
    read_fp_samples_from(open(path)?, k)
}

pub fn read_sp_samples(path: &Path, k: Option<usize>) -> Result<SpSampleSet> {
    read_sp_samples_from(open(path)?, k)
}

fn write_pairs<W: Write>(writer: W, format: SampleFormat, rows: impl Iterator<Item = (f64, usize)>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(format.header())?;
    for (y, i) in rows {
        w.write_record([y.to_string(), (i + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fp_samples_to<W: Write>(writer: W, samples: &FpSampleSet) -> Result<()> {
    write_pairs(writer, SampleFormat::Fp, samples.observations().iter().map(|o| (o.y, o.winner)))
}

pub fn write_sp_samples_to<W: Write>(writer: W, samples: &SpSampleSet) -> Result<()> {
    write_pairs(writer, SampleFormat::Sp, samples.observations().iter().map(|o| (o.y, o.winner)))
}

pub fn write_fp_samples(path: &Path, samples: &FpSampleSet) -> Result<()> {
    write_fp_samples_to(create(path)?, samples)
}

pub fn write_sp_samples(path: &Path, samples: &SpSampleSet) -> Result<()> {
    write_sp_samples_to(create(path)?, samples)
}

fn winner_index(w: PartialWinner, k: usize) -> usize {
    match w {
        PartialWinner::Bidder(i) => i + 1,
        PartialWinner::Reserve => k + 1,
    }
}

fn winner_from(i: usize, k: usize) -> PartialWinner {
    if i == k { PartialWinner::Reserve } else { PartialWinner::Bidder(i) }
}

/// Partial first-price log `r,z`; `z = k + 1` marks a reserve win.
pub fn write_partial_fp_to<W: Write>(writer: W, k: usize, obs: &[PartialFpObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["r", "z"])?;
    for o in obs {
        w.write_record([o.r.to_string(), winner_index(o.winner, k).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Partial second-price log `r,z,q` with `q` in {0, 1}.
pub fn write_partial_sp_to<W: Write>(writer: W, k: usize, obs: &[PartialSpObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["r", "z", "q"])?;
    for o in obs {
        w.write_record([o.r.to_string(), winner_index(o.winner, k).to_string(), u8::from(o.q).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_partial_fp_from<R: Read>(reader: R, k: usize) -> Result<Vec<PartialFpObservation>> {
    let (_, rows) = read_rows(reader, &[&["r", "z"]])?;
    rows.iter()
        .map(|row| Ok(PartialFpObservation { r: parse_real(row, 0, "r")?, winner: winner_from(parse_index(row, 1, "z", Some(k + 1))?, k) }))
        .collect()
}

pub fn read_partial_sp_from<R: Read>(reader: R, k: usize) -> Result<Vec<PartialSpObservation>> {
    let (_, rows) = read_rows(reader, &[&["r", "z", "q"]])?;
    rows.iter()
        .map(|row| {
            let q = match row.fields[2].as_str() {
                "1" | "true" => true,
                "0" | "false" => false,
                s => return Err(Error::Parse { line: row.line, message: format!("q = `{s}` is not 0 or 1") }),
            };
            Ok(PartialSpObservation { r: parse_real(row, 0, "r")?, winner: winner_from(parse_index(row, 1, "z", Some(k + 1))?, k), q })
        })
        .collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<AuctionModel> {
    read_json(path)
}

/// Estimated CDFs plus whatever diagnostics the estimator produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfBundle {
    pub cdfs: Vec<PiecewiseCdf>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub diagnostics: serde_json::Value,
}

pub fn write_cdfs(path: &Path, cdfs: &[PiecewiseCdf], diagnostics: serde_json::Value) -> Result<()> {
    write_json(path, &CdfBundle { cdfs: cdfs.to_vec(), diagnostics })
}

/// Accepts a bundle, a model file (its bid CDFs), a bare list of CDFs, or a single CDF.
pub fn read_cdfs(path: &Path) -> Result<Vec<PiecewiseCdf>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum AnyCdfs {
        Bundle(CdfBundle),
        Model(Box<AuctionModel>),
        List(Vec<PiecewiseCdf>),
        One(PiecewiseCdf),
    }
    let raw: serde_json::Value = read_json(path)?;
    match serde_json::from_value(raw)? {
        AnyCdfs::Bundle(b) => Ok(b.cdfs),
        AnyCdfs::Model(m) => Ok(m.bid_dists().iter().map(|d| d.to_piecewise()).collect()),
        AnyCdfs::List(l) => Ok(l),
        AnyCdfs::One(c) => Ok(vec![c]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_fp, simulate_partial_sp, AuctionModel};

    #[test]
    fn fp_round_trip_is_bit_exact() {
        let s = simulate_fp(&AuctionModel::uniform(3).unwrap(), 500, 9);
        let mut buf = Vec::new();
        write_fp_samples_to(&mut buf, &s).unwrap();
        let back = read_fp_samples_from(buf.as_slice(), Some(3)).unwrap();
        assert_eq!(back.observations(), s.observations());
        assert!(String::from_utf8(buf).unwrap().starts_with("y,z\n"));
    }

    #[test]
    fn zero_index_names_the_line() {
        let csv = "y,z\n0.5,1\n0.25,0\n";
        match read_fp_samples_from(csv.as_bytes(), None) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("1-based"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_and_bad_header() {
        assert!(matches!(read_sp_samples_from("y,w\n0.5,4\n".as_bytes(), Some(3)), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_sp_samples_from("y,z\n0.5,1\n".as_bytes(), None), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_fp_samples_from("y,z\n1.5,1\n".as_bytes(), None), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_fp_samples_from("y,z\nabc,1\n".as_bytes(), None), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn inferred_k() {
        let s = read_sp_samples_from("y,w\n0.5,3\n0.1,1\n".as_bytes(), None).unwrap();
        assert_eq!(s.k(), 3);
        assert_eq!(s.observations()[0].winner, 2);
    }

    #[test]
    fn partial_sp_round_trip() {
        let m = AuctionModel::uniform(2).unwrap();
        let obs = simulate_partial_sp(&m, &[0.1, 0.5, 0.9, 0.99], 2);
        let mut buf = Vec::new();
        write_partial_sp_to(&mut buf, 2, &obs).unwrap();
        assert_eq!(read_partial_sp_from(buf.as_slice(), 2).unwrap(), obs);
        assert!(read_partial_fp_from("r,z\n0.5,4\n".as_bytes(), 2).is_err());
        assert_eq!(read_partial_fp_from("r,z\n0.5,3\n".as_bytes(), 2).unwrap()[0].winner, PartialWinner::Reserve);
    }

    #[test]
    fn cdf_bundle_forms() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let c = PiecewiseCdf::step(vec![0.1, 0.30000000000000004], vec![0.5, 1.0]).unwrap();
        write_cdfs(&p, std::slice::from_ref(&c), serde_json::json!({"n": 3})).unwrap();
        assert_eq!(read_cdfs(&p).unwrap(), vec![c.clone()]);
        write_json(&p, &vec![c.clone()]).unwrap();
        assert_eq!(read_cdfs(&p).unwrap(), vec![c.clone()]);
        write_json(&p, &c).unwrap();
        assert_eq!(read_cdfs(&p).unwrap(), vec![c]);
        write_json(&p, &AuctionModel::uniform(2).unwrap()).unwrap();
        assert_eq!(read_cdfs(&p).unwrap(), vec![PiecewiseCdf::uniform(); 2]);
        assert!(matches!(read_cdfs(&dir.path().join("missing.json")), Err(Error::Io(_))));
    }
}
