//! CSV files: a `# manifest=...` reference line, a header, then records.
//!
//! Floats are written with 17 significant digits so that reading a file back
//! reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use metastep_core::meta::{MetaState, MetaTransition};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().with_context(|| format!("not a number: {s:?}"))
}

/// A CSV file under construction.
pub struct CsvOut {
    inner: csv::Writer<BufWriter<File>>,
}

impl std::fmt::Debug for CsvOut {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CsvOut").finish_non_exhaustive()
    }
}

impl CsvOut {
    pub fn create<S: AsRef<str>>(path: &Path, manifest_ref: &str, header: &[S]) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "# manifest={manifest_ref}")?;
        let mut inner = csv::Writer::from_writer(buf);
        inner.write_record(header.iter().map(|h| h.as_ref()))?;
        Ok(Self { inner })
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<()> {
        self.inner.write_record(fields.iter().map(|f| f.as_ref()))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Header and records of a CSV written by [`CsvOut`].
pub fn read(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let records = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("reading {}", path.display()))?;
    Ok((header, records))
}

/// Long-format results table `run,step,metric,value`.
pub const LONG_HEADER: [&str; 4] = ["run", "step", "metric", "value"];

fn state_columns(prefix: &str, p: usize, c: usize) -> Vec<String> {
    let mut cols = Vec::with_capacity(2 * p + c);
    cols.extend((0..p).map(|i| format!("{prefix}theta_{i}")));
    cols.extend((0..p).map(|i| format!("{prefix}grad_{i}")));
    cols.extend((0..c).map(|i| format!("{prefix}omega_{i}")));
    cols
}

pub fn dataset_header(param_len: usize, context_len: usize) -> Vec<String> {
    let mut h = vec!["episode_id".to_string(), "step_id".to_string()];
    h.extend(state_columns("", param_len, context_len));
    h.push("h".into());
    h.push("l".into());
    h.extend(state_columns("next_", param_len, context_len));
    h.push("j_before".into());
    h.push("j_after".into());
    h
}

fn push_state(out: &mut Vec<String>, s: &MetaState) {
    out.extend(s.theta.iter().chain(&s.nat_grad).chain(&s.context).map(|v| fmt_f64(*v)));
}

pub fn write_dataset(path: &Path, manifest_ref: &str, rows: &[MetaTransition]) -> Result<()> {
    let first = rows.first().context("refusing to write an empty dataset")?;
    let (p, c) = (first.x.theta.len(), first.x.context.len());
    let mut out = CsvOut::create(path, manifest_ref, &dataset_header(p, c))?;
    let mut fields = Vec::new();
    for r in rows {
        fields.clear();
        fields.push(r.episode_id.to_string());
        fields.push(r.step_id.to_string());
        push_state(&mut fields, &r.x);
        fields.push(fmt_f64(r.h));
        fields.push(fmt_f64(r.l));
        push_state(&mut fields, &r.x_next);
        fields.push(fmt_f64(r.j_before));
        fields.push(fmt_f64(r.j_after));
        out.row(&fields)?;
    }
    out.finish()
}

pub fn read_dataset(path: &Path) -> Result<Vec<MetaTransition>> {
    let (header, records) = read(path)?;
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (p, c) = (count("theta_"), count("omega_"));
    if header != dataset_header(p, c) {
        bail!("{} does not have the dataset column layout", path.display());
    }
    let state = |vals: &[f64]| MetaState {
        theta: vals[..p].to_vec(),
        nat_grad: vals[p..2 * p].to_vec(),
        context: vals[2 * p..2 * p + c].to_vec(),
    };
    let s = 2 * p + c;
    records
        .iter()
        .map(|rec| {
            let id = |i: usize| -> Result<u64> { Ok(rec[i].parse()?) };
            let vals = rec.iter().skip(2).map(parse_f64).collect::<Result<Vec<f64>>>()?;
            Ok(MetaTransition {
                episode_id: id(0)?,
                step_id: id(1)?,
                x: state(&vals[..s]),
                h: vals[s],
                l: vals[s + 1],
                x_next: state(&vals[s + 2..2 * s + 2]),
                j_before: vals[2 * s + 2],
                j_after: vals[2 * s + 3],
            })
        })
        .collect()
}
