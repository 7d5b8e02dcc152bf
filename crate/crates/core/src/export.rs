//! CSV files exchanged with plotting tools and between pipeline stages.
//!
//! | file           | columns                                                    |
//! |----------------|------------------------------------------------------------|
//! | `front.csv`    | `pref_0..pref_{T-1}, loss_0..loss_{T-1}[, metric_0..]`     |
//! | `routing.csv`  | `layer, expert, pref_id, pref_0..pref_{T-1}, weight`       |
//! | `sweep.csv`    | `lambda, method, mean_loss, loss_0..loss_{T-1}`            |
//! | `trainlog.csv` | `step, r_0..r_{T-1}, loss_0..loss_{T-1}, aggregate, non_uniformity` |
//! | distances      | `task, task_0..task_{T-1}`, one row per task               |
//!
//! Every writer checks each row against its header before writing it. Floats
//! use Rust's shortest round-trip formatting, so files are reproducible.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::moe::RoutingRow;
use crate::pareto::FrontPoint;
use crate::train::TrainLog;

/// A CSV writer bound to a fixed header.
pub struct SchemaWriter<W: Write> {
    header: Vec<String>,
    inner: csv::Writer<W>,
}

impl<W: Write> SchemaWriter<W> {
    pub fn new(out: W, header: Vec<String>) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        inner.write_record(&header)?;
        Ok(Self { header, inner })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        if fields.len() != self.header.len() {
            return Err(Error::Format(format!(
                "row has {} fields but the header `{}` has {}",
                fields.len(),
                self.header.join(","),
                self.header.len()
            )));
        }
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}

fn num(v: f64) -> String {
    v.to_string()
}

pub fn front_header(num_tasks: usize, num_metrics: usize) -> Vec<String> {
    indexed("pref", num_tasks)
        .chain(indexed("loss", num_tasks))
        .chain(indexed("metric", num_metrics))
        .collect()
}

/// Writes front points; points without a preference leave the `pref_*`
/// fields empty.
pub fn write_front<W: Write>(out: W, num_tasks: usize, points: &[FrontPoint]) -> Result<()> {
    let metrics = points.first().and_then(|p| p.metrics.as_ref()).map_or(0, Vec::len);
    let mut w = SchemaWriter::new(out, front_header(num_tasks, metrics))?;
    for p in points {
        let mut row: Vec<String> = match &p.preference {
            Some(r) if r.len() == num_tasks => r.iter().copied().map(num).collect(),
            Some(r) => {
                return Err(Error::Format(format!("preference of length {} in a {num_tasks}-task front", r.len())));
            }
            None => vec![String::new(); num_tasks],
        };
        if p.losses.len() != num_tasks {
            return Err(Error::Format(format!("{} losses in a {num_tasks}-task front", p.losses.len())));
        }
        row.extend(p.losses.iter().copied().map(num));
        let m = p.metrics.as_deref().unwrap_or(&[]);
        if m.len() != metrics {
            return Err(Error::Format("front points disagree on the number of metrics".into()));
        }
        row.extend(m.iter().copied().map(num));
        w.row(&row)?;
    }
    w.finish()
}

fn parse_num(field: &str, line: u64, column: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        detail: format!("column `{column}`: `{field}` is not a number"),
    })
}

fn records<R: Read>(input: R) -> Result<(Vec<String>, Vec<(u64, csv::StringRecord)>)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, detail: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                detail: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push((line, rec));
    }
    Ok((header, rows))
}

/// Reads a `front.csv`, inferring `T` and the metric count from its header.
pub fn read_front<R: Read>(input: R) -> Result<Vec<FrontPoint>> {
    let (header, rows) = records(input)?;
    let t = header.iter().filter(|h| h.starts_with("pref_")).count();
    let m = header.iter().filter(|h| h.starts_with("metric_")).count();
    if t == 0 || header != front_header(t, m) {
        return Err(Error::Parse {
            line: 1,
            detail: format!("unexpected front header `{}`", header.join(",")),
        });
    }
    rows.into_iter()
        .map(|(line, rec)| {
            let pref: Vec<&str> = rec.iter().take(t).collect();
            let preference = if pref.iter().all(|f| f.is_empty()) {
                None
            } else {
                Some(
                    pref.iter()
                        .enumerate()
                        .map(|(i, f)| parse_num(f, line, &header[i]))
                        .collect::<Result<Vec<_>>>()?,
                )
            };
            let vals = |range: std::ops::Range<usize>| {
                range.map(|i| parse_num(&rec[i], line, &header[i])).collect::<Result<Vec<_>>>()
            };
            Ok(FrontPoint {
                preference,
                losses: vals(t..2 * t)?,
                metrics: if m > 0 { Some(vals(2 * t..2 * t + m)?) } else { None },
            })
        })
        .collect()
}

pub fn routing_header(num_tasks: usize) -> Vec<String> {
    ["layer", "expert", "pref_id"]
        .into_iter()
        .map(str::to_string)
        .chain(indexed("pref", num_tasks))
        .chain(std::iter::once("weight".to_string()))
        .collect()
}

pub fn write_routing<W: Write>(out: W, num_tasks: usize, rows: &[RoutingRow]) -> Result<()> {
    let mut w = SchemaWriter::new(out, routing_header(num_tasks))?;
    for r in rows {
        let mut row = vec![r.layer.clone(), r.expert.to_string(), r.pref_id.to_string()];
        row.extend(r.preference.iter().copied().map(num));
        row.push(num(r.weight));
        w.row(&row)?;
    }
    w.finish()
}

/// One λ evaluation of a merge method.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub method: String,
    pub mean_loss: f64,
    pub losses: Vec<f64>,
}

pub fn sweep_header(num_tasks: usize) -> Vec<String> {
    ["lambda", "method", "mean_loss"]
        .into_iter()
        .map(str::to_string)
        .chain(indexed("loss", num_tasks))
        .collect()
}

pub fn write_sweep<W: Write>(out: W, num_tasks: usize, rows: &[SweepRow]) -> Result<()> {
    let mut w = SchemaWriter::new(out, sweep_header(num_tasks))?;
    for r in rows {
        let mut row = vec![num(r.lambda), r.method.clone(), num(r.mean_loss)];
        row.extend(r.losses.iter().copied().map(num));
        w.row(&row)?;
    }
    w.finish()
}

pub fn read_sweep<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let (header, rows) = records(input)?;
    let t = header.iter().filter(|h| h.starts_with("loss_")).count();
    if header != sweep_header(t) {
        return Err(Error::Parse {
            line: 1,
            detail: format!("unexpected sweep header `{}`", header.join(",")),
        });
    }
    rows.into_iter()
        .map(|(line, rec)| {
            Ok(SweepRow {
                lambda: parse_num(&rec[0], line, "lambda")?,
                method: rec[1].to_string(),
                mean_loss: parse_num(&rec[2], line, "mean_loss")?,
                losses: (3..3 + t)
                    .map(|i| parse_num(&rec[i], line, &header[i]))
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect()
}

/// The λ with the smallest mean loss among rows of `method` (all rows when
/// `None`). Ties go to the smaller λ.
pub fn select_lambda<R: Read>(input: R, method: Option<&str>) -> Result<f64> {
    let rows: Vec<SweepRow> = read_sweep(input)?
        .into_iter()
        .filter(|r| method.is_none_or(|m| r.method == m))
        .collect();
    if rows.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least two λ rows{}, found {}",
            method.map(|m| format!(" for `{m}`")).unwrap_or_default(),
            rows.len()
        )));
    }
    let best = rows
        .iter()
        .min_by(|a, b| a.mean_loss.total_cmp(&b.mean_loss).then(a.lambda.total_cmp(&b.lambda)))
        .expect("nonempty");
    Ok(best.lambda)
}

pub fn write_distance_matrix<W: Write>(out: W, names: &[String], matrix: &[Vec<f64>]) -> Result<()> {
    let header = std::iter::once("task".to_string()).chain(names.iter().cloned()).collect();
    let mut w = SchemaWriter::new(out, header)?;
    for (name, row) in names.iter().zip(matrix) {
        let mut fields = vec![name.clone()];
        fields.extend(row.iter().copied().map(num));
        w.row(&fields)?;
    }
    w.finish()
}

pub fn write_trainlog<W: Write>(out: W, log: &TrainLog) -> Result<()> {
    let mut w = SchemaWriter::new(out, TrainLog::header(log.num_tasks))?;
    for rec in &log.records {
        let mut row = vec![rec.step.to_string()];
        row.extend(rec.preference.iter().copied().map(num));
        row.extend(rec.losses.iter().copied().map(num));
        row.push(num(rec.aggregate));
        row.push(num(rec.non_uniformity));
        w.row(&row)?;
    }
    w.finish()
}
