//! Training metrics rows and their CSV form.

use std::fs;
use std::path::Path;

use crate::error::Error;

pub const METRICS_HEADER: &str = "step,mean_reward,hit_rate,fmt_rate,kl,loss";

/// One logged training step. Reward-related fields are absent for
/// supervised steps and render as empty CSV cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub mean_reward: Option<f64>,
    pub hit_rate: Option<f64>,
    pub fmt_rate: Option<f64>,
    pub kl: Option<f64>,
    pub loss: f64,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<(), Error> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step,
            cell(r.mean_reward),
            cell(r.hit_rate),
            cell(r.fmt_rate),
            cell(r.kl),
            r.loss
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_cell(s: &str, line: usize) -> Result<Option<f64>, Error> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::MalformedLine {
        line,
        message: format!("bad number {s:?}"),
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, Error> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != METRICS_HEADER {
                return Err(Error::MalformedLine {
                    line: 1,
                    message: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(Error::MalformedLine {
                line: i + 1,
                message: format!("expected 6 cells, got {}", cells.len()),
            });
        }
        rows.push(MetricsRow {
            step: cells[0].parse().map_err(|_| Error::MalformedLine {
                line: i + 1,
                message: format!("bad step {:?}", cells[0]),
            })?,
            mean_reward: parse_cell(cells[1], i + 1)?,
            hit_rate: parse_cell(cells[2], i + 1)?,
            fmt_rate: parse_cell(cells[3], i + 1)?,
            kl: parse_cell(cells[4], i + 1)?,
            loss: cells[5].parse().map_err(|_| Error::MalformedLine {
                line: i + 1,
                message: format!("bad loss {:?}", cells[5]),
            })?,
        });
    }
    Ok(rows)
}
