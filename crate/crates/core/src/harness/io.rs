use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::metrics::QuantileTrace;
use crate::refinement::TracePoint;
use crate::weighted_ls::WlsRecord;

/// Seventeen significant digits, so every finite value round-trips; `inf`
/// for infinities.
pub fn format_float(value: f64) -> String {
    if value.is_nan() {
        "nan".to_string()
    } else if value.is_infinite() {
        if value > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{value:.16e}")
    }
}

pub fn parse_float(field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Config(format!("bad number {field:?}: {e}")))
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::Config(e.to_string())
    }
}

fn table<I>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    writer.write_record(header).map_err(csv_error)?;
    for row in rows {
        writer.write_record(&row).map_err(csv_error)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// Long format: one row per recorded step and quantile level.
pub fn refinement_csv(trace: &QuantileTrace) -> Result<String> {
    let rows = trace.steps.iter().enumerate().flat_map(|(i, step)| {
        trace.levels.iter().zip(&trace.values[i]).map(move |(level, value)| {
            vec![
                step.to_string(),
                trace.kn[i].to_string(),
                format_float(*level),
                format_float(*value),
            ]
        })
    });
    table(&["step", "kn", "level", "gamma"], rows)
}

/// One parsed row of a refinement CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinementRow {
    pub step: u64,
    pub kn: u64,
    pub level: f64,
    pub gamma: f64,
}

fn parse_int(field: &str) -> Result<u64> {
    field
        .trim()
        .parse::<u64>()
        .map_err(|e| Error::Config(format!("bad integer {field:?}: {e}")))
}

/// Inverse of [`refinement_csv`].
pub fn read_refinement_csv(text: &str, experiment: &str, method: &str) -> Result<QuantileTrace> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?;
    if header.iter().collect::<Vec<_>>() != ["step", "kn", "level", "gamma"] {
        return Err(Error::Config(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        rows.push(RefinementRow {
            step: parse_int(&record[0])?,
            kn: parse_int(&record[1])?,
            level: parse_float(&record[2])?,
            gamma: parse_float(&record[3])?,
        });
    }
    let mut trace = QuantileTrace {
        experiment: experiment.to_string(),
        method: method.to_string(),
        steps: Vec::new(),
        kn: Vec::new(),
        levels: Vec::new(),
        values: Vec::new(),
    };
    for row in rows {
        if trace.steps.last() != Some(&row.step) {
            trace.steps.push(row.step);
            trace.kn.push(row.kn);
            trace.values.push(Vec::new());
        }
        let values = trace.values.last_mut().unwrap();
        if trace.steps.len() == 1 {
            trace.levels.push(row.level);
        } else if trace.levels.get(values.len()) != Some(&row.level) {
            return Err(Error::Config(format!("levels at step {} differ from the first step", row.step)));
        }
        values.push(row.gamma);
    }
    if trace.values.iter().any(|v| v.len() != trace.levels.len()) {
        return Err(Error::Config("ragged quantile table".into()));
    }
    Ok(trace)
}

/// Unreduced traces, one row per repetition and recorded step.
pub fn repetitions_csv(traces: &[Vec<TracePoint>]) -> Result<String> {
    let rows = traces.iter().enumerate().flat_map(|(rep, trace)| {
        trace
            .iter()
            .map(move |p| vec![rep.to_string(), p.step.to_string(), p.kn.to_string(), format_float(p.gamma)])
    });
    table(&["rep", "step", "kn", "gamma"], rows)
}

pub fn wls_records_csv(records: &[WlsRecord]) -> Result<String> {
    let rows = records.iter().map(|r| {
        vec![
            r.target.label().to_string(),
            r.n.to_string(),
            r.rep.to_string(),
            r.method.to_string(),
            format_float(r.rel_error),
        ]
    });
    table(&["target", "n", "rep", "method", "rel_error"], rows)
}

/// Reduced errors with the sample size in place of the step.
pub fn wls_quantiles_csv(traces: &[QuantileTrace]) -> Result<String> {
    let rows = traces.iter().flat_map(|t| {
        t.steps.iter().enumerate().flat_map(move |(i, n)| {
            t.levels.iter().zip(&t.values[i]).map(move |(level, value)| {
                vec![
                    t.experiment.clone(),
                    t.method.clone(),
                    n.to_string(),
                    format_float(*level),
                    format_float(*value),
                ]
            })
        })
    });
    table(&["target", "method", "n", "level", "rel_error"], rows)
}

pub fn cd_csv(x: &[f64], truth: &[f64], exact: &[f64], refined: &[f64]) -> Result<String> {
    let rows = (0..x.len()).map(|i| {
        vec![
            format_float(x[i]),
            format_float(truth[i]),
            format_float(exact[i]),
            format_float(refined[i]),
        ]
    });
    table(&["x", "f_true", "f_d_exact", "f_d_refined"], rows)
}

/// Per-repetition summary of the refined moment matrices.
pub fn cd_repetitions_csv(rows: &[(u64, u64, f64, f64)]) -> Result<String> {
    let rows = rows.iter().enumerate().map(|(rep, (step, kn, error, gamma))| {
        vec![
            rep.to_string(),
            step.to_string(),
            kn.to_string(),
            format_float(*error),
            format_float(*gamma),
        ]
    });
    table(&["rep", "step", "kn", "max_error", "gamma"], rows)
}

/// Matrix of values with rows indexed by `x_grid`; the header carries
/// `y_grid` after a leading `x`.
pub fn write_levels_csv(x_grid: &[f64], y_grid: &[f64], values: &DMatrix<f64>) -> Result<String> {
    if values.shape() != (x_grid.len(), y_grid.len()) {
        return Err(Error::InvalidShape(format!(
            "level matrix {:?} does not match grids {} x {}",
            values.shape(),
            x_grid.len(),
            y_grid.len()
        )));
    }
    let header: Vec<String> = std::iter::once("x".to_string())
        .chain(y_grid.iter().map(|&y| format_float(y)))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = x_grid.iter().enumerate().map(|(i, &x)| {
        std::iter::once(format_float(x))
            .chain(values.row(i).iter().map(|&v| format_float(v)))
            .collect()
    });
    table(&header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 5e-324, 1.7976931348623157e308, -2.5, 0.0] {
            assert_eq!(parse_float(&format_float(v)).unwrap(), v);
        }
        assert_eq!(format_float(f64::INFINITY), "inf");
        assert_eq!(parse_float("inf").unwrap(), f64::INFINITY);
    }

    #[test]
    fn quantile_table_round_trips() {
        let trace = QuantileTrace {
            experiment: "e".into(),
            method: "m".into(),
            steps: vec![1, 2, 10],
            kn: vec![3, 6, 30],
            levels: vec![0.0, 0.5, 1.0],
            values: vec![
                vec![f64::INFINITY, f64::INFINITY, f64::INFINITY],
                vec![1.0 / 3.0, 2.0, f64::INFINITY],
                vec![1.0, 1.25, 7.1e12],
            ],
        };
        let text = refinement_csv(&trace).unwrap();
        assert!(text.starts_with("step,kn,level,gamma\n1,3,0.0000000000000000e0,inf\n"));
        assert_eq!(read_refinement_csv(&text, "e", "m").unwrap(), trace);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(read_refinement_csv("a,b\n1,2\n", "e", "m").is_err());
    }

    #[test]
    fn level_matrix_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let text = write_levels_csv(&[0.0, 1.0], &[0.0, 0.5, 1.0], &m).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1.0000000000000000e0,4.0000000000000000e0"));
        assert!(write_levels_csv(&[0.0], &[0.0], &m).is_err());
    }
}
