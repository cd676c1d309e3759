//! Metrics CSV files.
//!
//! Floats are written with 17 significant digits so that parsing them back
//! yields the same bits. Missing metrics are empty fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::ComparisonRow;
use crate::metrics::{MetricsRow, TrialId};

pub const HEADER: &str = "trial,comm_round,samples,objective_error,msbe,consensus_error,q_norm";

pub const COMPARISON_HEADER: &str =
    "name,kind,beta,local_steps,batch_size,period,comm_rounds,samples,completed,diverged,objective_error,msbe,consensus_error,q_norm";

fn float(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        write!(out, "{v:.16e}").unwrap();
    }
}

pub fn format_rows<'a>(rows: impl IntoIterator<Item = &'a MetricsRow>) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{},", r.trial, r.comm_round, r.samples).unwrap();
        float(&mut out, r.objective_error);
        out.push(',');
        float(&mut out, r.msbe);
        out.push(',');
        float(&mut out, r.consensus_error);
        out.push(',');
        float(&mut out, r.q_norm);
        out.push('\n');
    }
    out
}

pub fn write_csv<'a>(rows: impl IntoIterator<Item = &'a MetricsRow>, path: &Path) -> Result<()> {
    write_text(path, &format_rows(rows))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_rows(text: &str, path: &Path) -> Result<Vec<MetricsRow>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        Some(h) => return Err(err(1, format!("unexpected header {h:?}"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err(n, format!("expected 7 fields, got {}", f.len())));
        }
        let trial = if f[0] == "mean" {
            TrialId::Mean
        } else {
            TrialId::Trial(f[0].parse().map_err(|_| err(n, format!("bad trial {:?}", f[0])))?)
        };
        let int = |s: &str| s.parse::<usize>().map_err(|_| err(n, format!("bad integer {s:?}")));
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|_| err(n, format!("bad number {s:?}")))
            }
        };
        rows.push(MetricsRow {
            trial,
            comm_round: int(f[1])?,
            samples: int(f[2])?,
            objective_error: opt(f[3])?,
            msbe: opt(f[4])?,
            consensus_error: opt(f[5])?,
            q_norm: opt(f[6])?,
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rows(&text, path)
}

pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for r in rows {
        let kind = serde_json::to_value(r.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        write!(
            out,
            "{},{},{:.16e},{},{},{},{},{},{},{},",
            r.name, kind, r.beta, r.local_steps, r.batch_size, r.period, r.comm_rounds, r.samples, r.completed, r.diverged
        )
        .unwrap();
        float(&mut out, r.objective_error);
        out.push(',');
        float(&mut out, r.msbe);
        out.push(',');
        float(&mut out, r.consensus_error);
        out.push(',');
        float(&mut out, r.q_norm);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(v: f64) -> MetricsRow {
        MetricsRow {
            trial: TrialId::Trial(3),
            comm_round: 2,
            samples: 100,
            objective_error: Some(v),
            msbe: None,
            consensus_error: Some(0.1),
            q_norm: Some(1e-300),
        }
    }

    #[test]
    fn empty_and_single() {
        assert_eq!(format_rows(&[]), format!("{HEADER}\n"));
        let text = format_rows(&[row(0.25)]);
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains('\r'));
        assert_eq!(parse_rows(&text, Path::new("x")).unwrap(), vec![row(0.25)]);
    }

    #[test]
    fn mean_rows_and_bad_input() {
        let mut r = row(1.0);
        r.trial = TrialId::Mean;
        let text = format_rows(&[r.clone()]);
        assert!(text.lines().nth(1).unwrap().starts_with("mean,2,100,"));
        assert_eq!(parse_rows(&text, Path::new("x")).unwrap()[0], r);
        assert!(parse_rows("a,b\n", Path::new("x")).is_err());
        assert!(parse_rows(&format!("{HEADER}\n1,2\n"), Path::new("x")).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        write_csv(&[row(3.5)], &p).unwrap();
        assert_eq!(read_csv(&p).unwrap(), vec![row(3.5)]);
        assert!(matches!(read_csv(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let rows = vec![row(v)];
            let back = parse_rows(&format_rows(&rows), Path::new("x")).unwrap();
            prop_assert_eq!(back[0].objective_error.unwrap().to_bits(), v.to_bits());
        }
    }
}
