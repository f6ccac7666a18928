use std::io::Write;

use crate::error::{Error, Result};

/// One measured run inside a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub wall_time_ms: f64,
    /// Values for the report's extra columns, in order.
    pub values: Vec<String>,
}

/// A counter value captured when the benchmark finished.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterSample {
    pub name: String,
    pub value: i64,
    pub sampled_at_ns: u64,
}

/// Result of a benchmark or demo. Serialises to CSV with the header
/// `benchmark,run,wall_time_ms,<columns...>`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchmarkReport {
    pub benchmark: String,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub counters: Vec<CounterSample>,
}

const FIXED: [&str; 3] = ["benchmark", "run", "wall_time_ms"];

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

impl BenchmarkReport {
    pub fn new(benchmark: &str, columns: &[&str]) -> Self {
        BenchmarkReport {
            benchmark: benchmark.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Default::default()
        }
    }

    /// Adds a row; the wall time is kept to microsecond resolution.
    pub fn push(&mut self, run: &str, wall_time_ms: f64, values: Vec<String>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(ReportRow {
            run: run.to_string(),
            wall_time_ms: (wall_time_ms * 1e3).round() / 1e3,
            values,
        });
    }

    /// Looks up a cell by run label and column name.
    pub fn value(&self, run: &str, column: &str) -> Option<&str> {
        let c = self.columns.iter().position(|x| x == column)?;
        let row = self.rows.iter().find(|r| r.run == run)?;
        row.values.get(c).map(String::as_str)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let header: Vec<&str> = FIXED.iter().copied().chain(self.columns.iter().map(String::as_str)).collect();
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![self.benchmark.clone(), r.run.clone(), r.wall_time_ms.to_string()];
            rec.extend(r.values.iter().cloned());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Parses the table written by [`BenchmarkReport::to_csv`]. The counter
    /// snapshot is not part of that table and comes back empty.
    pub fn from_csv(text: &str) -> Result<BenchmarkReport> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        if header.len() < FIXED.len() || header.iter().zip(FIXED).any(|(a, b)| a != b) {
            return Err(Error::InvalidArgument(format!("unexpected header {header:?}")));
        }
        let mut report = BenchmarkReport {
            columns: header.iter().skip(FIXED.len()).map(str::to_string).collect(),
            ..Default::default()
        };
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            if report.rows.is_empty() {
                report.benchmark = rec[0].to_string();
            } else if rec[0] != report.benchmark {
                return Err(Error::InvalidArgument("rows from more than one benchmark".into()));
            }
            let wall_time_ms = rec[2]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("wall_time_ms {:?}: {e}", &rec[2])))?;
            report.rows.push(ReportRow {
                run: rec[1].to_string(),
                wall_time_ms,
                values: rec.iter().skip(FIXED.len()).map(str::to_string).collect(),
            });
        }
        Ok(report)
    }

    /// The counter snapshot as `name,value,sampled_at_ns` CSV.
    pub fn counters_csv(&self) -> String {
        counters_to_csv(&self.counters)
    }
}

pub fn counters_to_csv(samples: &[CounterSample]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["name", "value", "sampled_at_ns"]).expect("in-memory write");
    for s in samples {
        w.write_record([s.name.clone(), s.value.to_string(), s.sampled_at_ns.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_rows() {
        let mut r = BenchmarkReport::new("fib", &["n", "value"]);
        r.push("0", 1.5, vec!["10".into(), "55".into()]);
        assert_eq!(r.to_csv(), "benchmark,run,wall_time_ms,n,value\nfib,0,1.5,10,55\n");
        assert_eq!(r.value("0", "value"), Some("55"));
        assert_eq!(r.value("1", "value"), None);
    }

    #[test]
    fn counter_csv_layout() {
        let s = vec![CounterSample {
            name: "/a/locality#0/b/cumulative".into(),
            value: -3,
            sampled_at_ns: 17,
        }];
        assert_eq!(counters_to_csv(&s), "name,value,sampled_at_ns\n/a/locality#0/b/cumulative,-3,17\n");
    }

    #[test]
    fn rejects_foreign_tables() {
        assert!(BenchmarkReport::from_csv("a,b,c\n1,2,3\n").is_err());
        assert!(BenchmarkReport::from_csv("benchmark,run,wall_time_ms\nx,0,fast\n").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trips(
            name in "[a-z]{1,8}",
            cols in proptest::collection::vec("[a-z_]{1,6}", 0..4),
            rows in proptest::collection::vec(
                (".{0,6}", any::<f64>().prop_filter("finite", |f| f.is_finite()), proptest::collection::vec(".{0,8}", 4)),
                0..6,
            ),
        ) {
            let mut r = BenchmarkReport::new(&name, &cols.iter().map(String::as_str).collect::<Vec<_>>());
            for (run, t, vals) in rows {
                r.push(&run, t, vals.into_iter().take(cols.len()).collect());
            }
            let back = BenchmarkReport::from_csv(&r.to_csv()).unwrap();
            if r.rows.is_empty() {
                prop_assert_eq!(&back.columns, &r.columns);
                prop_assert!(back.rows.is_empty());
            } else {
                prop_assert_eq!(back, r);
            }
        }
    }
}
