//! Tab-separated metrics files and run-to-run comparison.
//!
//! ```text
//! schema   progfed-metrics 1
//! columns  round stage clients loss metric bytes_down bytes_up cum_bytes flops cum_flops alpha q
//! round    ...one row per round...
//! summary  final_metric best_metric bytes_down bytes_up bytes_total flops
//! target   fraction cum_bytes cum_flops
//! ```
//!
//! Missing values are written as `-`. Byte counts are exact decimals and
//! real numbers use the shortest representation that parses back bitwise,
//! so identical runs produce identical files.

use std::fmt::{self, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::federation::RoundMetrics;
use crate::metrics::{bytes_f64, cost_to_target, format_bytes, parse_bytes, Bytes};

pub const SCHEMA: &str = "progfed-metrics";
pub const SCHEMA_VERSION: u32 = 1;
pub const COLUMNS: [&str; 12] = [
    "round",
    "stage",
    "clients",
    "loss",
    "metric",
    "bytes_down",
    "bytes_up",
    "cum_bytes",
    "flops",
    "cum_flops",
    "alpha",
    "q",
];
pub const TARGET_FRACTIONS: [f64; 6] = [0.5, 0.8, 0.9, 0.98, 0.99, 1.0];

/// One parsed `round` row.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub stage: usize,
    pub clients: Vec<usize>,
    pub loss: f64,
    pub metric: Option<f64>,
    pub bytes_down: Bytes,
    pub bytes_up: Bytes,
    pub cum_bytes: Bytes,
    pub flops: u128,
    pub cum_flops: u128,
    pub alpha: Option<f64>,
    pub q: Option<f64>,
}

impl From<&RoundMetrics> for RoundRow {
    fn from(m: &RoundMetrics) -> Self {
        let alignment = m.diagnostics.and_then(|d| d.alignment);
        Self {
            round: m.round,
            stage: m.stage,
            clients: m.clients.clone(),
            loss: m.loss,
            metric: m.metric,
            bytes_down: m.cost.bytes_down,
            bytes_up: m.cost.bytes_up,
            cum_bytes: m.cumulative.bytes(),
            flops: m.cost.flops,
            cum_flops: m.cumulative.flops,
            alpha: alignment.map(|a| a.alpha),
            q: m.diagnostics.and_then(|d| d.q),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub final_metric: Option<f64>,
    pub best_metric: Option<f64>,
    pub bytes_down: Bytes,
    pub bytes_up: Bytes,
    pub flops: u128,
}

impl Summary {
    pub fn bytes_total(&self) -> Bytes {
        self.bytes_down + self.bytes_up
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    pub fraction: f64,
    pub cum_bytes: Option<Bytes>,
    pub cum_flops: Option<u128>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub rounds: Vec<RoundRow>,
    pub summary: Summary,
    pub targets: Vec<TargetRow>,
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl MetricsFile {
    pub fn from_rounds(rounds: &[RoundMetrics]) -> Self {
        let rows: Vec<RoundRow> = rounds.iter().map(RoundRow::from).collect();
        let final_metric = rows.iter().rev().find_map(|r| r.metric);
        let best_metric = best(&rows);
        let mut summary = Summary {
            final_metric,
            best_metric,
            bytes_down: Bytes::default(),
            bytes_up: Bytes::default(),
            flops: 0,
        };
        for r in &rows {
            summary.bytes_down += r.bytes_down;
            summary.bytes_up += r.bytes_up;
            summary.flops += r.flops;
        }
        let targets = TARGET_FRACTIONS
            .iter()
            .map(|&fraction| {
                let (cum_bytes, cum_flops) = match best_metric {
                    Some(b) => (
                        first_reaching(&rows, b, fraction).map(|r| r.cum_bytes),
                        first_reaching(&rows, b, fraction).map(|r| r.cum_flops),
                    ),
                    None => (None, None),
                };
                TargetRow {
                    fraction,
                    cum_bytes,
                    cum_flops,
                }
            })
            .collect();
        Self {
            rounds: rows,
            summary,
            targets,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "schema\t{SCHEMA}\t{SCHEMA_VERSION}");
        let _ = writeln!(out, "columns\t{}", COLUMNS.join("\t"));
        for r in &self.rounds {
            let clients: Vec<String> = r.clients.iter().map(usize::to_string).collect();
            let _ = writeln!(
                out,
                "round\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.round,
                r.stage,
                clients.join(";"),
                r.loss,
                opt(r.metric),
                format_bytes(&r.bytes_down),
                format_bytes(&r.bytes_up),
                format_bytes(&r.cum_bytes),
                r.flops,
                r.cum_flops,
                opt(r.alpha),
                opt(r.q),
            );
        }
        let s = &self.summary;
        let _ = writeln!(
            out,
            "summary\t{}\t{}\t{}\t{}\t{}\t{}",
            opt(s.final_metric),
            opt(s.best_metric),
            format_bytes(&s.bytes_down),
            format_bytes(&s.bytes_up),
            format_bytes(&s.bytes_total()),
            s.flops
        );
        for t in &self.targets {
            let _ = writeln!(
                out,
                "target\t{}\t{}\t{}",
                t.fraction,
                opt(t.cum_bytes.as_ref().map(format_bytes)),
                opt(t.cum_flops)
            );
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|(line, message)| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })
    }

    /// Parses rendered text; errors carry the 1-based line number.
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let expect_header = format!("schema\t{SCHEMA}\t{SCHEMA_VERSION}");
        match lines.next() {
            Some((_, l)) if l == expect_header => {}
            Some((n, l)) => return Err((n, format!("unsupported schema line '{l}'"))),
            None => return Err((1, "empty metrics file".into())),
        }
        let expect_columns = format!("columns\t{}", COLUMNS.join("\t"));
        match lines.next() {
            Some((_, l)) if l == expect_columns => {}
            Some((n, l)) => return Err((n, format!("unexpected column line '{l}'"))),
            None => return Err((2, "missing column line".into())),
        }
        let mut rounds = Vec::new();
        let mut summary = None;
        let mut targets = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            let err = |m: String| (n, m);
            match f[0] {
                "round" if f.len() == 1 + COLUMNS.len() => rounds.push(parse_round(&f[1..]).map_err(err)?),
                "summary" if f.len() == 7 => {
                    summary = Some(Summary {
                        final_metric: parse_opt(f[1]).map_err(err)?,
                        best_metric: parse_opt(f[2]).map_err(err)?,
                        bytes_down: parse_bytes(f[3]).map_err(|e| err(e.to_string()))?,
                        bytes_up: parse_bytes(f[4]).map_err(|e| err(e.to_string()))?,
                        flops: parse_num(f[6]).map_err(err)?,
                    })
                }
                "target" if f.len() == 4 => targets.push(TargetRow {
                    fraction: parse_num(f[1]).map_err(err)?,
                    cum_bytes: match f[2] {
                        "-" => None,
                        v => Some(parse_bytes(v).map_err(|e| err(e.to_string()))?),
                    },
                    cum_flops: parse_opt(f[3]).map_err(err)?,
                }),
                "" if line.is_empty() => {}
                other => return Err((n, format!("malformed '{other}' record with {} fields", f.len()))),
            }
        }
        let summary = summary.ok_or((0, "missing summary record".to_string()))?;
        Ok(Self {
            rounds,
            summary,
            targets,
        })
    }

    /// `(cumulative cost, metric)` pairs of evaluation rounds.
    fn byte_series(&self) -> Vec<(Bytes, f64)> {
        self.rounds
            .iter()
            .filter_map(|r| r.metric.map(|m| (r.cum_bytes, m)))
            .collect()
    }

    fn flop_series(&self) -> Vec<(u128, f64)> {
        self.rounds
            .iter()
            .filter_map(|r| r.metric.map(|m| (r.cum_flops, m)))
            .collect()
    }
}

fn best(rows: &[RoundRow]) -> Option<f64> {
    rows.iter().filter_map(|r| r.metric).reduce(f64::max)
}

fn first_reaching(rows: &[RoundRow], best: f64, fraction: f64) -> Option<&RoundRow> {
    rows.iter().find(|r| r.metric.is_some_and(|m| m >= fraction * best))
}

fn parse_num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("'{s}' is not a valid number"))
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> std::result::Result<Option<T>, String> {
    if s == "-" {
        Ok(None)
    } else {
        parse_num(s).map(Some)
    }
}

fn parse_round(f: &[&str]) -> std::result::Result<RoundRow, String> {
    let bytes = |s: &str| parse_bytes(s).map_err(|e| e.to_string());
    Ok(RoundRow {
        round: parse_num(f[0])?,
        stage: parse_num(f[1])?,
        clients: if f[2].is_empty() {
            Vec::new()
        } else {
            f[2].split(';').map(parse_num).collect::<std::result::Result<_, _>>()?
        },
        loss: parse_num(f[3])?,
        metric: parse_opt(f[4])?,
        bytes_down: bytes(f[5])?,
        bytes_up: bytes(f[6])?,
        cum_bytes: bytes(f[7])?,
        flops: parse_num(f[8])?,
        cum_flops: parse_num(f[9])?,
        alpha: parse_opt(f[10])?,
        q: parse_opt(f[11])?,
    })
}

/// Relative cost change of A versus B at one target fraction, in percent;
/// `None` when either run never reaches the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub fraction: f64,
    pub bytes: Option<f64>,
    pub flops: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Best metric of B, the reference for every target.
    pub baseline_best: f64,
    pub rows: Vec<Reduction>,
}

fn change(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b) / b * 100.0
    }
}

/// Cost of reaching `f · best(B)` for A relative to B, per target fraction.
/// Negative values mean A is cheaper.
pub fn compare(a: &MetricsFile, b: &MetricsFile) -> Result<Comparison> {
    let baseline_best =
        best(&b.rounds).ok_or_else(|| Error::InvalidArgument("baseline run has no evaluation rounds".into()))?;
    let (ab, bb) = (a.byte_series(), b.byte_series());
    let (af, bf) = (a.flop_series(), b.flop_series());
    if ab.is_empty() {
        return Err(Error::InvalidArgument("run A has no evaluation rounds".into()));
    }
    let mut rows = Vec::new();
    for &fraction in &TARGET_FRACTIONS {
        let bytes = match (
            cost_to_target(&ab, baseline_best, fraction)?,
            cost_to_target(&bb, baseline_best, fraction)?,
        ) {
            (Some(x), Some(y)) => Some(change(bytes_f64(&x), bytes_f64(&y))),
            _ => None,
        };
        let flops = match (
            cost_to_target(&af, baseline_best, fraction)?,
            cost_to_target(&bf, baseline_best, fraction)?,
        ) {
            (Some(x), Some(y)) => Some(change(x as f64, y as f64)),
            _ => None,
        };
        rows.push(Reduction { fraction, bytes, flops });
    }
    Ok(Comparison { baseline_best, rows })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "baseline best metric: {}", self.baseline_best)?;
        writeln!(f, "{:<10}{:>16}{:>16}", "target", "bytes", "flops")?;
        let cell = |v: Option<f64>| v.map_or_else(|| "not reached".to_string(), |p| format!("{p:+.2}%"));
        for r in &self.rows {
            writeln!(
                f,
                "{:<10}{:>16}{:>16}",
                format!("{}%", r.fraction * 100.0),
                cell(r.bytes),
                cell(r.flops)
            )?;
        }
        Ok(())
    }
}
