//! Result bundles: CSV tables, text reports and gnuplot scripts written
//! through a staging directory so a failed run leaves nothing behind.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Column-oriented numeric table written as CSV with a `t,<signals>` style header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(header: Vec<String>) -> Self {
        CsvTable { header, rows: Vec::new() }
    }

    /// Builds a table from a shared abscissa and named columns of the same length.
    pub fn from_columns(x_name: &str, x: &[f64], columns: &[(String, Vec<f64>)]) -> Self {
        let mut header = vec![x_name.to_string()];
        header.extend(columns.iter().map(|(n, _)| n.clone()));
        let rows =
            (0..x.len()).map(|i| std::iter::once(x[i]).chain(columns.iter().map(|(_, c)| c[i])).collect()).collect();
        CsvTable { header, rows }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            for (i, x) in r.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{x}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    TimeSeries,
    SignVsTime,
    UpsilonVsSigma,
}

impl PlotKind {
    fn labels(self) -> (&'static str, &'static str) {
        match self {
            PlotKind::TimeSeries => ("t [s]", "value [p.u.]"),
            PlotKind::SignVsTime => ("t [s]", "Jacobian entry"),
            PlotKind::UpsilonVsSigma => ("sigma", "Upsilon'"),
        }
    }
}

/// Everything a command produces, before it touches the file system.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub tables: Vec<(String, CsvTable, Option<PlotKind>)>,
    pub reports: Vec<(String, String)>,
    pub metadata: Vec<(String, String)>,
}

impl Artifacts {
    pub fn table(&mut self, name: &str, table: CsvTable, plot: Option<PlotKind>) {
        self.tables.push((name.to_string(), table, plot));
    }

    /// Text file; `name` gets a `.txt` extension unless it already has one.
    pub fn report(&mut self, name: &str, text: String) {
        self.reports.push((name.to_string(), text));
    }

    pub fn meta(&mut self, key: &str, value: impl Into<String>) {
        self.metadata.push((key.to_string(), value.into()));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub dir: PathBuf,
    pub csv: Vec<PathBuf>,
    pub reports: Vec<PathBuf>,
    pub scripts: Vec<PathBuf>,
    pub metadata: PathBuf,
}

/// Gnuplot script that plots every data column of `csv` against the first.
pub fn plot_script(csv: &str, table: &CsvTable, kind: PlotKind) -> String {
    let (xl, yl) = kind.labels();
    let stem = csv.trim_end_matches(".csv");
    let style = if kind == PlotKind::SignVsTime { "steps" } else { "lines" };
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead outside");
    let _ = writeln!(s, "set xlabel '{xl}'");
    let _ = writeln!(s, "set ylabel '{yl}'");
    if kind == PlotKind::UpsilonVsSigma {
        let _ = writeln!(s, "set xzeroaxis");
    }
    let _ = writeln!(s, "set terminal pngcairo size 1000,600");
    let _ = writeln!(s, "set output '{stem}.png'");
    let _ = writeln!(s, "plot for [i=2:{}] '{csv}' using 1:i with {style}", table.header.len().max(2));
    s
}

fn write_all(dir: &Path, a: &Artifacts) -> io::Result<ResultBundle> {
    let mut b = ResultBundle {
        dir: PathBuf::new(),
        csv: Vec::new(),
        reports: Vec::new(),
        scripts: Vec::new(),
        metadata: dir.join("metadata.txt"),
    };
    for (name, table, plot) in &a.tables {
        let file = format!("{name}.csv");
        fs::write(dir.join(&file), table.to_csv())?;
        b.csv.push(PathBuf::from(&file));
        if let Some(kind) = plot {
            let gp = format!("plot_{name}.gp");
            fs::write(dir.join(&gp), plot_script(&file, table, *kind))?;
            b.scripts.push(PathBuf::from(gp));
        }
    }
    for (name, text) in &a.reports {
        let file = if name.contains('.') { name.clone() } else { format!("{name}.txt") };
        fs::write(dir.join(&file), text)?;
        b.reports.push(PathBuf::from(file));
    }
    let mut meta = String::new();
    for (k, v) in &a.metadata {
        let _ = writeln!(meta, "{k} = {v}");
    }
    fs::write(&b.metadata, meta)?;
    Ok(b)
}

/// Writes the artifacts into `out`. Files go to a sibling staging directory
/// which replaces `out` only once everything has been written.
pub fn write_results(out: &Path, artifacts: &Artifacts) -> io::Result<ResultBundle> {
    let name = out
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no final component"))?;
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let staging = parent.join(format!(".{}.staging", name.to_string_lossy()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir(&staging)?;
    let result = write_all(&staging, artifacts).and_then(|b| {
        if out.exists() {
            fs::remove_dir_all(out)?;
        }
        fs::rename(&staging, out)?;
        Ok(b)
    });
    match result {
        Ok(mut b) => {
            b.dir = out.to_path_buf();
            let abs = |p: &PathBuf| out.join(p);
            b.csv = b.csv.iter().map(abs).collect();
            b.reports = b.reports.iter().map(abs).collect();
            b.scripts = b.scripts.iter().map(abs).collect();
            b.metadata = out.join("metadata.txt");
            Ok(b)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}
