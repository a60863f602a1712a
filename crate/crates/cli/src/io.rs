use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use seqsel::Dataset;

/// A numeric CSV with a header row.
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        let headers: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        if headers.is_empty() {
            bail!("{} has no header row", path.display());
        }
        let mut columns = vec![Vec::new(); headers.len()];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.with_context(|| format!("{}: malformed row {}", path.display(), i + 2))?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| anyhow!("{}: row {}, column '{}': '{field}' is not a number", path.display(), i + 2, headers[j]))?;
                columns[j].push(v);
            }
        }
        Ok(Table { headers, columns })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("no column named '{name}'"))
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// Which column holds the response.
#[derive(Debug, Clone, clap::Args, serde::Serialize)]
pub struct DataArgs {
    /// Input CSV with a header row.
    pub input: std::path::PathBuf,
    /// Name of the response column (default: the first column).
    #[arg(long, conflicts_with = "response_index")]
    pub response: Option<String>,
    /// Zero-based index of the response column.
    #[arg(long)]
    pub response_index: Option<usize>,
    /// Add an intercept that is forced into every model.
    #[arg(long)]
    pub intercept: bool,
    /// Scale every predictor to unit Euclidean norm.
    #[arg(long)]
    pub normalize: bool,
}

impl DataArgs {
    pub fn load(&self, sigma2: Option<f64>) -> Result<Dataset> {
        let table = Table::read(&self.input)?;
        let r = match (&self.response, self.response_index) {
            (Some(name), _) => table.column_index(name).with_context(|| format!("response column missing from {}", self.input.display()))?,
            (None, Some(i)) if i < table.headers.len() => i,
            (None, Some(i)) => bail!("response index {i} out of range for {} columns", table.headers.len()),
            (None, None) => 0,
        };
        let n = table.nrows();
        let preds: Vec<usize> = (0..table.headers.len()).filter(|&j| j != r).collect();
        if preds.is_empty() {
            bail!("no predictor columns besides the response");
        }
        let x = DMatrix::from_fn(n, preds.len(), |i, j| table.columns[preds[j]][i]);
        let y = DVector::from_vec(table.columns[r].clone());
        let names = preds.iter().map(|&j| table.headers[j].clone()).collect();
        let mut d = Dataset::new(x, y)?.with_column_names(names)?;
        if self.normalize {
            d = d.normalized()?;
        }
        if self.intercept {
            d = d.with_intercept();
        }
        if let Some(s2) = sigma2 {
            d = d.with_sigma2(s2)?;
        }
        Ok(d)
    }
}

/// Write to a file, or to standard output when `path` is `None`.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}
