//! CSV ingestion and column-role resolution.

use std::collections::HashSet;
use std::path::Path;

use mdep_core::models::ColumnNames;
use mdep_core::simlab::{dgp_generate, DgpSpec};
use mdep_core::{rng, Dataset};
use nalgebra::DMatrix;

use crate::config::Source;
use crate::error::{classify, CliError};

/// A parsed CSV file: header plus numeric columns.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    fn index(&self, name: &str, role: &str) -> Result<usize, CliError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{role} column `{name}` not found in the header")))
    }
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read `{}`: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("cannot read the header of `{}`: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::Data(format!("`{}` has no header row", path.display())));
    }
    let mut seen = HashSet::new();
    for h in &header {
        if h.is_empty() {
            return Err(CliError::Data("empty column name in the header".into()));
        }
        if !seen.insert(h.as_str()) {
            return Err(CliError::Data(format!("column `{h}` appears twice in the header")));
        }
    }
    let mut columns = vec![Vec::new(); header.len()];
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        for (c, cell) in record.iter().enumerate() {
            let name = &header[c];
            if cell.is_empty() {
                return Err(CliError::Data(format!(
                    "missing value in column `{name}` at row {row} (line {line})"
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Data(format!(
                    "non-numeric value `{cell}` in column `{name}` at row {row} (line {line})"
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!(
                    "non-finite value `{cell}` in column `{name}` at row {row} (line {line})"
                )));
            }
            columns[c].push(v);
        }
    }
    let table = Table { header, columns };
    if table.rows() == 0 {
        return Err(CliError::Data(format!("`{}` has no data rows", path.display())));
    }
    Ok(table)
}

fn check_distinct(names: &[String], role: &str) -> Result<(), CliError> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(CliError::Data(format!("{role} `{n}` is listed twice")));
        }
    }
    Ok(())
}

fn matrix(table: &Table, names: &[String], role: &str) -> Result<DMatrix<f64>, CliError> {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| table.index(n, role))
        .collect::<Result<_, _>>()?;
    Ok(DMatrix::from_fn(table.rows(), idx.len(), |i, k| table.columns[idx[k]][i]))
}

/// Builds the dataset for `outcome ~ covariates | instruments`. An empty
/// `outcome` (allowed for the relevance test) yields a zero outcome.
pub fn dataset_from_table(
    table: &Table,
    outcome: &str,
    covariates: &[String],
    instruments: &[String],
) -> Result<Dataset, CliError> {
    if covariates.is_empty() {
        return Err(CliError::Data("no covariate given".into()));
    }
    if instruments.is_empty() {
        return Err(CliError::Data("no instrument given".into()));
    }
    check_distinct(covariates, "covariate")?;
    check_distinct(instruments, "instrument")?;
    let y = if outcome.is_empty() {
        vec![0.0; table.rows()]
    } else {
        if covariates.iter().any(|c| c == outcome) {
            return Err(CliError::Data(format!("outcome `{outcome}` is also listed as a covariate")));
        }
        if instruments.iter().any(|c| c == outcome) {
            return Err(CliError::Data(format!("outcome `{outcome}` is also listed as an instrument")));
        }
        table.columns[table.index(outcome, "outcome")?].clone()
    };
    let x = matrix(table, covariates, "covariate")?;
    let z = matrix(table, instruments, "instrument")?;
    let names = ColumnNames {
        outcome: if outcome.is_empty() { "y".into() } else { outcome.to_string() },
        covariates: covariates.to_vec(),
        instruments: instruments.to_vec(),
    };
    Dataset::with_names(y, x, z, names).map_err(|e| classify(e, |k| instruments.get(k).cloned()))
}

/// Simulated draw with generated column names; an instrument column equal
/// to a covariate column carries that covariate's name.
pub fn simulated_dataset(spec: &DgpSpec, seed: u64) -> Result<Dataset, CliError> {
    let mut rng = rng::stream_rng(seed, 0);
    let draw = dgp_generate(spec, &mut rng)?;
    let d = draw.data;
    let covariates: Vec<String> = (1..=d.x().ncols()).map(|k| format!("x{k}")).collect();
    let instruments: Vec<String> = (0..d.z().ncols())
        .map(|k| {
            (0..d.x().ncols())
                .find(|&j| d.x().column(j) == d.z().column(k))
                .map_or_else(|| format!("z{}", k + 1), |j| covariates[j].clone())
        })
        .collect();
    let names = ColumnNames {
        outcome: "y".into(),
        covariates,
        instruments,
    };
    Ok(Dataset::with_names(d.y().to_vec(), d.x().clone(), d.z().clone(), names)?)
}

/// Loads the data named by `source`.
pub fn load(source: &Source, seed: u64) -> Result<Dataset, CliError> {
    match source {
        Source::Csv {
            path,
            outcome,
            covariates,
            instruments,
            ..
        } => dataset_from_table(&read_table(path)?, outcome, covariates, instruments),
        Source::Simulated { dgp, n } => simulated_dataset(&DgpSpec::new(*dgp, *n)?, seed),
    }
}

/// Column roles of the relevance test.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceRoles {
    pub endogenous: String,
    pub excluded: Vec<String>,
    pub controls: Vec<String>,
}

/// Controls default to the columns that are both covariates and
/// instruments; exactly one covariate must remain as the endogenous one.
pub fn relevance_roles(names: &ColumnNames, controls: Option<&[String]>) -> Result<RelevanceRoles, CliError> {
    let shared: Vec<String> = names
        .covariates
        .iter()
        .filter(|c| names.instruments.contains(c))
        .cloned()
        .collect();
    let controls = match controls {
        None => shared,
        Some(c) => {
            check_distinct(c, "control")?;
            for name in c {
                if !shared.contains(name) {
                    return Err(CliError::Data(format!(
                        "control `{name}` must be both a covariate and an instrument"
                    )));
                }
            }
            c.to_vec()
        }
    };
    let endogenous: Vec<&String> = names.covariates.iter().filter(|c| !controls.contains(c)).collect();
    let endogenous = match endogenous.as_slice() {
        [one] => (*one).clone(),
        [] => return Err(CliError::Data("no endogenous covariate: every covariate is a control".into())),
        many => {
            let list: Vec<&str> = many.iter().map(|s| s.as_str()).collect();
            return Err(CliError::Data(format!(
                "the relevance test takes one endogenous covariate, found {}",
                list.join(", ")
            )));
        }
    };
    let excluded: Vec<String> = names
        .instruments
        .iter()
        .filter(|z| !controls.contains(z))
        .cloned()
        .collect();
    if excluded.is_empty() {
        return Err(CliError::Data("no excluded instrument left after removing the controls".into()));
    }
    Ok(RelevanceRoles {
        endogenous,
        excluded,
        controls,
    })
}
