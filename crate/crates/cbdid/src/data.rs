//! CSV ingestion into a [`Dataset`].
//!
//! The file must have a header row. Outcomes come either as two level columns
//! (`--ypre`, `--ypost`) or as one change column (`--delta`); a change column is
//! stored as `y_pre = 0`, `y_post = Δ`.

use std::io::Read;
use std::path::Path;

use cbdid_core::model::{Dataset, Unit};
use cbdid_core::DVector;

use crate::error::{Error, Result};

/// Where the outcome lives in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeColumns {
    /// Pre- and post-period levels.
    Levels { pre: String, post: String },
    /// Observed change `y(1) − y(0)`.
    Delta(String),
}

/// Column roles of an input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    /// 0/1 treatment indicator.
    pub treat: String,
    /// Outcome columns.
    pub outcome: OutcomeColumns,
    /// Covariates in model order; `None` takes every column without another role.
    pub covariates: Option<Vec<String>>,
    /// Column of supplied propensity scores.
    pub propensity: Option<String>,
}

/// A parsed input file.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    /// Validated units.
    pub dataset: Dataset,
    /// Supplied propensity scores, all strictly inside (0, 1).
    pub propensity: Option<DVector<f64>>,
}

/// Reads `path` according to `schema`.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Loaded> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, schema)
}

fn schema_err(msg: String) -> Error {
    Error::Core(cbdid_core::Error::Schema(msg))
}

fn parse_err(row: usize, msg: String) -> Error {
    Error::Core(cbdid_core::Error::Parse { row, msg })
}

fn parse_number(raw: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| parse_err(row, format!("column `{col}`: `{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(row, format!("column `{col}`: non-finite value")));
    }
    Ok(v)
}

fn parse_treat(raw: &str, row: usize, col: &str) -> Result<bool> {
    match raw.trim() {
        "1" | "1.0" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "0.0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(parse_err(row, format!("column `{col}`: `{other}` is not a 0/1 indicator"))),
    }
}

/// Reads CSV text from any reader.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| schema_err(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema_err(format!("column `{name}` not found; header is {}", header.join(","))))
    };
    let treat = find(&schema.treat)?;
    let (pre, post) = match &schema.outcome {
        OutcomeColumns::Levels { pre, post } => (Some(find(pre)?), find(post)?),
        OutcomeColumns::Delta(c) => (None, find(c)?),
    };
    let ps = schema.propensity.as_deref().map(find).transpose()?;
    let mut roles = vec![treat, post];
    roles.extend(pre);
    roles.extend(ps);
    let cov_names: Vec<String> = match &schema.covariates {
        Some(list) => list.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|(i, _)| !roles.contains(i))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    // Outcome columns may double as covariates (a pre-period outcome often does).
    let exclusive: Vec<usize> = [Some(treat), ps].into_iter().flatten().collect();
    let mut cov_idx = Vec::with_capacity(cov_names.len());
    for c in &cov_names {
        let j = find(c)?;
        if exclusive.contains(&j) {
            return Err(schema_err(format!("column `{c}` cannot be both a covariate and the treatment or propensity column")));
        }
        if cov_idx.contains(&j) {
            return Err(schema_err(format!("covariate `{c}` listed twice")));
        }
        cov_idx.push(j);
    }

    let mut units = Vec::new();
    let mut scores = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(row, format!("{} fields, header has {}", rec.len(), header.len())));
        }
        let treated = parse_treat(&rec[treat], row, &header[treat])?;
        let y_post = parse_number(&rec[post], row, &header[post])?;
        let y_pre = match pre {
            Some(j) => parse_number(&rec[j], row, &header[j])?,
            None => 0.0,
        };
        let covariates = cov_idx
            .iter()
            .map(|&j| parse_number(&rec[j], row, &header[j]))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(j) = ps {
            let e = parse_number(&rec[j], row, &header[j])?;
            if !(e > 0.0 && e < 1.0) {
                return Err(schema_err(format!(
                    "propensity column `{}` has value {e} at row {row}; scores must lie strictly inside (0, 1)",
                    header[j]
                )));
            }
            scores.push(e);
        }
        units.push(Unit { covariates, treated, y_pre, y_post });
    }
    if units.is_empty() {
        return Err(Error::Core(cbdid_core::Error::EmptyData));
    }
    Ok(Loaded {
        dataset: Dataset::new(cov_names, units)?,
        propensity: ps.map(|_| DVector::from_vec(scores)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn levels(covs: Option<&[&str]>) -> Schema {
        Schema {
            treat: "d".into(),
            outcome: OutcomeColumns::Levels { pre: "y0".into(), post: "y1".into() },
            covariates: covs.map(|c| c.iter().map(|s| s.to_string()).collect()),
            propensity: None,
        }
    }

    const TEXT: &str = "d,y0,y1,a,b\n1,1.0,3.0,0.5,2\n0,2.0,2.5,1.5,1\n1,0.0,1.0,0.2,0\n";

    #[test]
    fn default_covariates_are_remaining_columns() {
        let l = read_csv(TEXT.as_bytes(), &levels(None)).unwrap();
        assert_eq!(l.dataset.covariate_names(), ["a", "b"]);
        assert_eq!(l.dataset.delta().as_slice(), [2.0, 0.5, 1.0]);
        assert_eq!(l.dataset.n_treated(), 2);
    }

    #[test]
    fn delta_file_matches_levels_file() {
        let a = read_csv(TEXT.as_bytes(), &levels(Some(&["b", "a"]))).unwrap();
        let text = "d,dy,a,b\n1,2.0,0.5,2\n0,0.5,1.5,1\n1,1.0,0.2,0\n";
        let schema = Schema {
            outcome: OutcomeColumns::Delta("dy".into()),
            ..levels(Some(&["b", "a"]))
        };
        let b = read_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(a.dataset.delta(), b.dataset.delta());
        assert_eq!(a.dataset.units()[0].covariates, [2.0, 0.5]);
        assert_eq!(b.dataset.units()[0].covariates, [2.0, 0.5]);
    }

    #[test]
    fn bad_inputs_are_reported() {
        let missing = read_csv(TEXT.as_bytes(), &levels(Some(&["zz"]))).unwrap_err();
        assert!(matches!(missing, Error::Core(cbdid_core::Error::Schema(_))));
        let bad = "d,y0,y1,a\n1,1,2,x\n0,1,1,1\n";
        let e = read_csv(bad.as_bytes(), &levels(None)).unwrap_err();
        assert!(matches!(e, Error::Core(cbdid_core::Error::Parse { row: 1, .. })), "{e}");
        let bad_treat = "d,y0,y1,a\n2,1,2,1\n0,1,1,1\n";
        assert!(read_csv(bad_treat.as_bytes(), &levels(None)).is_err());
        let empty = "d,y0,y1,a\n";
        let e = read_csv(empty.as_bytes(), &levels(None)).unwrap_err();
        assert!(matches!(e, Error::Core(cbdid_core::Error::EmptyData)));
    }

    #[test]
    fn propensity_column_is_validated() {
        let schema = Schema { propensity: Some("e".into()), ..levels(Some(&["a"])) };
        let ok = "d,y0,y1,a,e\n1,1,2,1,0.3\n0,1,1,1,0.6\n";
        let l = read_csv(ok.as_bytes(), &schema).unwrap();
        assert_eq!(l.propensity.unwrap().as_slice(), [0.3, 0.6]);
        let bad = "d,y0,y1,a,e\n1,1,2,1,1.0\n0,1,1,1,0.6\n";
        assert!(read_csv(bad.as_bytes(), &schema).is_err());
    }
}
