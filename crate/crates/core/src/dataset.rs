//! Column-typed tabular data with a binary response.
//!
//! Categorical columns are integer-encoded. When loading from CSV the level
//! table is the sorted (lexicographic, byte order) list of distinct strings,
//! and level `i` gets code `i`. At most [`MAX_LEVELS`] levels are allowed so
//! that a subset of levels fits in a `u64` bitmask.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MAX_LEVELS: usize = 64;

/// Suffix appended to the name of a shuffled pseudo-feature by default.
pub const DEFAULT_SHUFFLE_SUFFIX: &str = "_shuffled";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Categorical { levels: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Continuous(Vec<f64>),
    Categorical { codes: Vec<u8>, levels: Vec<String> },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Continuous(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            Column::Continuous(_) => FeatureKind::Continuous,
            Column::Categorical { levels, .. } => FeatureKind::Categorical {
                levels: levels.len(),
            },
        }
    }

    /// String form of row `i`; for categorical columns this decodes through
    /// the level table.
    pub fn display(&self, i: usize) -> String {
        match self {
            Column::Continuous(v) => v[i].to_string(),
            Column::Categorical { codes, levels } => levels[codes[i] as usize].clone(),
        }
    }

    fn permuted(&self, perm: &[usize]) -> Column {
        match self {
            Column::Continuous(v) => Column::Continuous(perm.iter().map(|&i| v[i]).collect()),
            Column::Categorical { codes, levels } => Column::Categorical {
                codes: perm.iter().map(|&i| codes[i]).collect(),
                levels: levels.clone(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub name: String,
    pub column: Column,
}

impl Feature {
    pub fn continuous(name: impl Into<String>, values: Vec<f64>) -> Feature {
        Feature {
            name: name.into(),
            column: Column::Continuous(values),
        }
    }

    pub fn categorical(name: impl Into<String>, codes: Vec<u8>, levels: Vec<String>) -> Feature {
        Feature {
            name: name.into(),
            column: Column::Categorical { codes, levels },
        }
    }

    pub fn kind(&self) -> FeatureKind {
        self.column.kind()
    }
}

/// Immutable table of features plus a 0/1 response.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<Feature>,
    response: Vec<u8>,
}

impl Dataset {
    pub fn new(features: Vec<Feature>, response: Vec<u8>) -> Result<Dataset> {
        let n = response.len();
        if n == 0 {
            return Err(Error::domain("no rows"));
        }
        if let Some(bad) = response.iter().find(|&&y| y > 1) {
            return Err(Error::domain(format!("response value {bad} is not 0/1")));
        }
        let mut seen = BTreeSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
            if f.column.len() != n {
                return Err(Error::Schema(format!(
                    "feature `{}` has {} values, response has {n}",
                    f.name,
                    f.column.len()
                )));
            }
            match &f.column {
                Column::Continuous(v) => {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::domain(format!(
                            "feature `{}` contains non-finite values",
                            f.name
                        )));
                    }
                }
                Column::Categorical { codes, levels } => {
                    if levels.len() < 2 || levels.len() > MAX_LEVELS {
                        return Err(Error::Schema(format!(
                            "categorical feature `{}` has {} levels (allowed 2..={MAX_LEVELS})",
                            f.name,
                            levels.len()
                        )));
                    }
                    if codes.iter().any(|&c| c as usize >= levels.len()) {
                        return Err(Error::Schema(format!(
                            "feature `{}` has a code outside its level table",
                            f.name
                        )));
                    }
                }
            }
        }
        Ok(Dataset { features, response })
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature(&self, j: usize) -> &Feature {
        &self.features[j]
    }

    pub fn kind(&self, j: usize) -> FeatureKind {
        self.features[j].kind()
    }

    pub fn kinds(&self) -> Vec<FeatureKind> {
        self.features.iter().map(Feature::kind).collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_owned()))
    }

    pub fn response(&self) -> &[u8] {
        &self.response
    }

    pub fn positives(&self) -> usize {
        self.response.iter().filter(|&&y| y == 1).count()
    }

    /// Returns a copy with an extra feature `name + suffix` holding a seeded
    /// uniform permutation of `name`'s column.
    pub fn shuffle_feature(&self, name: &str, seed: u64, suffix: &str) -> Result<Dataset> {
        let j = self.feature_index(name)?;
        let new_name = format!("{name}{suffix}");
        if self.feature_index(&new_name).is_ok() {
            return Err(Error::Schema(format!("feature `{new_name}` already exists")));
        }
        let mut perm: Vec<usize> = (0..self.n()).collect();
        perm.shuffle(&mut seed::rng(seed::derive(seed, &[seed::stream::SHUFFLE])));
        let mut features = self.features.clone();
        features.push(Feature {
            name: new_name,
            column: self.features[j].column.permuted(&perm),
        });
        Ok(Dataset {
            features,
            response: self.response.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Continuous,
    Categorical,
}

/// Declared column kinds. Columns not named here (other than the response)
/// are ignored; feature order follows the CSV header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schema {
    columns: Vec<(String, ColumnType)>,
}

impl Schema {
    pub fn new() -> Schema {
        Schema::default()
    }

    pub fn with(mut self, name: impl Into<String>, ty: ColumnType) -> Schema {
        self.columns.push((name.into(), ty));
        self
    }

    /// Parses a JSON object such as `{"Age": "continuous", "Sex": "categorical"}`.
    pub fn from_json(text: &str) -> Result<Schema> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)
            .map_err(|e| Error::Schema(format!("schema must be a JSON object: {e}")))?;
        let mut schema = Schema::new();
        for (name, v) in map {
            let ty: ColumnType = serde_json::from_value(v.clone()).map_err(|_| {
                Error::Schema(format!(
                    "column `{name}`: expected \"continuous\" or \"categorical\", got {v}"
                ))
            })?;
            schema.columns.push((name, ty));
        }
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::from_json(&text)
    }

    fn get(&self, name: &str) -> Option<ColumnType> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, ty)| ty)
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Drop rows with a missing value in any used column instead of failing.
    pub drop_incomplete: bool,
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "NaN" | "nan")
}

fn parse_response(s: &str) -> Option<u8> {
    match s.trim() {
        "0" => Some(0),
        "1" => Some(1),
        t => match t.parse::<f64>() {
            Ok(x) if x == 0.0 => Some(0),
            Ok(x) if x == 1.0 => Some(1),
            _ => None,
        },
    }
}

/// Loads a CSV file. With `schema = None` every non-response column is used
/// and typed by inspection: continuous if every value parses as a number,
/// categorical otherwise.
pub fn load_csv(
    path: &Path,
    schema: Option<&Schema>,
    response: &str,
    opts: &LoadOptions,
) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, response, opts)
}

pub fn read_csv<R: Read>(
    reader: R,
    schema: Option<&Schema>,
    response: &str,
    opts: &LoadOptions,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<String> = header.iter().map(|s| s.trim().to_owned()).collect();
    let y_col = names
        .iter()
        .position(|n| n == response)
        .ok_or_else(|| Error::Schema(format!("response column `{response}` not in header")))?;

    let mut used: Vec<(usize, Option<ColumnType>)> = Vec::new();
    match schema {
        Some(s) if !s.is_empty() => {
            for (name, _) in &s.columns {
                if name == response {
                    return Err(Error::Schema(format!(
                        "`{name}` is the response and cannot also be a feature"
                    )));
                }
                if !names.contains(name) {
                    return Err(Error::Schema(format!("schema column `{name}` not in header")));
                }
            }
            for (i, n) in names.iter().enumerate() {
                if let Some(ty) = s.get(n) {
                    used.push((i, Some(ty)));
                }
            }
        }
        _ => {
            for i in 0..names.len() {
                if i != y_col {
                    used.push((i, None));
                }
            }
        }
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); used.len()];
    let mut y = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row: e.position().map_or(line, |p| p.line()),
            message: e.to_string(),
        })?;
        let incomplete = is_missing(&rec[y_col]) || used.iter().any(|&(i, _)| is_missing(&rec[i]));
        if incomplete {
            if opts.drop_incomplete {
                continue;
            }
            return Err(Error::Parse {
                row: line,
                message: "missing value".into(),
            });
        }
        let yv = parse_response(&rec[y_col]).ok_or_else(|| {
            Error::domain(format!(
                "non-binary response `{}` at row {line}; expected 0 or 1",
                &rec[y_col]
            ))
        })?;
        y.push(yv);
        for (slot, &(i, _)) in raw.iter_mut().zip(&used) {
            slot.push(rec[i].trim().to_owned());
        }
    }
    if y.is_empty() {
        return Err(Error::domain("no rows"));
    }

    let mut features = Vec::with_capacity(used.len());
    for (values, &(i, declared)) in raw.into_iter().zip(&used) {
        let name = names[i].clone();
        let numeric: Option<Vec<f64>> = values.iter().map(|s| s.parse::<f64>().ok()).collect();
        let ty = declared.unwrap_or(if numeric.is_some() {
            ColumnType::Continuous
        } else {
            ColumnType::Categorical
        });
        let column = match ty {
            ColumnType::Continuous => {
                let v = numeric.ok_or_else(|| {
                    let bad = values.iter().position(|s| s.parse::<f64>().is_err()).unwrap();
                    Error::Schema(format!(
                        "column `{name}` is declared continuous but `{}` is not a number",
                        values[bad]
                    ))
                })?;
                Column::Continuous(v)
            }
            ColumnType::Categorical => encode_categorical(&name, &values)?,
        };
        features.push(Feature { name, column });
    }
    Dataset::new(features, y)
}

fn encode_categorical(name: &str, values: &[String]) -> Result<Column> {
    let levels: Vec<String> = values
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if levels.len() > MAX_LEVELS {
        return Err(Error::Schema(format!(
            "categorical column `{name}` has {} levels; at most {MAX_LEVELS} are supported",
            levels.len()
        )));
    }
    if levels.len() < 2 {
        return Err(Error::Schema(format!(
            "categorical column `{name}` has a single level"
        )));
    }
    let codes = values
        .iter()
        .map(|v| levels.binary_search(v).unwrap() as u8)
        .collect();
    Ok(Column::Categorical { codes, levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, schema: Option<&Schema>) -> Result<Dataset> {
        read_csv(text.as_bytes(), schema, "y", &LoadOptions::default())
    }

    #[test]
    fn lexicographic_encoding() {
        let d = read("Sex,y\nm,1\nf,0\nm,0\n", None).unwrap();
        assert_eq!(d.kinds(), vec![FeatureKind::Categorical { levels: 2 }]);
        match &d.feature(0).column {
            Column::Categorical { codes, levels } => {
                assert_eq!(levels, &["f", "m"]);
                assert_eq!(codes, &[1, 0, 1]);
            }
            _ => panic!("expected categorical"),
        }
        assert_eq!(d.response(), &[1, 0, 0]);
    }

    #[test]
    fn empty_body_is_no_rows() {
        let err = read("Sex,y\n", None).unwrap_err();
        assert_eq!(err.to_string(), "no rows");
    }

    #[test]
    fn non_binary_response() {
        let err = read("a,y\n1,0\n2,2\n", None).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = read("a,y\n1,0\n2\n", None).unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_values_rejected_or_dropped() {
        let text = "a,b,y\n1,x,0\n,y,1\n3,y,1\n";
        let err = read(text, None).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err}");
        let d = read_csv(
            text.as_bytes(),
            None,
            "y",
            &LoadOptions {
                drop_incomplete: true,
            },
        )
        .unwrap();
        assert_eq!(d.n(), 2);
    }

    #[test]
    fn level_cap() {
        let mut text = String::from("c,y\n");
        for i in 0..65 {
            text.push_str(&format!("L{i},{}\n", i % 2));
        }
        let err = read(&text, None).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn schema_selects_and_types_columns() {
        let schema = Schema::from_json(r#"{"Pclass": "categorical", "Age": "continuous"}"#).unwrap();
        let d = read("Id,Age,Pclass,y\n1,22,3,0\n2,38,1,1\n3,26,3,1\n", Some(&schema)).unwrap();
        assert_eq!(d.feature_names(), vec!["Age", "Pclass"]);
        assert_eq!(
            d.kinds(),
            vec![FeatureKind::Continuous, FeatureKind::Categorical { levels: 2 }]
        );
        let bad = Schema::from_json(r#"{"Nope": "continuous"}"#).unwrap();
        assert!(read("a,y\n1,0\n", Some(&bad)).is_err());
        assert!(Schema::from_json(r#"{"a": "ordinal"}"#).is_err());
    }

    #[test]
    fn missing_response_column() {
        let err = read("a,b\n1,0\n", None).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn shuffle_constant_column() {
        let d = Dataset::new(vec![Feature::continuous("c", vec![3.0; 5])], vec![0, 1, 0, 1, 1])
            .unwrap();
        let s = d.shuffle_feature("c", 9, "_s").unwrap();
        assert_eq!(s.n_features(), 2);
        assert_eq!(s.feature(1).name, "c_s");
        assert_eq!(s.feature(1).column, d.feature(0).column);
        assert_eq!(s.response(), d.response());
        assert_eq!(&s.features()[..1], d.features());
    }

    #[test]
    fn shuffle_is_seeded_permutation() {
        let d = Dataset::new(
            vec![Feature::continuous("x", vec![1.0, 2.0, 3.0, 4.0])],
            vec![0, 1, 0, 1],
        )
        .unwrap();
        let a = d.shuffle_feature("x", 11, "_s").unwrap();
        let b = d.shuffle_feature("x", 11, "_s").unwrap();
        assert_eq!(a, b);
        let Column::Continuous(v) = &a.feature(1).column else {
            panic!()
        };
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            d.shuffle_feature("nope", 1, "_s"),
            Err(Error::UnknownFeature(_))
        ));
    }
}
