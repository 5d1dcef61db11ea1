//! Trial data representation, cluster weights, feature summarization, and
//! CSV ingestion.
//!
//! A dataset is an ordered collection of clusters, each holding the
//! cluster-level assignment `A`, covariates `V`, and per-individual uptake
//! `D`, outcome `Y`, and covariates `X`. The assignment probability `pi` is
//! fixed by design and carried with the dataset rather than estimated.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Vars};

/// One cluster of a cluster-randomized trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: String,
    /// Cluster-level covariates V (length d_V), identical for all members.
    pub cluster_covariates: Vec<f64>,
    /// Individual-level covariates X, one row per individual (N x d_X).
    pub indiv_covariates: Vec<Vec<f64>>,
    /// Cluster-level treatment assignment A.
    pub assignment: u8,
    /// Individual treatment uptake D.
    pub uptake: Vec<u8>,
    /// Individual outcome Y.
    pub outcome: Vec<f64>,
}

impl Cluster {
    pub fn new(
        id: impl Into<String>,
        cluster_covariates: Vec<f64>,
        indiv_covariates: Vec<Vec<f64>>,
        assignment: u8,
        uptake: Vec<u8>,
        outcome: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        let n = indiv_covariates.len();
        if n == 0 || uptake.len() != n || outcome.len() != n {
            return Err(Error::InvalidConfig(format!(
                "cluster `{id}`: X rows ({}), D ({}), Y ({}) must share a positive length",
                n,
                uptake.len(),
                outcome.len()
            )));
        }
        if assignment > 1 {
            return Err(Error::NonBinary {
                column: "a".into(),
                value: assignment.to_string(),
                row: 0,
            });
        }
        if let Some(bad) = uptake.iter().position(|&d| d > 1) {
            return Err(Error::NonBinary {
                column: "d".into(),
                value: uptake[bad].to_string(),
                row: bad,
            });
        }
        let d_x = indiv_covariates[0].len();
        if indiv_covariates.iter().any(|row| row.len() != d_x) {
            return Err(Error::InvalidConfig(format!(
                "cluster `{id}`: ragged individual covariate rows"
            )));
        }
        Ok(Cluster {
            id,
            cluster_covariates,
            indiv_covariates,
            assignment,
            uptake,
            outcome,
        })
    }

    /// Cluster size N.
    pub fn size(&self) -> usize {
        self.uptake.len()
    }
}

/// Immutable collection of clusters with the known assignment probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    clusters: Vec<Cluster>,
    pi: f64,
}

impl TrialDataset {
    pub fn new(clusters: Vec<Cluster>, pi: f64) -> Result<Self> {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "assignment probability pi must lie in (0,1), got {pi}"
            )));
        }
        if clusters.len() < 2 {
            return Err(Error::TooFewClusters {
                needed: 2,
                found: clusters.len(),
            });
        }
        for arm in [0u8, 1u8] {
            if !clusters.iter().any(|c| c.assignment == arm) {
                return Err(Error::ArmMissing { arm });
            }
        }
        Ok(TrialDataset { clusters, pi })
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_individuals(&self) -> usize {
        self.clusters.iter().map(Cluster::size).sum()
    }

    /// New dataset built from a with-replacement cluster resample.
    /// Resampled clusters keep their full membership; duplicated clusters
    /// get disambiguated ids so downstream fold maps stay well-defined.
    pub fn resample(&self, indices: &[usize]) -> Result<TrialDataset> {
        let mut clusters = Vec::with_capacity(indices.len());
        for (k, &i) in indices.iter().enumerate() {
            let mut c = self.clusters[i].clone();
            c.id = format!("{}#{k}", c.id);
            clusters.push(c);
        }
        TrialDataset::new(clusters, self.pi)
    }
}

/// Cluster-specific weight W: a known function of (N, V) only.
#[derive(Debug, Clone)]
pub enum WeightSpec {
    /// W = 1; every cluster contributes equally.
    ClusterAverage,
    /// W = N; every individual contributes equally.
    IndividualAverage,
    /// W = f(N, V) from a config expression over `n` and `v1..vk`.
    Custom(Expr),
}

impl WeightSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cluster" | "cluster_average" => Ok(WeightSpec::ClusterAverage),
            "individual" | "individual_average" => Ok(WeightSpec::IndividualAverage),
            other => {
                if let Some(expr) = other.strip_prefix("custom:") {
                    Ok(WeightSpec::Custom(Expr::parse(expr)?))
                } else {
                    Err(Error::InvalidConfig(format!(
                        "unknown weight spec `{other}` (expected cluster|individual|custom:<expr>)"
                    )))
                }
            }
        }
    }
}

/// Evaluates the cluster weight W for a cluster of size `n` with covariates `v`.
pub fn eval_weight(spec: &WeightSpec, n: usize, v: &[f64]) -> Result<f64> {
    let w = match spec {
        WeightSpec::ClusterAverage => 1.0,
        WeightSpec::IndividualAverage => n as f64,
        WeightSpec::Custom(expr) => expr.eval(&Vars {
            n: n as f64,
            v,
            x: &[],
        })?,
    };
    if !(w > 0.0) {
        return Err(Error::NonPositiveWeight(w));
    }
    Ok(w)
}

/// How individual covariates are summarized into the fixed-dimensional S_ij.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSummary {
    /// S_ij = X_ij.
    #[default]
    Own,
    /// S_ij = (X_ij, leave-one-out within-cluster mean of X).
    /// Size-1 clusters get a zero-filled peer-mean block.
    OwnPlusPeerMean,
}

/// Feature vector for individual `j` (0-based): S_ij ++ V ++ N.
pub fn build_features(cluster: &Cluster, summary: FeatureSummary, j: usize) -> Result<Vec<f64>> {
    let n = cluster.size();
    if j >= n {
        return Err(Error::IndexOutOfRange { index: j, size: n });
    }
    let d_x = cluster.indiv_covariates[0].len();
    let mut out = Vec::with_capacity(match summary {
        FeatureSummary::Own => d_x,
        FeatureSummary::OwnPlusPeerMean => 2 * d_x,
    } + cluster.cluster_covariates.len()
        + 1);
    out.extend_from_slice(&cluster.indiv_covariates[j]);
    if summary == FeatureSummary::OwnPlusPeerMean {
        if n == 1 {
            out.extend(std::iter::repeat(0.0).take(d_x));
        } else {
            for k in 0..d_x {
                let sum: f64 = cluster
                    .indiv_covariates
                    .iter()
                    .enumerate()
                    .filter(|(l, _)| *l != j)
                    .map(|(_, row)| row[k])
                    .sum();
                out.push(sum / (n - 1) as f64);
            }
        }
    }
    out.extend_from_slice(&cluster.cluster_covariates);
    out.push(n as f64);
    Ok(out)
}

/// Dimension of [`build_features`] output for given covariate dimensions.
pub fn feature_dim(summary: FeatureSummary, d_x: usize, d_v: usize) -> usize {
    match summary {
        FeatureSummary::Own => d_x + d_v + 1,
        FeatureSummary::OwnPlusPeerMean => 2 * d_x + d_v + 1,
    }
}

/// Column map for CSV ingestion. With `x_cols`/`v_cols` unset, covariate
/// columns are inferred from the `x_` and `v_` header prefixes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CsvSchema {
    pub x_cols: Option<Vec<String>>,
    pub v_cols: Option<Vec<String>>,
}

/// Loads a trial dataset from CSV, grouping rows by `cluster_id` in order of
/// first appearance and preserving row order within clusters.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema, pi: f64) -> Result<TrialDataset> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let id_col = col("cluster_id")?;
    let a_col = col("a")?;
    let d_col = col("d")?;
    let y_col = col("y")?;

    let resolve = |names: &Option<Vec<String>>, prefix: &str| -> Result<Vec<usize>> {
        match names {
            Some(list) => list.iter().map(|name| col(name)).collect(),
            None => Ok(headers
                .iter()
                .enumerate()
                .filter(|(_, h)| h.starts_with(prefix))
                .map(|(i, _)| i)
                .collect()),
        }
    };
    let x_cols = resolve(&schema.x_cols, "x_")?;
    let v_cols = resolve(&schema.v_cols, "v_")?;

    let parse_binary = |field: &str, column: &str, row: usize| -> Result<u8> {
        match field.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::NonBinary {
                column: column.into(),
                value: other.into(),
                row,
            }),
        }
    };
    let parse_real = |field: &str, column: &str, row: usize| -> Result<f64> {
        field.trim().parse::<f64>().map_err(|_| {
            Error::InvalidConfig(format!("row {row}: column `{column}` is not a number"))
        })
    };

    struct Building {
        id: String,
        a: u8,
        v: Vec<f64>,
        x: Vec<Vec<f64>>,
        d: Vec<u8>,
        y: Vec<f64>,
    }
    let mut order: Vec<Building> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let id = record.get(id_col).unwrap_or("").trim().to_owned();
        let a = parse_binary(record.get(a_col).unwrap_or(""), "a", row_idx)?;
        let d = parse_binary(record.get(d_col).unwrap_or(""), "d", row_idx)?;
        let y = parse_real(record.get(y_col).unwrap_or(""), "y", row_idx)?;
        let x: Vec<f64> = x_cols
            .iter()
            .map(|&c| parse_real(record.get(c).unwrap_or(""), &headers[c], row_idx))
            .collect::<Result<_>>()?;
        let v: Vec<f64> = v_cols
            .iter()
            .map(|&c| parse_real(record.get(c).unwrap_or(""), &headers[c], row_idx))
            .collect::<Result<_>>()?;

        match order.iter_mut().find(|b| b.id == id) {
            Some(b) => {
                if b.a != a {
                    return Err(Error::InconsistentClusterConstant {
                        column: "a".into(),
                        cluster: id,
                    });
                }
                if b.v != v {
                    return Err(Error::InconsistentClusterConstant {
                        column: "v_*".into(),
                        cluster: id,
                    });
                }
                b.x.push(x);
                b.d.push(d);
                b.y.push(y);
            }
            None => {
                seen.insert(id.clone());
                order.push(Building {
                    id,
                    a,
                    v,
                    x: vec![x],
                    d: vec![d],
                    y: vec![y],
                });
            }
        }
    }

    if order.is_empty() {
        return Err(Error::EmptyFile);
    }
    let clusters = order
        .into_iter()
        .map(|b| Cluster::new(b.id, b.v, b.x, b.a, b.d, b.y))
        .collect::<Result<Vec<_>>>()?;
    TrialDataset::new(clusters, pi)
}

/// Writes a dataset back to the ingestion CSV format (round-trip safe).
pub fn write_csv(dataset: &TrialDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let d_x = dataset.clusters()[0].indiv_covariates[0].len();
    let d_v = dataset.clusters()[0].cluster_covariates.len();
    let mut header = vec![
        "cluster_id".to_owned(),
        "a".to_owned(),
        "d".to_owned(),
        "y".to_owned(),
    ];
    header.extend((1..=d_x).map(|k| format!("x_{k}")));
    header.extend((1..=d_v).map(|k| format!("v_{k}")));
    writer.write_record(&header)?;
    for cluster in dataset.clusters() {
        for j in 0..cluster.size() {
            let mut row = vec![
                cluster.id.clone(),
                cluster.assignment.to_string(),
                cluster.uptake[j].to_string(),
                format!("{}", cluster.outcome[j]),
            ];
            row.extend(cluster.indiv_covariates[j].iter().map(|v| format!("{v}")));
            row.extend(cluster.cluster_covariates.iter().map(|v| format!("{v}")));
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use std::io::Write;

    fn cluster(id: &str, a: u8, d: &[u8], y: &[f64], x: &[f64], v: &[f64]) -> Cluster {
        Cluster::new(
            id,
            v.to_vec(),
            x.iter().map(|&xi| vec![xi]).collect(),
            a,
            d.to_vec(),
            y.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn load_csv_groups_by_cluster() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cluster_id,a,d,y,x_1,v_1").unwrap();
        writeln!(f, "c1,1,0,2.5,0.1,3.0").unwrap();
        writeln!(f, "c1,1,1,1.0,0.2,3.0").unwrap();
        let ds_err = load_csv(f.path(), &CsvSchema::default(), 0.5);
        // single cluster: dataset-level validation rejects it
        assert!(matches!(ds_err, Err(Error::TooFewClusters { .. })));

        writeln!(f, "c2,0,0,0.0,0.3,1.0").unwrap();
        f.flush().unwrap();
        let ds = load_csv(f.path(), &CsvSchema::default(), 0.5).unwrap();
        assert_eq!(ds.n_clusters(), 2);
        assert_eq!(ds.clusters()[0].size(), 2);
        assert_eq!(ds.clusters()[0].uptake, vec![0, 1]);
    }

    #[test]
    fn load_csv_rejects_inconsistent_assignment() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cluster_id,a,d,y,x_1,v_1").unwrap();
        writeln!(f, "c1,1,0,2.5,0.1,3.0").unwrap();
        writeln!(f, "c1,0,1,1.0,0.2,3.0").unwrap();
        f.flush().unwrap();
        let err = load_csv(f.path(), &CsvSchema::default(), 0.5).unwrap_err();
        assert!(matches!(err, Error::InconsistentClusterConstant { .. }));
    }

    #[test]
    fn load_csv_rejects_nonbinary_uptake() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cluster_id,a,d,y,x_1,v_1").unwrap();
        writeln!(f, "c1,1,2,2.5,0.1,3.0").unwrap();
        f.flush().unwrap();
        let err = load_csv(f.path(), &CsvSchema::default(), 0.5).unwrap_err();
        assert!(matches!(err, Error::NonBinary { .. }));
    }

    #[test]
    fn load_csv_rejects_empty_and_missing_columns() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cluster_id,a,d,y").unwrap();
        f.flush().unwrap();
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default(), 0.5).unwrap_err(),
            Error::EmptyFile
        ));

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "cluster_id,a,y").unwrap();
        writeln!(g, "c1,1,2.0").unwrap();
        g.flush().unwrap();
        assert!(matches!(
            load_csv(g.path(), &CsvSchema::default(), 0.5).unwrap_err(),
            Error::MissingColumn(c) if c == "d"
        ));
    }

    #[test]
    fn csv_round_trip() {
        let ds = TrialDataset::new(
            vec![
                cluster("a", 1, &[1, 0], &[1.0, 2.5], &[0.5, -0.25], &[3.0]),
                cluster("b", 0, &[0, 0, 1], &[0.0, 1.0, -1.5], &[1.0, 2.0, 3.0], &[-1.0]),
            ],
            0.5,
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, f.path()).unwrap();
        let back = load_csv(f.path(), &CsvSchema::default(), 0.5).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn build_features_own_mode() {
        let c = cluster("c", 1, &[0; 10], &[3.0; 10], &[3.0; 10], &[2.0]);
        let feats = build_features(&c, FeatureSummary::Own, 0).unwrap();
        assert_eq!(feats, vec![3.0, 2.0, 10.0]);
    }

    #[test]
    fn build_features_peer_mean() {
        let c = cluster("c", 1, &[0, 0], &[0.0, 0.0], &[1.0, 3.0], &[5.0]);
        let feats = build_features(&c, FeatureSummary::OwnPlusPeerMean, 0).unwrap();
        assert_eq!(feats, vec![1.0, 3.0, 5.0, 2.0]);
        let feats1 = build_features(&c, FeatureSummary::OwnPlusPeerMean, 1).unwrap();
        assert_eq!(feats1, vec![3.0, 1.0, 5.0, 2.0]);
    }

    #[test]
    fn build_features_singleton_zero_fills_peer_block() {
        let c = cluster("c", 1, &[0], &[0.0], &[7.0], &[1.0]);
        let feats = build_features(&c, FeatureSummary::OwnPlusPeerMean, 0).unwrap();
        assert_eq!(feats, vec![7.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn build_features_index_out_of_range() {
        let c = cluster("c", 1, &[0], &[0.0], &[7.0], &[1.0]);
        assert!(matches!(
            build_features(&c, FeatureSummary::Own, 1).unwrap_err(),
            Error::IndexOutOfRange { .. }
        ));
    }

    #[test]
    fn weights() {
        assert_eq!(eval_weight(&WeightSpec::ClusterAverage, 37, &[]).unwrap(), 1.0);
        assert_eq!(
            eval_weight(&WeightSpec::IndividualAverage, 37, &[]).unwrap(),
            37.0
        );
        let custom = WeightSpec::Custom(Expr::parse("n/(n+1)").unwrap());
        assert_eq!(eval_weight(&custom, 1, &[]).unwrap(), 0.5);
        let bad = WeightSpec::Custom(Expr::parse("0-n").unwrap());
        assert!(matches!(
            eval_weight(&bad, 3, &[]).unwrap_err(),
            Error::NonPositiveWeight(_)
        ));
    }

    #[test]
    fn weight_spec_parsing() {
        assert!(matches!(
            WeightSpec::parse("cluster").unwrap(),
            WeightSpec::ClusterAverage
        ));
        assert!(matches!(
            WeightSpec::parse("individual").unwrap(),
            WeightSpec::IndividualAverage
        ));
        assert!(matches!(
            WeightSpec::parse("custom:n/(n+1)").unwrap(),
            WeightSpec::Custom(_)
        ));
        assert!(WeightSpec::parse("bogus").is_err());
    }
}
