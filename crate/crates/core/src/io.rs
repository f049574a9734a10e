//! File formats: point-data CSV, fit JSON, responsibility CSV, and the
//! evaluation and benchmark tables. Every file is written atomically.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kem::FitResult;
use crate::model::{CytoSeries, Cytogram, FitEvent, MixtureState, ParamsSeries, Responsibilities};
use crate::sim::{BenchResult, SimTruth};
use crate::theory::TheoryReport;

pub const FORMAT_VERSION: &str = "1";

/// Write to a temporary file beside `path`, then rename over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// A series with an optional external label per point.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSeries {
    pub series: CytoSeries,
    pub labels: Option<Vec<Vec<String>>>,
}

impl LabeledSeries {
    pub fn unlabeled(series: CytoSeries) -> Self {
        Self {
            series,
            labels: None,
        }
    }

    pub fn labeled(series: CytoSeries, labels: Vec<Vec<String>>) -> Result<Self> {
        if labels.len() != series.len()
            || labels.iter().zip(series.iter()).any(|(l, c)| l.len() != c.len())
        {
            return Err(Error::DimensionMismatch("labels do not match the points".into()));
        }
        Ok(Self {
            series,
            labels: Some(labels),
        })
    }
}

fn parse_err(row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        message: message.into(),
    }
}

/// Parse `time,x1,...,xd[,weight][,label]`. Rows sharing a time form one
/// cytogram; times must be nondecreasing in file order. Row numbers in
/// errors count the header as row 1.
pub fn read_series<R: Read>(reader: R) -> Result<LabeledSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("time") {
        return Err(parse_err(1, "first column must be `time`"));
    }
    let weight_col = header.iter().position(|h| h == "weight");
    let label_col = header.iter().position(|h| h == "label");
    let dim = header.len() - 1 - weight_col.is_some() as usize - label_col.is_some() as usize;
    if dim == 0 {
        return Err(parse_err(1, "no coordinate columns"));
    }
    for (j, h) in header.iter().enumerate().skip(1).take(dim) {
        if *h != format!("x{j}") {
            return Err(parse_err(1, format!("expected column `x{j}`, found `{h}`")));
        }
    }
    if let Some(w) = weight_col {
        if w != dim + 1 {
            return Err(parse_err(1, "`weight` must follow the coordinates"));
        }
    }
    if let Some(l) = label_col {
        if l != header.len() - 1 {
            return Err(parse_err(1, "`label` must be the last column"));
        }
    }

    struct Group {
        time: f64,
        points: Vec<f64>,
        weights: Vec<f64>,
        labels: Vec<String>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2;
        let record = record?;
        if record.len() != header.len() {
            return Err(parse_err(
                row,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let num = |j: usize| -> Result<f64> {
            let s = &record[j];
            let v: f64 = s
                .parse()
                .map_err(|_| parse_err(row, format!("`{s}` in column `{}` is not a number", header[j])))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("non-finite value in column `{}`", header[j])));
            }
            Ok(v)
        };
        let time = num(0)?;
        let weight = match weight_col {
            Some(j) => num(j)?,
            None => 1.0,
        };
        if weight < 0.0 {
            return Err(parse_err(row, "negative weight"));
        }
        let group = match groups.last_mut() {
            Some(g) if g.time == time => g,
            Some(g) if time < g.time => {
                return Err(parse_err(
                    row,
                    format!("time {time} after {}; rows must be grouped in increasing time", g.time),
                ));
            }
            _ => {
                groups.push(Group {
                    time,
                    points: Vec::new(),
                    weights: Vec::new(),
                    labels: Vec::new(),
                });
                groups.last_mut().unwrap()
            }
        };
        for j in 1..=dim {
            group.points.push(num(j)?);
        }
        group.weights.push(weight);
        if let Some(j) = label_col {
            group.labels.push(record[j].to_string());
        }
    }
    if groups.is_empty() {
        return Err(parse_err(2, "no data rows"));
    }
    let mut cytos = Vec::with_capacity(groups.len());
    let mut labels = Vec::with_capacity(groups.len());
    for g in groups {
        let time = g.time;
        cytos.push(
            Cytogram::new(time, dim, g.points, g.weights)
                .map_err(|e| Error::invalid(format!("time {time}: {e}")))?,
        );
        labels.push(g.labels);
    }
    let series = CytoSeries::new(cytos)?;
    if label_col.is_some() {
        LabeledSeries::labeled(series, labels)
    } else {
        Ok(LabeledSeries::unlabeled(series))
    }
}

pub fn load_series(path: &Path) -> Result<LabeledSeries> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_series(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Parse { row, message } => Error::Parse {
            row,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Serialize with shortest round-trip float formatting.
pub fn series_to_csv(data: &LabeledSeries) -> Result<Vec<u8>> {
    let series = &data.series;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time".to_string()];
    header.extend((1..=series.dim()).map(|j| format!("x{j}")));
    header.push("weight".into());
    if data.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (t, c) in series.iter().enumerate() {
        for i in 0..c.len() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(c.time().to_string());
            rec.extend(c.point(i).iter().map(f64::to_string));
            rec.push(c.weight(i).to_string());
            if let Some(labels) = &data.labels {
                rec.push(labels[t][i].clone());
            }
            w.write_record(&rec)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

pub fn write_series(path: &Path, data: &LabeledSeries) -> Result<()> {
    write_atomic(path, &series_to_csv(data)?)
}

/// Simulated series with 1-based true labels in the `label` column.
pub fn truth_as_labeled(truth: &SimTruth) -> Result<LabeledSeries> {
    let labels = truth
        .labels
        .iter()
        .map(|l| l.iter().map(|z| (z + 1).to_string()).collect())
        .collect();
    LabeledSeries::labeled(truth.series.clone(), labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub format_version: String,
    pub scenario: crate::sim::Scenario,
    pub times: Vec<f64>,
    pub mean_fns: Vec<Vec<f64>>,
    pub pi_fns: Vec<Vec<f64>>,
}

impl TruthDocument {
    pub fn from_truth(truth: &SimTruth) -> Self {
        Self {
            format_version: FORMAT_VERSION.into(),
            scenario: truth.scenario,
            times: truth.series.times(),
            mean_fns: truth.mean_fns.clone(),
            pi_fns: truth.pi_fns.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDocument {
    pub time: f64,
    pub pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub format_version: String,
    /// Echo of the settings that produced the fit.
    pub config: serde_json::Value,
    pub k: usize,
    pub dim: usize,
    pub states: Vec<StateDocument>,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub events: Vec<FitEvent>,
}

impl FitDocument {
    pub fn from_fit(fit: &FitResult, config: serde_json::Value) -> Self {
        let states = fit
            .params
            .times()
            .iter()
            .zip(fit.params.states())
            .map(|(&time, s)| StateDocument {
                time,
                pi: s.pi.clone(),
                mu: s.mu.iter().map(|m| m.iter().copied().collect()).collect(),
                sigma: s
                    .sigma
                    .iter()
                    .map(|m| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect())
                    .collect(),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION.into(),
            config,
            k: fit.params.k(),
            dim: fit.params.dim(),
            states,
            loglik_trace: fit.loglik_trace.clone(),
            iterations: fit.iterations,
            converged: fit.converged,
            events: fit.events.clone(),
        }
    }

    /// Rebuild and validate the parameter series.
    pub fn params(&self) -> Result<ParamsSeries> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported fit format version {:?}",
                self.format_version
            )));
        }
        let d = self.dim;
        let states = self
            .states
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let mu = s.mu.iter().map(|m| DVector::from_row_slice(m)).collect();
                let sigma = s
                    .sigma
                    .iter()
                    .map(|rows| {
                        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                            return Err(Error::DimensionMismatch(format!("state {t}: sigma is not {d}x{d}")));
                        }
                        Ok(DMatrix::from_row_iterator(d, d, rows.iter().flatten().copied()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                MixtureState::new(s.pi.clone(), mu, sigma).map_err(|e| e.at_time(t))
            })
            .collect::<Result<Vec<_>>>()?;
        ParamsSeries::new(self.states.iter().map(|s| s.time).collect(), states)
    }
}

pub fn write_fit(path: &Path, doc: &FitDocument) -> Result<()> {
    write_json(path, doc)
}

pub fn read_fit(path: &Path) -> Result<FitDocument> {
    read_json(path)
}

/// CSV with columns `time,point,gamma1..gammaK`; `point` is 0-based within
/// its time.
pub fn responsibilities_to_csv(series: &CytoSeries, resp: &Responsibilities) -> Result<Vec<u8>> {
    let k = resp.k();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time".to_string(), "point".to_string()];
    header.extend((1..=k).map(|j| format!("gamma{j}")));
    w.write_record(&header)?;
    for (t, c) in series.iter().enumerate() {
        for i in 0..c.len() {
            let mut rec = vec![c.time().to_string(), i.to_string()];
            rec.extend(resp.row(t, i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

pub fn write_responsibilities(path: &Path, series: &CytoSeries, resp: &Responsibilities) -> Result<()> {
    write_atomic(path, &responsibilities_to_csv(series, resp)?)
}

/// Parse a responsibility CSV against `series`, checking that every row
/// sums to 1 within 1e-10.
pub fn read_responsibilities<R: Read>(reader: R, series: &CytoSeries) -> Result<Responsibilities> {
    let mut rdr = csv::Reader::from_reader(reader);
    let k = rdr.headers()?.len().saturating_sub(2);
    if k == 0 {
        return Err(parse_err(1, "no gamma columns"));
    }
    let mut gamma: Vec<Vec<f64>> = series.iter().map(|c| Vec::with_capacity(c.len() * k)).collect();
    let mut t = 0;
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2;
        let record = record?;
        let time: f64 = record[0].parse().map_err(|_| parse_err(row, "bad time"))?;
        while t < series.len() && series.get(t).time() != time {
            t += 1;
        }
        if t == series.len() {
            return Err(parse_err(row, format!("time {time} not in the series")));
        }
        let vals: Vec<f64> = (2..2 + k)
            .map(|j| record[j].parse::<f64>().map_err(|_| parse_err(row, "bad gamma")))
            .collect::<Result<_>>()?;
        let sum: f64 = vals.iter().sum();
        if (sum - 1.0).abs() > 1e-10 || vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(parse_err(row, format!("responsibilities sum to {sum}")));
        }
        gamma[t].extend(vals);
    }
    Responsibilities::from_gamma(series, k, gamma)
}

/// `T x K` biomass per cluster, plus optional summed cluster subsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiomassTable {
    pub times: Vec<f64>,
    pub columns: Vec<String>,
    /// `values[t][j]` for column `j`.
    pub values: Vec<Vec<f64>>,
}

/// Entry `(t, k)` is `n̂_tk`; each subset (0-based cluster indices) adds a
/// column holding the sum of its members.
pub fn cluster_biomass(series: &CytoSeries, resp: &Responsibilities, subsets: &[Vec<usize>]) -> Result<BiomassTable> {
    if resp.len() != series.len() {
        return Err(Error::DimensionMismatch("responsibilities do not match the series".into()));
    }
    let k = resp.k();
    if let Some(bad) = subsets.iter().flatten().find(|&&j| j >= k) {
        return Err(Error::invalid(format!("cluster {} out of range", bad + 1)));
    }
    let mut columns: Vec<String> = (1..=k).map(|j| format!("cluster{j}")).collect();
    columns.extend(subsets.iter().map(|s| {
        let names: Vec<String> = s.iter().map(|j| (j + 1).to_string()).collect();
        format!("clusters{}", names.join("+"))
    }));
    let values = resp
        .cluster_mass()
        .iter()
        .map(|mass| {
            let mut row = mass.clone();
            row.extend(subsets.iter().map(|s| s.iter().map(|&j| mass[j]).sum::<f64>()));
            row
        })
        .collect();
    Ok(BiomassTable {
        times: series.times(),
        columns,
        values,
    })
}

pub fn biomass_to_csv(table: &BiomassTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time".to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    for (t, row) in table.times.iter().zip(&table.values) {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

/// Cluster-by-population table, each population column normalized to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Sorted lexicographically.
    pub populations: Vec<String>,
    /// `values[k][p]`.
    pub values: Vec<Vec<f64>>,
    /// Populations with zero total weight; their columns are all zero.
    pub empty: Vec<String>,
}

pub fn confusion_matrix(
    series: &CytoSeries,
    resp: &Responsibilities,
    labels: &[Vec<String>],
) -> Result<ConfusionMatrix> {
    if labels.len() != series.len() || resp.len() != series.len() {
        return Err(Error::DimensionMismatch("labels, responsibilities and series differ".into()));
    }
    let k = resp.k();
    let mut mass: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (t, c) in series.iter().enumerate() {
        if labels[t].len() != c.len() {
            return Err(Error::DimensionMismatch(format!("time index {t}: label count differs")));
        }
        for (i, label) in labels[t].iter().enumerate() {
            let col = mass.entry(label.as_str()).or_insert_with(|| vec![0.0; k]);
            let w = c.weight(i);
            for (m, g) in col.iter_mut().zip(resp.row(t, i)) {
                *m += w * g;
            }
        }
    }
    let populations: Vec<String> = mass.keys().map(|s| s.to_string()).collect();
    let mut values = vec![vec![0.0; populations.len()]; k];
    let mut empty = Vec::new();
    for (p, (name, col)) in mass.iter().enumerate() {
        let total: f64 = col.iter().sum();
        if total > 0.0 {
            for j in 0..k {
                values[j][p] = col[j] / total;
            }
        } else {
            empty.push(name.to_string());
        }
    }
    Ok(ConfusionMatrix {
        populations,
        values,
        empty,
    })
}

pub fn confusion_to_csv(cm: &ConfusionMatrix) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["cluster".to_string()];
    header.extend(cm.populations.iter().cloned());
    w.write_record(&header)?;
    for (j, row) in cm.values.iter().enumerate() {
        let mut rec = vec![(j + 1).to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

/// Rows `method,scenario_param,run,rand_index`.
pub fn bench_to_csv(results: &[BenchResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "scenario_param", "run", "rand_index"])?;
    for r in results {
        for s in &r.scores {
            w.write_record([
                s.method.to_string(),
                s.scenario_param.to_string(),
                s.run.to_string(),
                s.rand_index.to_string(),
            ])?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

/// Per-time table of the theory report for plotting.
pub fn theory_to_csv(report: &TheoryReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let cells = ["lin0", "lin1", "av0", "av1"];
    let mut header: Vec<String> = vec!["t".into(), "interior".into()];
    for c in cells {
        for f in ["bias", "bias_se", "exact_bias", "variance", "variance_se"] {
            header.push(format!("{c}_{f}"));
        }
    }
    header.extend(
        [
            "variance_formula",
            "mse_lin",
            "mse_av",
            "mse_gap",
            "mse_gap_se",
            "exact_mse_gap",
            "epe_lin",
            "epe_av",
            "epe_gap",
            "epe_gap_se",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![r.t.to_string(), r.interior.to_string()];
        for c in &r.cells {
            rec.extend([c.bias, c.bias_se, c.exact_bias, c.variance, c.variance_se].map(|v| v.to_string()));
        }
        rec.extend(
            [
                r.variance_formula,
                r.mse_lin,
                r.mse_av,
                r.mse_gap,
                r.mse_gap_se,
                r.exact_mse_gap,
                r.epe_lin,
                r.epe_av,
                r.epe_gap,
                r.epe_gap_se,
            ]
            .map(|v| v.to_string()),
        );
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_rows_by_time() {
        let text = "time,x1,weight\n0,1.5,2\n0,2.5,1\n1,0,1\n1,3,0.5\n1,4,1\n";
        let data = read_series(text.as_bytes()).unwrap();
        assert_eq!(data.series.len(), 2);
        assert_eq!(data.series.get(0).len(), 2);
        assert_eq!(data.series.get(1).len(), 3);
        assert_eq!(data.series.get(1).weight(1), 0.5);
        assert!(data.labels.is_none());
    }

    #[test]
    fn missing_weight_column_means_unit_weights() {
        let text = "time,x1,x2,label\n0,1,2,a\n0,3,4,b\n";
        let data = read_series(text.as_bytes()).unwrap();
        assert_eq!(data.series.get(0).weights(), &[1.0, 1.0]);
        assert_eq!(data.labels.unwrap()[0], vec!["a", "b"]);
    }

    #[test]
    fn parse_errors_carry_rows() {
        let cases = [
            ("time,x1\n0,1\n0,nan\n", 3),
            ("time,x1,weight\n0,1,1\n0,2,-1\n", 3),
            ("time,x1\n1,1\n0,2\n", 3),
            ("time,x1\n0,1\n0,1,2\n", 3),
            ("time,x1\n0,abc\n", 2),
        ];
        for (text, want) in cases {
            match read_series(text.as_bytes()) {
                Err(Error::Parse { row, .. }) => assert_eq!(row, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(read_series("t,x1\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn series_round_trip_is_exact() {
        let c0 = Cytogram::new(0.1, 2, vec![0.1, 1.0 / 3.0, -2.5e-17, 7.0], vec![1.0, 0.3]).unwrap();
        let c1 = Cytogram::new(2.0 / 3.0, 2, vec![1e300, -1e-300], vec![5.5]).unwrap();
        let data = LabeledSeries::labeled(
            CytoSeries::new(vec![c0, c1]).unwrap(),
            vec![vec!["x".into(), "y z".into()], vec!["x".into()]],
        )
        .unwrap();
        let bytes = series_to_csv(&data).unwrap();
        let back = read_series(bytes.as_slice()).unwrap();
        assert_eq!(back, data);
        assert_eq!(series_to_csv(&back).unwrap(), bytes);
    }

    fn one_time_series() -> CytoSeries {
        CytoSeries::new(vec![Cytogram::new(0.0, 1, vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0]).unwrap()]).unwrap()
    }

    #[test]
    fn biomass_rows_sum_and_subsets_add() {
        let series = one_time_series();
        let gamma = vec![vec![0.2, 0.3, 0.5, 0.1, 0.1, 0.8, 1.0, 0.0, 0.0]];
        let resp = Responsibilities::from_gamma(&series, 3, gamma).unwrap();
        let table = cluster_biomass(&series, &resp, &[vec![0, 2]]).unwrap();
        let row = &table.values[0];
        assert!((row[0] + row[1] + row[2] - 6.0).abs() < 1e-12);
        assert_eq!(row[3], row[0] + row[2]);
        assert_eq!(table.columns[3], "clusters1+3");
        assert!(cluster_biomass(&series, &resp, &[vec![3]]).is_err());
    }

    #[test]
    fn confusion_columns_normalize() {
        let series = one_time_series();
        let labels = vec![vec!["b".to_string(), "a".into(), "b".into()]];
        let onehot = Responsibilities::from_gamma(&series, 2, vec![vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]]).unwrap();
        let cm = confusion_matrix(&series, &onehot, &labels).unwrap();
        assert_eq!(cm.populations, vec!["a", "b"]);
        assert_eq!(cm.values, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let uniform = Responsibilities::from_gamma(&series, 2, vec![vec![0.5; 6]]).unwrap();
        let cm = confusion_matrix(&series, &uniform, &labels).unwrap();
        assert!(cm.values.iter().flatten().all(|v| *v == 0.5));
    }

    #[test]
    fn empty_population_is_flagged() {
        let series = CytoSeries::new(vec![Cytogram::new(0.0, 1, vec![0.0, 1.0], vec![1.0, 0.0]).unwrap()]).unwrap();
        let resp = Responsibilities::from_gamma(&series, 2, vec![vec![0.5, 0.5, 0.5, 0.5]]).unwrap();
        let cm = confusion_matrix(&series, &resp, &[vec!["kept".into(), "gone".into()]]).unwrap();
        assert_eq!(cm.empty, vec!["gone"]);
        assert_eq!(cm.values[0][0], 0.0);
    }

    #[test]
    fn responsibilities_csv_round_trip() {
        let series = one_time_series();
        let resp = Responsibilities::from_gamma(&series, 2, vec![vec![0.25, 0.75, 1.0 / 3.0, 2.0 / 3.0, 1.0, 0.0]]).unwrap();
        let bytes = responsibilities_to_csv(&series, &resp).unwrap();
        assert_eq!(read_responsibilities(bytes.as_slice(), &series).unwrap(), resp);
        let bad = "time,point,gamma1,gamma2\n0,0,0.5,0.6\n";
        assert!(read_responsibilities(bad.as_bytes(), &series).is_err());
    }
}
