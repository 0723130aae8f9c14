//! Daily regional counts to smoothed log-risk panels, in hard and soft form.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::spline::SmoothingSpline;

pub const DEFAULT_NODES: usize = 265;
pub const DEFAULT_LOG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    #[default]
    Hard,
    Soft,
}

impl std::fmt::Display for DataMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataMode::Hard => "hard",
            DataMode::Soft => "soft",
        })
    }
}

/// Raw daily new counts, one column per region.
#[derive(Debug, Clone, PartialEq)]
pub struct CountPanel {
    pub region_ids: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// `counts[day][region]`.
    pub counts: Vec<Vec<u64>>,
}

impl CountPanel {
    pub fn new(region_ids: Vec<String>, dates: Vec<NaiveDate>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if region_ids.is_empty() || dates.is_empty() {
            return Err(Error::InvalidInput("count panel needs at least one region and one day".into()));
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("dates must be strictly increasing".into()));
        }
        if counts.len() != dates.len() || counts.iter().any(|r| r.len() != region_ids.len()) {
            return Err(Error::DimensionMismatch(format!(
                "counts must be {}x{}",
                dates.len(),
                region_ids.len()
            )));
        }
        Ok(Self {
            region_ids,
            dates,
            counts,
        })
    }

    pub fn days(&self) -> usize {
        self.dates.len()
    }

    pub fn regions(&self) -> usize {
        self.region_ids.len()
    }

    /// Day offsets from the first date.
    pub fn day_offsets(&self) -> Vec<f64> {
        let first = self.dates[0];
        self.dates
            .iter()
            .map(|d| (*d - first).num_days() as f64)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut rows = Vec::new();
        for (d, date) in self.dates.iter().enumerate() {
            for (p, region) in self.region_ids.iter().enumerate() {
                rows.push(vec![
                    date.format("%Y-%m-%d").to_string(),
                    region.clone(),
                    self.counts[d][p].to_string(),
                ]);
            }
        }
        io::write_rows(
            path,
            &["date".into(), "region".into(), "count".into()],
            &rows,
        )
    }
}

/// Column names of the counts CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSchema {
    pub date: String,
    pub region: String,
    pub count: String,
}

impl Default for CountSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            region: "region".into(),
            count: "count".into(),
        }
    }
}

/// Reads `date,region,count` records; absent (date, region) cells become zero.
pub fn parse_counts(path: &Path, schema: &CountSchema) -> Result<CountPanel> {
    let label = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io::csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| io::csv_err(path, e))?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: label.clone(),
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let (ci_date, ci_region, ci_count) = (col(&schema.date)?, col(&schema.region)?, col(&schema.count)?);

    let mut regions: Vec<String> = Vec::new();
    let mut region_index: HashMap<String, usize> = HashMap::new();
    let mut cells: BTreeMap<NaiveDate, HashMap<usize, (u64, usize)>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| io::csv_err(path, e))?;
        let field = |idx: usize| {
            rec.get(idx).ok_or_else(|| Error::Parse {
                path: label.clone(),
                line,
                message: format!("expected at least {} fields, found {}", idx + 1, rec.len()),
            })
        };
        let date_s = field(ci_date)?;
        let date = NaiveDate::parse_from_str(date_s, "%Y-%m-%d").map_err(|e| Error::Parse {
            path: label.clone(),
            line,
            message: format!("bad date {date_s:?}: {e}"),
        })?;
        let region = field(ci_region)?.to_string();
        if region.is_empty() {
            return Err(Error::Parse {
                path: label.clone(),
                line,
                message: "empty region".into(),
            });
        }
        let count_s = field(ci_count)?;
        let count: u64 = count_s.parse().map_err(|_| Error::Parse {
            path: label.clone(),
            line,
            message: format!("count must be a non-negative integer, got {count_s:?}"),
        })?;
        let ri = *region_index.entry(region.clone()).or_insert_with(|| {
            regions.push(region.clone());
            regions.len() - 1
        });
        let day = cells.entry(date).or_default();
        if day.insert(ri, (count, line)).is_some() {
            return Err(Error::Conflict {
                date: date.format("%Y-%m-%d").to_string(),
                region,
                line,
            });
        }
    }
    if cells.is_empty() {
        return Err(Error::NoRecords(label));
    }
    let dates: Vec<NaiveDate> = cells.keys().copied().collect();
    let counts = cells
        .values()
        .map(|day| {
            (0..regions.len())
                .map(|r| day.get(&r).map_or(0, |c| c.0))
                .collect()
        })
        .collect();
    CountPanel::new(regions, dates, counts)
}

/// Running totals per region, `D x P`.
pub fn cumulative_curve(panel: &CountPanel) -> DMatrix<f64> {
    let (d, p) = (panel.days(), panel.regions());
    let mut out = DMatrix::zeros(d, p);
    for r in 0..p {
        let mut acc = 0.0;
        for t in 0..d {
            acc += panel.counts[t][r] as f64;
            out[(t, r)] = acc;
        }
    }
    out
}

/// Smoothed curves and their non-negative derivatives on the node grid.
#[derive(Debug, Clone)]
pub struct SmoothedCurves {
    pub node_times: Vec<f64>,
    pub values: DMatrix<f64>,
    pub derivatives: DMatrix<f64>,
    /// Selected smoothing parameter per region.
    pub lambdas: Vec<f64>,
}

pub fn equispaced(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (end - start) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { end } else { start + step * i as f64 })
        .collect()
}

/// Fits a GCV smoothing spline per region and samples it (and its clamped derivative) at `nodes` equispaced times.
pub fn smooth_and_sample(cumulative: &DMatrix<f64>, days: &[f64], nodes: usize) -> Result<SmoothedCurves> {
    let d = cumulative.nrows();
    if days.len() != d {
        return Err(Error::DimensionMismatch(format!("{} day offsets for {} rows", days.len(), d)));
    }
    if d < 4 {
        return Err(Error::InsufficientData(format!(
            "cubic smoothing needs at least 4 days, got {d}"
        )));
    }
    if nodes < d {
        return Err(Error::InvalidInput(format!(
            "node count {nodes} must be at least the number of days {d}"
        )));
    }
    let node_times = equispaced(days[0], days[d - 1], nodes);
    let fits: Vec<SmoothingSpline> = (0..cumulative.ncols())
        .into_par_iter()
        .map(|p| {
            let y: Vec<f64> = cumulative.column(p).iter().copied().collect();
            SmoothingSpline::fit_gcv(days, &y)
        })
        .collect::<Result<_>>()?;
    let p = fits.len();
    let mut values = DMatrix::zeros(nodes, p);
    let mut derivatives = DMatrix::zeros(nodes, p);
    for (r, s) in fits.iter().enumerate() {
        for (i, &t) in node_times.iter().enumerate() {
            values[(i, r)] = s.eval(t);
            derivatives[(i, r)] = s.derivative(t).max(0.0);
        }
    }
    Ok(SmoothedCurves {
        node_times,
        values,
        derivatives,
        lambdas: fits.iter().map(|s| s.lambda).collect(),
    })
}

/// Log-intensity panel on the temporal nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRiskPanel {
    pub node_times: Vec<f64>,
    pub region_ids: Vec<String>,
    /// `values[(t, p)]`.
    pub values: DMatrix<f64>,
    pub mode: DataMode,
}

impl LogRiskPanel {
    pub fn new(node_times: Vec<f64>, region_ids: Vec<String>, values: DMatrix<f64>, mode: DataMode) -> Result<Self> {
        if values.nrows() != node_times.len() || values.ncols() != region_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "panel values {}x{} vs {} nodes and {} regions",
                values.nrows(),
                values.ncols(),
                node_times.len(),
                region_ids.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("log-risk panel contains non-finite values".into()));
        }
        Ok(Self {
            node_times,
            region_ids,
            values,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.node_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_times.is_empty()
    }

    pub fn regions(&self) -> usize {
        self.region_ids.len()
    }

    pub fn column(&self, p: usize) -> Vec<f64> {
        self.values.column(p).iter().copied().collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_time_table(path, &self.node_times, &self.region_ids, &self.values)
    }

    pub fn read_csv(path: &Path, mode: DataMode) -> Result<Self> {
        let (times, ids, values) = io::read_time_table(path)?;
        Self::new(times, ids, values, mode)
    }
}

/// `ln(max(intensity, floor))`, elementwise.
pub fn log_transform(
    node_times: Vec<f64>,
    region_ids: Vec<String>,
    intensity: &DMatrix<f64>,
    floor: f64,
) -> Result<LogRiskPanel> {
    if !(floor > 0.0) {
        return Err(Error::InvalidInput(format!("log floor must be positive, got {floor}")));
    }
    let values = intensity.map(|v| v.max(floor).ln());
    LogRiskPanel::new(node_times, region_ids, values, DataMode::Hard)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightingKind {
    Identity,
    GaussianKernel { bandwidth: f64, centroids: Vec<Vec<f64>> },
    Custom,
}

/// Row-stochastic `P x P` spatial weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeighting {
    pub matrix: DMatrix<f64>,
    pub kind: WeightingKind,
}

impl SpatialWeighting {
    pub fn identity(p: usize) -> Self {
        Self {
            matrix: DMatrix::identity(p, p),
            kind: WeightingKind::Identity,
        }
    }

    /// Gaussian kernel over region centroids, each row normalized to sum to one.
    pub fn gaussian_kernel(centroids: Vec<Vec<f64>>, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let p = centroids.len();
        if p == 0 {
            return Err(Error::InvalidInput("no centroids".into()));
        }
        let dim = centroids[0].len();
        if centroids.iter().any(|c| c.len() != dim || c.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("centroids must share a dimension and be finite".into()));
        }
        let mut m = DMatrix::zeros(p, p);
        for i in 0..p {
            let d2: Vec<f64> = (0..p)
                .map(|j| {
                    centroids[i]
                        .iter()
                        .zip(&centroids[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .collect();
            let dmin = d2.iter().copied().fold(f64::INFINITY, f64::min);
            let w: Vec<f64> = d2
                .iter()
                .map(|d| (-(d - dmin) / (2.0 * bandwidth * bandwidth)).exp())
                .collect();
            let s: f64 = w.iter().sum();
            for j in 0..p {
                m[(i, j)] = w[j] / s;
            }
        }
        Ok(Self {
            matrix: m,
            kind: WeightingKind::GaussianKernel {
                bandwidth,
                centroids,
            },
        })
    }

    /// User-supplied non-negative weights; rows are renormalized to sum to one.
    pub fn custom(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch("weighting matrix must be square".into()));
        }
        if matrix.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        let mut m = matrix;
        for mut row in m.row_iter_mut() {
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(Error::InvalidInput("weighting row sums to zero".into()));
            }
            row /= s;
        }
        Ok(Self {
            matrix: m,
            kind: WeightingKind::Custom,
        })
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, WeightingKind::Identity)
    }

    /// Reads a `P x P` matrix whose header row holds the region ids, reordered to `region_ids`.
    pub fn read_csv(path: &Path, region_ids: &[String]) -> Result<Self> {
        let (labels, m) = io::read_labeled_matrix(path)?;
        if m.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}: {} rows for {} labels",
                path.display(),
                m.nrows(),
                labels.len()
            )));
        }
        let order = reorder(&labels, region_ids)?;
        let p = order.len();
        let perm = DMatrix::from_fn(p, p, |i, j| m[(order[i], order[j])]);
        Self::custom(perm)
    }

    pub fn write_csv(&self, path: &Path, region_ids: &[String]) -> Result<()> {
        io::write_labeled_matrix(path, region_ids, &self.matrix)
    }
}

pub(crate) fn reorder(labels: &[String], wanted: &[String]) -> Result<Vec<usize>> {
    if labels.len() != wanted.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} regions",
            labels.len(),
            wanted.len()
        )));
    }
    wanted
        .iter()
        .map(|w| {
            labels
                .iter()
                .position(|l| l == w)
                .ok_or_else(|| Error::InvalidInput(format!("region {w:?} missing from matrix header")))
        })
        .collect()
}

/// Soft panel: each region's value is the weighted combination of the hard values.
pub fn apply_weighting(panel: &LogRiskPanel, w: &SpatialWeighting) -> Result<LogRiskPanel> {
    if w.size() != panel.regions() {
        return Err(Error::DimensionMismatch(format!(
            "weighting is {}x{} but panel has {} regions",
            w.size(),
            w.size(),
            panel.regions()
        )));
    }
    let values = if w.is_identity() {
        panel.values.clone()
    } else {
        &panel.values * w.matrix.transpose()
    };
    LogRiskPanel::new(panel.node_times.clone(), panel.region_ids.clone(), values, DataMode::Soft)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestOptions {
    pub nodes: usize,
    pub floor: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            nodes: DEFAULT_NODES,
            floor: DEFAULT_LOG_FLOOR,
        }
    }
}

/// Counts to hard log-risk panel: accumulate, smooth, differentiate, log.
pub fn ingest(counts: &CountPanel, opts: &IngestOptions) -> Result<(LogRiskPanel, SmoothedCurves)> {
    let cumulative = cumulative_curve(counts);
    let smoothed = smooth_and_sample(&cumulative, &counts.day_offsets(), opts.nodes)?;
    let panel = log_transform(
        smoothed.node_times.clone(),
        counts.region_ids.clone(),
        &smoothed.derivatives,
        opts.floor,
    )?;
    Ok((panel, smoothed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("counts.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn parse_zero_fills_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "date,region,count\n2020-03-08,R1,2\n2020-03-09,R1,3\n2020-03-08,R2,0\n",
        );
        let panel = parse_counts(&p, &CountSchema::default()).unwrap();
        assert_eq!(panel.region_ids, vec!["R1", "R2"]);
        assert_eq!(panel.days(), 2);
        assert_eq!(panel.counts, vec![vec![2, 0], vec![3, 0]]);
    }

    #[test]
    fn parse_sorts_dates() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "date,region,count\n2020-03-09,A,1\n2020-03-08,A,4\n");
        let panel = parse_counts(&p, &CountSchema::default()).unwrap();
        assert_eq!(panel.counts, vec![vec![4], vec![1]]);
        assert_eq!(panel.day_offsets(), vec![0.0, 1.0]);
    }

    #[test]
    fn parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "date,region,count\n");
        assert!(matches!(parse_counts(&p, &CountSchema::default()), Err(Error::NoRecords(_))));

        let p = write(&dir, "date,region,count\n2020-03-08,R1,2\n2020-03-08,R1,5\n");
        assert!(matches!(
            parse_counts(&p, &CountSchema::default()),
            Err(Error::Conflict { line: 3, .. })
        ));

        let p = write(&dir, "date,region,count\n2020-03-08,R1,2\n2020-03-09,R1,-1\n");
        match parse_counts(&p, &CountSchema::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let p = write(&dir, "date,region,count\nyesterday,R1,2\n");
        assert!(matches!(parse_counts(&p, &CountSchema::default()), Err(Error::Parse { line: 2, .. })));
    }

    fn single_region(counts: &[u64]) -> CountPanel {
        let start = NaiveDate::from_ymd_opt(2020, 3, 8).unwrap();
        let dates = (0..counts.len())
            .map(|i| start + chrono::Duration::days(i as i64))
            .collect();
        CountPanel::new(vec!["A".into()], dates, counts.iter().map(|&c| vec![c]).collect()).unwrap()
    }

    #[test]
    fn cumulative_examples() {
        let c = cumulative_curve(&single_region(&[2, 3, 0]));
        assert_eq!(c.column(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 5.0, 5.0]);
        let z = cumulative_curve(&single_region(&[0, 0, 0, 0]));
        assert!(z.iter().all(|v| *v == 0.0));
        let one = cumulative_curve(&single_region(&[7]));
        assert_eq!(one[(0, 0)], 7.0);
    }

    #[test]
    fn smoothing_linear_cumulative_gives_constant_rate() {
        let days: Vec<f64> = (0..10).map(|d| d as f64).collect();
        let cum = DMatrix::from_fn(10, 1, |i, _| 5.0 * (i as f64 + 1.0));
        let s = smooth_and_sample(&cum, &days, 265).unwrap();
        assert_eq!(s.node_times.len(), 265);
        assert!(s.derivatives.iter().all(|d| (d - 5.0).abs() < 1e-8));
    }

    #[test]
    fn smoothing_reproduces_cubic() {
        let days: Vec<f64> = (0..15).map(|d| d as f64).collect();
        let f = |t: f64| 10.0 + 3.0 * t + 0.5 * t * t + 0.05 * t * t * t;
        let cum = DMatrix::from_fn(15, 1, |i, _| f(i as f64));
        let s = smooth_and_sample(&cum, &days, 265).unwrap();
        for (i, &t) in s.node_times.iter().enumerate() {
            assert!((s.values[(i, 0)] - f(t)).abs() < 1e-8);
            assert!((s.derivatives[(i, 0)] - (3.0 + t + 0.15 * t * t)).abs() < 1e-8);
        }
    }

    #[test]
    fn smoothing_constant_has_zero_rate_and_guards() {
        let days: Vec<f64> = (0..6).map(|d| d as f64).collect();
        let cum = DMatrix::from_element(6, 2, 42.0);
        let s = smooth_and_sample(&cum, &days, 20).unwrap();
        assert!(s.derivatives.iter().all(|d| d.abs() < 1e-9));
        assert!(matches!(
            smooth_and_sample(&DMatrix::zeros(3, 1), &days[..3], 10),
            Err(Error::InsufficientData(_))
        ));
        assert!(smooth_and_sample(&cum, &days, 5).is_err());
    }

    #[test]
    fn log_transform_examples() {
        let inten = DMatrix::from_row_slice(1, 3, &[std::f64::consts::E.powi(2), 0.0, 1e-6]);
        let p = log_transform(vec![0.0], vec!["a".into(), "b".into(), "c".into()], &inten, 1e-6).unwrap();
        assert!((p.values[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((p.values[(0, 1)] - (-13.815510557964274)).abs() < 1e-12);
        assert_eq!(p.values[(0, 2)], 1e-6f64.ln());
        assert!(log_transform(vec![0.0], vec!["a".into(), "b".into(), "c".into()], &inten, 0.0).is_err());
    }

    fn panel(values: DMatrix<f64>) -> LogRiskPanel {
        let t = (0..values.nrows()).map(|i| i as f64).collect();
        let ids = (0..values.ncols()).map(|i| format!("R{i}")).collect();
        LogRiskPanel::new(t, ids, values, DataMode::Hard).unwrap()
    }

    #[test]
    fn weighting_examples() {
        let hard = panel(DMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.37 - 1.0));
        let soft = apply_weighting(&hard, &SpatialWeighting::identity(3)).unwrap();
        assert_eq!(soft.values, hard.values);
        assert_eq!(soft.mode, DataMode::Soft);

        let uni = SpatialWeighting::custom(DMatrix::from_element(3, 3, 1.0)).unwrap();
        let avg = apply_weighting(&hard, &uni).unwrap();
        for t in 0..5 {
            let mean = hard.values.row(t).mean();
            for p in 0..3 {
                assert!((avg.values[(t, p)] - mean).abs() < 1e-12);
            }
        }

        let cents = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]];
        let g = SpatialWeighting::gaussian_kernel(cents, 1e-8).unwrap();
        assert!((&g.matrix - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-9);

        assert!(apply_weighting(&hard, &SpatialWeighting::identity(2)).is_err());
    }

    #[test]
    fn gaussian_rows_are_stochastic() {
        let cents = vec![vec![0.0], vec![0.5], vec![3.0], vec![3.2]];
        let g = SpatialWeighting::gaussian_kernel(cents, 1.0).unwrap();
        for row in g.matrix.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }
}
