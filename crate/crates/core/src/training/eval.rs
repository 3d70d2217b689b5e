//! Force estimators and per-cell error reports.

use std::collections::BTreeMap;

use crate::dataset::{Dataset, DepthNormalizer};
use crate::error::{FafError, Result};
use crate::model::ForceModel;
use crate::report::fmt6;
use crate::sensor::IndenterId;
use crate::training::data::PreparedSet;
use crate::training::loss::normalized_error;

/// Anything that maps recorded tactile samples to 3-axis forces.
pub trait ForceEstimator {
    fn name(&self) -> &str;
    fn estimate(&self, data: &Dataset) -> Result<Vec<[f64; 3]>>;
}

/// Returns the recorded labels.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleEstimator;

impl ForceEstimator for OracleEstimator {
    fn name(&self) -> &str {
        "oracle"
    }

    fn estimate(&self, data: &Dataset) -> Result<Vec<[f64; 3]>> {
        Ok(data.samples.iter().map(|s| s.force_vector().to_array()).collect())
    }
}

/// Runs a trained network on preprocessed images.
#[derive(Clone, Copy, Debug)]
pub struct ModelEstimator<'a> {
    pub model: &'a ForceModel,
    pub batch_size: usize,
}

impl<'a> ModelEstimator<'a> {
    pub fn new(model: &'a ForceModel) -> Self {
        Self { model, batch_size: 64 }
    }
}

impl ForceEstimator for ModelEstimator<'_> {
    fn name(&self) -> &str {
        "model"
    }

    fn estimate(&self, data: &Dataset) -> Result<Vec<[f64; 3]>> {
        let set = PreparedSet::build(data, &DepthNormalizer::identity(), self.model.config.input_size)?;
        let idx: Vec<usize> = (0..set.len()).collect();
        let mut out = Vec::with_capacity(set.len());
        for chunk in idx.chunks(self.batch_size.max(1)) {
            let f = self.model.predict(&set.batch(chunk).images)?;
            out.extend(f.data().chunks(3).map(|r| [r[0], r[1], r[2]]));
        }
        Ok(out)
    }
}

/// Errors of one (profile, indenter) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCell {
    pub profile: String,
    pub indenter: u16,
    pub count: usize,
    pub normalized_error: f64,
    /// Mean absolute error per axis, N.
    pub mae: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
}

fn weighted<'a>(cells: impl Iterator<Item = &'a EvalCell>) -> Option<(usize, f64, [f64; 3])> {
    let (mut n, mut e, mut m) = (0usize, 0.0, [0.0; 3]);
    for c in cells {
        n += c.count;
        e += c.normalized_error * c.count as f64;
        for i in 0..3 {
            m[i] += c.mae[i] * c.count as f64;
        }
    }
    (n > 0).then(|| (n, e / n as f64, m.map(|v| v / n as f64)))
}

/// Split `sensorN-gelM` into its grid coordinates.
fn grid_key(profile: &str) -> (String, String) {
    match profile.split_once("-gel") {
        Some((s, g)) => (s.to_string(), format!("gel{g}")),
        None => (profile.to_string(), "-".to_string()),
    }
}

impl EvalReport {
    pub fn count(&self) -> usize {
        self.cells.iter().map(|c| c.count).sum()
    }

    /// Sample-weighted mean normalized error over all cells.
    pub fn mean_error(&self) -> f64 {
        weighted(self.cells.iter()).map_or(0.0, |w| w.1)
    }

    pub fn mae(&self) -> [f64; 3] {
        weighted(self.cells.iter()).map_or([0.0; 3], |w| w.2)
    }

    pub fn profile_error(&self, profile: &str) -> Option<f64> {
        weighted(self.cells.iter().filter(|c| c.profile == profile)).map(|w| w.1)
    }

    pub fn profiles(&self) -> Vec<String> {
        let mut v: Vec<String> = self.cells.iter().map(|c| c.profile.clone()).collect();
        v.dedup();
        v
    }

    /// One row per cell.
    pub fn cells_csv(&self) -> String {
        let mut out = String::from("profile,indenter,count,normalized_error,mae_x,mae_y,mae_z\n");
        for c in &self.cells {
            let ind = IndenterId::from_code(c.indenter).map_or_else(|| c.indenter.to_string(), |i| i.to_string());
            out += &format!(
                "{},{},{},{},{},{},{}\n",
                c.profile,
                ind,
                c.count,
                fmt6(c.normalized_error),
                fmt6(c.mae[0]),
                fmt6(c.mae[1]),
                fmt6(c.mae[2])
            );
        }
        out
    }

    /// Sensors as rows, gels as columns, per-profile mean normalized error in each cell.
    pub fn grid_csv(&self) -> String {
        let mut grid: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let mut gels: Vec<String> = Vec::new();
        for p in self.profiles() {
            let (s, g) = grid_key(&p);
            if !gels.contains(&g) {
                gels.push(g.clone());
            }
            grid.entry(s).or_default().insert(g, self.profile_error(&p).unwrap_or(0.0));
        }
        gels.sort();
        let mut out = format!("sensor,{},mean\n", gels.join(","));
        for (s, row) in &grid {
            let vals: Vec<String> = gels.iter().map(|g| row.get(g).map_or(String::new(), |&v| fmt6(v))).collect();
            let mean = row.values().sum::<f64>() / row.len() as f64;
            out += &format!("{s},{},{}\n", vals.join(","), fmt6(mean));
        }
        out
    }
}

/// Evaluate `estimator` on `data`, grouped by profile then indenter.
pub fn evaluate(estimator: &dyn ForceEstimator, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(FafError::Contract("evaluation set is empty".into()));
    }
    let pred = estimator.estimate(data)?;
    let mut acc: BTreeMap<(u16, u16), (usize, f64, [f64; 3])> = BTreeMap::new();
    for (s, p) in data.samples.iter().zip(&pred) {
        let truth = s.force_vector().to_array();
        let e = acc.entry((s.profile, s.indenter)).or_default();
        e.0 += 1;
        e.1 += normalized_error(truth, *p);
        for i in 0..3 {
            e.2[i] += (p[i] - truth[i]).abs();
        }
    }
    let cells = acc
        .into_iter()
        .map(|((profile, indenter), (n, e, m))| EvalCell {
            profile: data.profiles.get(profile as usize).cloned().unwrap_or_else(|| profile.to_string()),
            indenter,
            count: n,
            normalized_error: e / n as f64,
            mae: m.map(|v| v / n as f64),
        })
        .collect();
    Ok(EvalReport { cells })
}

/// Relative change of mean error per profile, `(after − before) / before`.
pub fn relative_increments(before: &EvalReport, after: &EvalReport) -> Vec<(String, f64)> {
    before
        .profiles()
        .into_iter()
        .filter_map(|p| {
            let (b, a) = (before.profile_error(&p)?, after.profile_error(&p)?);
            let d = if b > 0.0 { (a - b) / b } else { 0.0 };
            Some((p, d))
        })
        .collect()
}
