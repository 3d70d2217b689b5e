//! Histogram and force-range summaries for the CLI `stats` report.

use std::fmt::Write;

use crate::dataset::balance::{bin_ratio, histogram};
use crate::dataset::container::indenter_name;
use crate::dataset::sample::Dataset;
use crate::report::fmt6;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub count: usize,
    /// Min and max of each force axis.
    pub force_range: [(f64, f64); 3],
    /// `(indenter, bin, count)` rows.
    pub bins: Vec<(u16, i64, usize)>,
    pub bin_width: f64,
}

impl DatasetStats {
    pub fn compute(data: &Dataset, bin_width: f64) -> Self {
        let mut force_range = [(f64::INFINITY, f64::NEG_INFINITY); 3];
        for s in &data.samples {
            for (r, &f) in force_range.iter_mut().zip(&s.force) {
                r.0 = r.0.min(f as f64);
                r.1 = r.1.max(f as f64);
            }
        }
        if data.is_empty() {
            force_range = [(0.0, 0.0); 3];
        }
        let mut codes: Vec<u16> = data.samples.iter().map(|s| s.indenter).collect();
        codes.sort_unstable();
        codes.dedup();
        let mut bins = Vec::new();
        for code in codes {
            for (b, n) in histogram(data.samples.iter().filter(|s| s.indenter == code), bin_width) {
                bins.push((code, b, n));
            }
        }
        Self {
            count: data.len(),
            force_range,
            bins,
            bin_width,
        }
    }

    /// Max/min nonempty-bin ratio of one indenter inside `[lo, hi]` N.
    pub fn ratio(&self, indenter: u16, lo: f64, hi: f64) -> Option<f64> {
        let hist: Vec<(i64, usize)> = self
            .bins
            .iter()
            .filter(|b| b.0 == indenter)
            .map(|&(_, b, n)| (b, n))
            .collect();
        bin_ratio(&hist, self.bin_width, lo, hi)
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("indenter,bin_lo_n,bin_hi_n,count\n");
        for &(code, b, n) in &self.bins {
            let lo = b as f64 * self.bin_width;
            writeln!(out, "{},{},{},{n}", indenter_name(code), fmt6(lo), fmt6(lo + self.bin_width)).unwrap();
        }
        out
    }

    pub fn summary(&self, lo: f64, hi: f64) -> String {
        let mut out = format!("samples: {}\n", self.count);
        for (axis, (a, b)) in ["Fx", "Fy", "Fz"].iter().zip(self.force_range) {
            writeln!(out, "{axis} range: [{}, {}] N", fmt6(a), fmt6(b)).unwrap();
        }
        let mut codes: Vec<u16> = self.bins.iter().map(|b| b.0).collect();
        codes.dedup();
        for code in codes {
            match self.ratio(code, lo, hi) {
                Some(r) => writeln!(out, "{}: max/min bin ratio in [{lo}, {hi}] N = {}", indenter_name(code), fmt6(r)),
                None => writeln!(out, "{}: no bins in [{lo}, {hi}] N", indenter_name(code)),
            }
            .unwrap();
        }
        out
    }
}
