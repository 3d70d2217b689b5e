//! Per-indenter histogram balancing on `F^z`.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::sample::{Dataset, TactileSample};
use crate::error::{FafError, Result};

pub const DEFAULT_BIN_WIDTH: f64 = 0.5;

pub fn bin_of(fz: f64, width: f64) -> i64 {
    (fz / width).floor() as i64
}

/// Median of the counts: the middle element, or the floor of the mean of the two middle ones.
pub fn median_count(counts: &[usize]) -> usize {
    let mut c = counts.to_vec();
    c.sort_unstable();
    let n = c.len();
    match n {
        0 => 0,
        _ if n % 2 == 1 => c[n / 2],
        _ => (c[n / 2 - 1] + c[n / 2]) / 2,
    }
}

/// Indices (ascending) of the samples kept after balancing.
pub fn balance_indices(samples: &[TactileSample], bin_width: f64, seed: u64) -> Result<Vec<usize>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(FafError::Contract(format!("bin width must be positive, got {bin_width}")));
    }
    let mut groups: BTreeMap<u16, BTreeMap<i64, Vec<usize>>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups
            .entry(s.indenter)
            .or_default()
            .entry(bin_of(s.fz(), bin_width))
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(samples.len());
    for bins in groups.values() {
        let counts: Vec<usize> = bins.values().map(Vec::len).collect();
        let cap = median_count(&counts);
        for members in bins.values() {
            if members.len() <= cap {
                keep.extend_from_slice(members);
            } else {
                keep.extend(index::sample(&mut rng, members.len(), cap).into_iter().map(|k| members[k]));
            }
        }
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Cap every nonempty `F^z` bin of each indenter at that indenter's median bin count.
pub fn balance(data: &Dataset, bin_width: f64, seed: u64) -> Result<Dataset> {
    Ok(data.subset(&balance_indices(&data.samples, bin_width, seed)?))
}

/// `(bin index, count)` of the `F^z` histogram, ascending.
pub fn histogram<'a>(samples: impl IntoIterator<Item = &'a TactileSample>, bin_width: f64) -> Vec<(i64, usize)> {
    let mut h: BTreeMap<i64, usize> = BTreeMap::new();
    for s in samples {
        *h.entry(bin_of(s.fz(), bin_width)).or_default() += 1;
    }
    h.into_iter().collect()
}

/// Max/min count ratio over the nonempty bins lying entirely inside `[lo, hi]`.
pub fn bin_ratio(hist: &[(i64, usize)], bin_width: f64, lo: f64, hi: f64) -> Option<f64> {
    let inside: Vec<usize> = hist
        .iter()
        .filter(|&&(b, n)| {
            let start = b as f64 * bin_width;
            n > 0 && start >= lo - 1e-9 && start + bin_width <= hi + 1e-9
        })
        .map(|&(_, n)| n)
        .collect();
    let (min, max) = (inside.iter().min()?, inside.iter().max()?);
    Some(*max as f64 / *min as f64)
}
