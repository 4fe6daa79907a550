//! Jensen-Shannon divergence between the directed-edge traversal
//! distributions of two trajectory sets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::experience::TrajectoryRecord;
use crate::grid::Cell;

fn edge_counts(records: &[TrajectoryRecord]) -> BTreeMap<(Cell, Cell), u64> {
    let mut counts = BTreeMap::new();
    for record in records {
        for step in &record.steps {
            *counts.entry((step.state, step.realized_state)).or_insert(0) += 1;
        }
    }
    counts
}

/// JSD (base 2, in [0, 1]) between two smoothed edge distributions.
/// Add-one smoothing over the union support keeps both distributions
/// absolutely continuous with respect to their mixture.
pub fn js_divergence(a: &[TrajectoryRecord], b: &[TrajectoryRecord]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter(
            "JSD needs two non-empty trajectory sets".into(),
        ));
    }
    let counts_a = edge_counts(a);
    let counts_b = edge_counts(b);
    let support: Vec<(Cell, Cell)> = {
        let mut keys: Vec<_> = counts_a.keys().chain(counts_b.keys()).copied().collect();
        keys.sort_unstable();
        keys.dedup();
        keys
    };
    if support.is_empty() {
        return Err(Error::InvalidParameter(
            "JSD needs at least one traversed edge".into(),
        ));
    }

    let smooth = |counts: &BTreeMap<(Cell, Cell), u64>| -> Vec<f64> {
        let total: u64 = counts.values().sum::<u64>() + support.len() as u64;
        support
            .iter()
            .map(|e| (counts.get(e).copied().unwrap_or(0) + 1) as f64 / total as f64)
            .collect()
    };
    let p = smooth(&counts_a);
    let q = smooth(&counts_b);

    let mut jsd = 0.0;
    for (pi, qi) in p.iter().zip(&q) {
        let mi = 0.5 * (pi + qi);
        jsd += 0.5 * pi * (pi / mi).log2() + 0.5 * qi * (qi / mi).log2();
    }
    // Clamp away the negative rounding dust of an identical pair.
    Ok(jsd.max(0.0))
}
