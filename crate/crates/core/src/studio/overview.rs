use serde::{Deserialize, Serialize};

use super::dataset::SampleDataset;
use crate::error::{Error, Result};

pub const MAX_BINS: usize = 12;
/// Bins with fewer points than this also carry their raw values.
pub const RAW_POINT_LIMIT: usize = 500;
const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    State,
    Control,
}

impl std::str::FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state" => Ok(View::State),
            "control" => Ok(View::Control),
            other => Err(Error::UnsupportedView(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverviewPoint {
    pub i: usize,
    pub k: Option<usize>,
    pub length: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverviewBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean correlation length of the members, used as the bin label.
    pub label: Option<f64>,
    /// Max-abs quantiles at 5, 25, 50, 75 and 95 percent.
    pub quantiles: Option<[f64; 5]>,
    pub points: Option<Vec<OverviewPoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverviewPayload {
    pub view: View,
    pub stale: bool,
    pub seed: u64,
    pub q: usize,
    pub p: usize,
    pub total: usize,
    pub edges: Vec<f64>,
    pub bins: Vec<OverviewBin>,
}

impl OverviewPayload {
    /// Bin with the largest correlation lengths that holds any record.
    pub fn lowest_frequency_bin(&self) -> Option<&OverviewBin> {
        self.bins.iter().rev().find(|b| b.count > 0)
    }

    pub fn highest_frequency_bin(&self) -> Option<&OverviewBin> {
        self.bins.iter().find(|b| b.count > 0)
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-width bins over the observed correlation lengths, `min(P, 12)`
/// of them, with max-abs quantiles per bin.
pub fn build_overview(data: &SampleDataset, view: View, stale: bool) -> Result<OverviewPayload> {
    let points: Vec<OverviewPoint> = match view {
        View::Control => (0..data.q())
            .flat_map(|i| {
                (0..data.p()).map(move |k| OverviewPoint {
                    i,
                    k: Some(k),
                    length: data.control_lengths[k],
                    value: data.difference_max_abs(i, k),
                })
            })
            .collect(),
        View::State => (0..data.q())
            .map(|i| OverviewPoint {
                i,
                k: None,
                length: data.base_lengths[i],
                value: data.base_max_abs[i],
            })
            .collect(),
    };
    if points.is_empty() {
        return Err(Error::NoData);
    }
    let lo = points.iter().map(|p| p.length).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.length).fold(f64::NEG_INFINITY, f64::max);
    let n_bins = if hi > lo { data.p().clamp(1, MAX_BINS) } else { 1 };
    let width = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..n_bins).map(|b| lo + b as f64 * width).collect();
    edges.push(hi);

    let mut members: Vec<Vec<OverviewPoint>> = vec![Vec::new(); n_bins];
    for p in points {
        let b = if width > 0.0 {
            (((p.length - lo) / width).floor() as usize).min(n_bins - 1)
        } else {
            0
        };
        members[b].push(p);
    }
    let total = members.iter().map(Vec::len).sum();
    let bins = members
        .into_iter()
        .enumerate()
        .map(|(b, pts)| {
            let count = pts.len();
            if count == 0 {
                return OverviewBin {
                    lower: edges[b],
                    upper: edges[b + 1],
                    count,
                    label: None,
                    quantiles: None,
                    points: Some(pts),
                };
            }
            let mut values: Vec<f64> = pts.iter().map(|p| p.value).collect();
            values.sort_by(f64::total_cmp);
            let label = pts.iter().map(|p| p.length).sum::<f64>() / count as f64;
            OverviewBin {
                lower: edges[b],
                upper: edges[b + 1],
                count,
                label: Some(label),
                quantiles: Some(QUANTILES.map(|q| quantile(&values, q))),
                points: (count < RAW_POINT_LIMIT).then_some(pts),
            }
        })
        .collect();
    Ok(OverviewPayload {
        view,
        stale,
        seed: data.seed,
        q: data.q(),
        p: data.p(),
        total,
        edges,
        bins,
    })
}
