use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::PerturbationBasis;
use crate::error::{check_len, Error, Result};
use crate::fem::FunctionSpace;
use crate::hyper_init::field_correlation_length;
use crate::prior::PriorModel;

pub const DEFAULT_Q: usize = 200;

/// Correlation length of a nodal field, averaged over time snapshots for
/// space-time fields. Constant fields report the domain diameter.
pub fn field_length(space: &FunctionSpace, values: &[f64]) -> Result<f64> {
    check_len("field", space.dim(), values.len())?;
    let ns = space.n_space();
    let mut total = 0.0;
    let mut count = 0usize;
    for snap in values.chunks(ns) {
        match field_correlation_length(snap, space.mesh(), None) {
            Ok(k) => {
                total += k;
                count += 1;
            }
            Err(Error::DegenerateField(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(if count == 0 {
        space.mesh().diameter()
    } else {
        total / count as f64
    })
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Prior draws `δ(z̃,θ_i)` and their responses to the basis perturbations.
///
/// The difference `δ(z̃+Δz_k,θ_i) − δ(z̃,θ_i)` is `c_k v_i` with one state
/// draw `v_i` per sample and `c_k = √α_z √s(Δz_k)`, so only `Q` fields of
/// each kind are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDataset {
    pub seed: u64,
    pub basis: PerturbationBasis,
    pub scales: Vec<f64>,
    pub control_lengths: Vec<f64>,
    pub base: Vec<Vec<f64>>,
    pub variation: Vec<Vec<f64>>,
    pub base_max_abs: Vec<f64>,
    pub base_lengths: Vec<f64>,
    pub variation_max_abs: Vec<f64>,
}

/// One `(i, k)` record with its nodal fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub i: usize,
    pub k: usize,
    pub dz: DVector<f64>,
    pub delta: DVector<f64>,
    pub difference: DVector<f64>,
    pub delta_max_abs: f64,
    pub difference_max_abs: f64,
    pub dz_length: f64,
    pub delta_length: f64,
}

impl SampleDataset {
    /// `q` draws; draw `i` uses `seed + i`.
    pub fn generate(prior: &PriorModel, basis: PerturbationBasis, q: usize, seed: u64) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidInput("sample count must be at least 1".into()));
        }
        let draws = (0..q as u64)
            .into_par_iter()
            .map(|i| prior.delta_field_parts(seed.wrapping_add(i)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_draws(prior, basis, draws, seed)
    }

    /// Builds a dataset from given `(δ(z̃,θ_i), unit variation)` pairs.
    pub fn from_draws(
        prior: &PriorModel,
        basis: PerturbationBasis,
        draws: Vec<(DVector<f64>, DVector<f64>)>,
        seed: u64,
    ) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::DegeneratePerturbation("perturbation basis is empty".into()));
        }
        let state = prior.state();
        let control = prior.control();
        let scales = (0..basis.len())
            .map(|k| prior.variation_scale(&basis.direction(k)))
            .collect::<Result<Vec<_>>>()?;
        let control_lengths = basis
            .directions
            .par_iter()
            .map(|d| field_length(control, d))
            .collect::<Result<Vec<_>>>()?;
        for (b, v) in &draws {
            check_len("sample field", state.dim(), b.len())?;
            check_len("variation field", state.dim(), v.len())?;
        }
        let base_lengths = draws
            .par_iter()
            .map(|(b, _)| field_length(state, b.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        let base_max_abs = draws.iter().map(|(b, _)| max_abs(b)).collect();
        let variation_max_abs = draws.iter().map(|(_, v)| max_abs(v)).collect();
        let (base, variation) = draws
            .into_iter()
            .map(|(b, v)| (b.as_slice().to_vec(), v.as_slice().to_vec()))
            .unzip();
        Ok(Self {
            seed,
            basis,
            scales,
            control_lengths,
            base,
            variation,
            base_max_abs,
            base_lengths,
            variation_max_abs,
        })
    }

    pub fn q(&self) -> usize {
        self.base.len()
    }

    pub fn p(&self) -> usize {
        self.basis.len()
    }

    pub fn n_records(&self) -> usize {
        self.q() * self.p()
    }

    pub fn difference_max_abs(&self, i: usize, k: usize) -> f64 {
        self.scales[k] * self.variation_max_abs[i]
    }

    pub fn difference(&self, i: usize, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.variation[i]) * self.scales[k]
    }

    pub fn record(&self, i: usize, k: usize) -> Result<SampleRecord> {
        if i >= self.q() || k >= self.p() {
            return Err(Error::NotFound(format!(
                "record ({i}, {k}) outside {} samples x {} modes",
                self.q(),
                self.p()
            )));
        }
        let delta = DVector::from_column_slice(&self.base[i]);
        let difference = self.difference(i, k);
        Ok(SampleRecord {
            i,
            k,
            dz: self.basis.direction(k),
            delta_max_abs: max_abs(&delta),
            difference_max_abs: max_abs(&difference),
            delta,
            difference,
            dz_length: self.control_lengths[k],
            delta_length: self.base_lengths[i],
        })
    }
}
