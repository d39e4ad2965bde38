use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::json;
use uuid::Uuid;

use super::basis::{perturbation_basis, PerturbationBasis};
use super::dataset::{SampleDataset, DEFAULT_Q};
use super::overview::{build_overview, OverviewPayload, View};
use crate::calibration::{assemble_sensitivity, calibrate, mean_optimum, posterior_optimum_ensemble};
use crate::discrepancy::CalibrationDataset;
use crate::error::{check_len, Error, Result};
use crate::fem::FunctionSpace;
use crate::hyper_init::{initialize, InitOptions, InitReport};
use crate::prior::{HyperParams, PriorModel};
use crate::scenario::{Scenario, ScenarioConfig};

/// Nodal values as served to clients: flat, or one row per time node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValues {
    Flat(Vec<f64>),
    TimeMajor(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldJson {
    pub dim: usize,
    pub nodes: Vec<Vec<f64>>,
    pub values: FieldValues,
}

impl FieldJson {
    pub fn new(space: &FunctionSpace, values: &[f64]) -> Result<Self> {
        check_len("field", space.dim(), values.len())?;
        let values = match space.time() {
            None => FieldValues::Flat(values.to_vec()),
            Some(_) => FieldValues::TimeMajor(values.chunks(space.n_space()).map(<[f64]>::to_vec).collect()),
        };
        Ok(Self {
            dim: space.mesh().dim(),
            nodes: space.mesh().coordinates(),
            values,
        })
    }

    /// Nodal values flattened in time-major order.
    pub fn flat(&self) -> Vec<f64> {
        match &self.values {
            FieldValues::Flat(v) => v.clone(),
            FieldValues::TimeMajor(rows) => rows.concat(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }
}

/// Partial hyper-parameter update; absent fields keep their value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_t: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_d: Option<f64>,
}

impl HyperPatch {
    pub fn apply(&self, h: &HyperParams) -> HyperParams {
        HyperParams {
            alpha_u: self.alpha_u.unwrap_or(h.alpha_u),
            beta_u: self.beta_u.unwrap_or(h.beta_u),
            alpha_z: self.alpha_z.unwrap_or(h.alpha_z),
            beta_z: self.beta_z.unwrap_or(h.beta_z),
            alpha_t: self.alpha_t.clone().or_else(|| h.alpha_t.clone()),
            beta_t: self.beta_t.or(h.beta_t),
            eps_t: self.eps_t.unwrap_or(h.eps_t),
            alpha_d: self.alpha_d.unwrap_or(h.alpha_d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: usize,
    pub patch: HyperPatch,
    pub before: HyperParams,
    pub after: HyperParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPayload {
    pub i: usize,
    pub k: usize,
    pub stale: bool,
    pub eigenvalue: f64,
    pub dz: FieldJson,
    pub delta: FieldJson,
    pub difference: FieldJson,
    pub delta_max_abs: f64,
    pub difference_max_abs: f64,
    pub dz_length: f64,
    pub delta_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesPayload {
    pub stale: bool,
    pub times: Vec<f64>,
    /// `‖δ(z̃,θ_i)(t)‖_{M_s}` per sample.
    pub curves: Vec<Vec<f64>>,
    pub median: Vec<f64>,
    /// `‖d₁(t)‖_{M_s}` of the uncentered first data field.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPayload {
    pub n: usize,
    pub seed: u64,
    pub lowfi_optimum: FieldJson,
    pub mean_optimum: FieldJson,
    pub std: FieldJson,
    pub highfi_optimum: FieldJson,
    pub samples: Vec<Vec<f64>>,
}

/// In-memory state of one hyper-parameter review.
#[derive(Debug, Clone)]
pub struct Session {
    id: Uuid,
    scenario: Arc<Scenario>,
    data: CalibrationDataset,
    init: Option<InitReport>,
    prior: PriorModel,
    basis: PerturbationBasis,
    samples: Option<SampleDataset>,
    stale: bool,
    next_seed: u64,
    audit: Vec<AuditEntry>,
}

impl Session {
    /// Builds the scenario, generates its calibration data and initializes
    /// the hyper-parameters.
    pub fn create(config: ScenarioConfig, opts: &InitOptions) -> Result<Self> {
        let scenario = Scenario::build(config)?;
        let data = scenario.default_data()?;
        let init = initialize(
            &data,
            scenario.state().clone(),
            scenario.control().clone(),
            scenario.lowfi(),
            opts,
        )?;
        let hyper = init.hyper.clone();
        Self::from_parts(Arc::new(scenario), data, hyper, Some(init))
    }

    pub fn from_parts(
        scenario: Arc<Scenario>,
        data: CalibrationDataset,
        hyper: HyperParams,
        init: Option<InitReport>,
    ) -> Result<Self> {
        let prior = PriorModel::build(
            scenario.state().clone(),
            scenario.control().clone(),
            hyper,
            data.z_tilde().clone(),
        )?;
        let basis = perturbation_basis(&prior)?;
        let next_seed = scenario.config().seed;
        Ok(Self {
            id: Uuid::new_v4(),
            scenario,
            data,
            init,
            prior,
            basis,
            samples: None,
            stale: false,
            next_seed,
            audit: Vec::new(),
        })
    }

    pub fn id(&self) -> Uuid {
        self.id
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn data(&self) -> &CalibrationDataset {
        &self.data
    }

    pub fn init_report(&self) -> Option<&InitReport> {
        self.init.as_ref()
    }

    pub fn hyper(&self) -> &HyperParams {
        self.prior.hyper()
    }

    pub fn prior(&self) -> &PriorModel {
        &self.prior
    }

    pub fn basis(&self) -> &PerturbationBasis {
        &self.basis
    }

    pub fn samples(&self) -> Option<&SampleDataset> {
        self.samples.as_ref()
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn next_seed(&self) -> u64 {
        self.next_seed
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Applies a patch, rebuilds the prior and marks any samples stale.
    /// Every accepted call is logged, including empty patches.
    pub fn update_hyperparams(&mut self, patch: HyperPatch) -> Result<HyperParams> {
        let before = self.hyper().clone();
        let after = patch.apply(&before);
        after.validate()?;
        let prior = self.prior.with_hyper(after.clone())?;
        let basis = perturbation_basis(&prior)?;
        self.prior = prior;
        self.basis = basis;
        if self.samples.is_some() {
            self.stale = true;
        }
        self.audit.push(AuditEntry {
            seq: self.audit.len(),
            patch,
            before,
            after: after.clone(),
        });
        Ok(after)
    }

    /// Draws `q` samples (default 200). Without a seed the session counter
    /// supplies one and advances past the seeds used.
    pub fn generate_samples(&mut self, q: Option<usize>, seed: Option<u64>) -> Result<&SampleDataset> {
        let q = q.unwrap_or(DEFAULT_Q);
        let seed = seed.unwrap_or(self.next_seed);
        let data = SampleDataset::generate(&self.prior, self.basis.clone(), q, seed)?;
        self.next_seed = self.next_seed.max(seed.wrapping_add(q as u64));
        self.stale = false;
        Ok(self.samples.insert(data))
    }

    fn dataset(&self) -> Result<&SampleDataset> {
        self.samples.as_ref().ok_or(Error::NoData)
    }

    pub fn overview(&self, view: View) -> Result<OverviewPayload> {
        build_overview(self.dataset()?, view, self.stale)
    }

    pub fn inspect(&self, i: usize, k: usize) -> Result<RecordPayload> {
        let data = self.dataset()?;
        let rec = data.record(i, k)?;
        let state = self.prior.state();
        Ok(RecordPayload {
            i,
            k,
            stale: self.stale,
            eigenvalue: data.basis.eigenvalues[k],
            dz: FieldJson::new(self.prior.control(), rec.dz.as_slice())?,
            delta: FieldJson::new(state, rec.delta.as_slice())?,
            difference: FieldJson::new(state, rec.difference.as_slice())?,
            delta_max_abs: rec.delta_max_abs,
            difference_max_abs: rec.difference_max_abs,
            dz_length: rec.dz_length,
            delta_length: rec.delta_length,
        })
    }

    pub fn timeseries(&self) -> Result<TimeseriesPayload> {
        let state = self.prior.state();
        let grid = state
            .time()
            .ok_or_else(|| Error::UnsupportedView("time series of a stationary scenario".into()))?;
        let data = self.dataset()?;
        let space = state.spatial();
        let ns = state.n_space();
        let norms = |v: &[f64]| -> Result<Vec<f64>> {
            v.chunks(ns)
                .map(|s| Ok(space.norm_sq(&DVector::from_column_slice(s))?.sqrt()))
                .collect()
        };
        let curves = data.base.iter().map(|b| norms(b)).collect::<Result<Vec<_>>>()?;
        let median = (0..grid.n_time())
            .map(|t| {
                let mut col: Vec<f64> = curves.iter().map(|c| c[t]).collect();
                col.sort_by(f64::total_cmp);
                let n = col.len();
                if n % 2 == 1 {
                    col[n / 2]
                } else {
                    0.5 * (col[n / 2 - 1] + col[n / 2])
                }
            })
            .collect();
        Ok(TimeseriesPayload {
            stale: self.stale,
            times: grid.times().to_vec(),
            curves,
            median,
            data: norms(self.data.raw(0).as_slice())?,
        })
    }

    /// Calibrates the prior to the session data and propagates `n`
    /// posterior draws to the optimal control.
    pub fn posterior(&self, n: usize, seed: Option<u64>) -> Result<PosteriorPayload> {
        let seed = seed.unwrap_or(self.next_seed);
        let control = self.prior.control();
        let problem = self.scenario.lowfi_problem()?;
        let sens = assemble_sensitivity(&problem, self.data.z_tilde())?;
        let post = calibrate(Some(&self.data), &self.prior)?;
        let mean = mean_optimum(&sens, &post)?;
        let ensemble = posterior_optimum_ensemble(&sens, &post, n, seed)?;
        let nz = control.dim();
        let mut std = DVector::zeros(nz);
        let avg = ensemble.iter().fold(DVector::zeros(nz), |a, z| a + z) / n as f64;
        if n > 1 {
            for z in &ensemble {
                std += (z - &avg).map(|x| x * x);
            }
            std = (std / (n - 1) as f64).map(f64::sqrt);
        }
        let highfi = self.scenario.highfi_problem()?.solve_optimum()?;
        Ok(PosteriorPayload {
            n,
            seed,
            lowfi_optimum: FieldJson::new(control, self.data.z_tilde().as_slice())?,
            mean_optimum: FieldJson::new(control, mean.as_slice())?,
            std: FieldJson::new(control, std.as_slice())?,
            highfi_optimum: FieldJson::new(control, highfi.as_slice())?,
            samples: ensemble.iter().map(|z| z.as_slice().to_vec()).collect(),
        })
    }

    /// Full JSON snapshot; [`Session::restore`] rebuilds an equivalent
    /// session from it.
    pub fn export(&self) -> serde_json::Value {
        json!({
            "id": self.id,
            "config": self.scenario.config(),
            "hyperparams": self.hyper(),
            "init": self.init,
            "data": self.data.to_json(),
            "audit": self.audit,
            "next_seed": self.next_seed,
            "stale": self.stale,
            "basis_eigenvalues": self.basis.eigenvalues,
            "samples": self.samples.as_ref().map(|s| json!({"q": s.q(), "p": s.p(), "seed": s.seed})),
        })
    }

    pub fn restore(snapshot: serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Snapshot {
            id: Uuid,
            config: ScenarioConfig,
            hyperparams: HyperParams,
            init: Option<InitReport>,
            data: serde_json::Value,
            audit: Vec<AuditEntry>,
            next_seed: u64,
            stale: bool,
            samples: Option<SampleRef>,
        }
        #[derive(Deserialize)]
        struct SampleRef {
            q: usize,
            seed: u64,
        }
        let snap: Snapshot = serde_json::from_value(snapshot)?;
        let scenario = Arc::new(Scenario::build(snap.config)?);
        let data = CalibrationDataset::from_json(snap.data)?;
        let mut session = Self::from_parts(scenario, data, snap.hyperparams, snap.init)?;
        session.id = snap.id;
        session.audit = snap.audit;
        if let Some(s) = snap.samples {
            // Stale samples came from older hyper-parameters and cannot be
            // rebuilt; keep them absent rather than pretend otherwise.
            if !snap.stale {
                session.generate_samples(Some(s.q), Some(s.seed))?;
            }
        }
        session.next_seed = snap.next_seed;
        session.stale = false;
        Ok(session)
    }
}
