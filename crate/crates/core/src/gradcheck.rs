//! Central-difference verification of the analytic gradients.
//!
//! The loss is re-evaluated at `θ ± h·eᵢ` with the keep-masks and pseudo-OOD
//! selections frozen at the base point, so the comparison is against the same
//! smooth function the backward pass differentiates.

use serde::Serialize;

use crate::embedding_store::rng::{gaussian_vec, stream};
use crate::embedding_store::{ImageEmbeddings, TextBank};
use crate::error::{Error, Result};
use crate::hierarchy::ModelParams;
use crate::linalg::Mat;
use crate::objective::{evaluate_batch, Decisions, ObjectiveConfig};
use crate::alignment::AlignmentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckConfig {
    pub d: usize,
    pub num_classes: usize,
    pub n: usize,
    pub batch: usize,
    pub k: usize,
    pub tau: f64,
    pub step: f64,
    pub tolerance: f64,
    /// Scale of the random parameter entries.
    pub param_scale: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            d: 8,
            num_classes: 3,
            n: 2,
            batch: 2,
            k: 2,
            tau: 0.1,
            step: 1e-6,
            tolerance: 1e-5,
            param_scale: 0.3,
        }
    }
}

impl GradCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.n < 1 || self.num_classes < 2 || self.batch < 1 {
            return Err(Error::Config(
                "gradcheck needs d >= 1, n >= 1, num_classes >= 2, batch >= 1".into(),
            ));
        }
        if !(self.step > 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::Config("step and tolerance must be positive".into()));
        }
        self.objective().validate(self.n)
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            alignment: AlignmentConfig {
                tau: self.tau,
                renormalize_aggregates: false,
            },
            k: self.k,
            ..ObjectiveConfig::default()
        }
    }
}

/// A random labeled problem with non-zero parameters (the zero adapter sits
/// exactly on the ReLU kink).
pub struct Problem {
    pub batch: Vec<ImageEmbeddings<f64>>,
    pub text: TextBank<f64>,
    pub params: ModelParams<f64>,
}

pub fn random_problem(cfg: &GradCheckConfig, seed: u64) -> Problem {
    let (d, c, n) = (cfg.d, cfg.num_classes, cfg.n);
    let mut rng = stream(seed, 0);
    let mut vec = |scale: f64| gaussian_vec(&mut rng, d, scale);
    let batch = (0..cfg.batch)
        .map(|b| ImageEmbeddings {
            id: format!("gc-{b}"),
            label: (b % c) as i64,
            global: vec(1.0),
            mid: (0..n * n).map(|_| vec(1.0)).collect(),
            high: (0..4 * n * n).map(|_| vec(1.0)).collect(),
        })
        .collect();
    let text = TextBank::new(Mat::from_rows(&(0..c).map(|_| vec(1.0)).collect::<Vec<_>>()));
    let s = cfg.param_scale;
    let params = ModelParams {
        adapter: Mat::from_rows(&(0..d).map(|_| vec(s)).collect::<Vec<_>>()),
        bias_global: Mat::from_rows(&(0..c).map(|_| vec(s)).collect::<Vec<_>>()),
        bias_high: Mat::from_rows(&(0..c).map(|_| vec(s)).collect::<Vec<_>>()),
    };
    Problem { batch, text, params }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a − fd| / (|fd| + 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Compares analytic and central-difference gradients over every parameter
/// coordinate. `corrupt` perturbs one analytic coordinate (fault injection).
pub fn check_seed(cfg: &GradCheckConfig, seed: u64, corrupt: bool) -> Result<GradCheckReport> {
    cfg.validate()?;
    let obj = cfg.objective();
    let Problem { batch, text, params } = random_problem(cfg, seed);
    let refs: Vec<&ImageEmbeddings<f64>> = batch.iter().collect();

    let base = evaluate_batch(&refs, &params, &text, &obj, Decisions::Fresh { seed }, true)?;
    let mut grads = base.grads.expect("gradients requested");
    if corrupt {
        let v = grads.get_flat(0);
        grads.set_flat(0, v + 1e-3 * (1.0 + v.abs()));
    }
    let frozen = Decisions::Frozen(&base.decisions);

    let mut report = GradCheckReport {
        seed,
        coordinates: params.len(),
        max_rel_error: 0.0,
        worst_coordinate: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let h = cfg.step;
    let mut probe = params.clone();
    for i in 0..params.len() {
        let x = params.get_flat(i);
        probe.set_flat(i, x + h);
        let plus = evaluate_batch(&refs, &probe, &text, &obj, frozen, false)?.loss.total;
        probe.set_flat(i, x - h);
        let minus = evaluate_batch(&refs, &probe, &text, &obj, frozen, false)?.loss.total;
        probe.set_flat(i, x);
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads.get_flat(i);
        let err = relative_error(analytic, numeric);
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = err;
            report.worst_coordinate = i;
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
