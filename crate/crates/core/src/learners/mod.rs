//! Nuisance regressors behind one fit/predict interface, and the
//! cross-validated super learner over them.

mod kernel;
mod linear;
mod mlp;
mod super_learner;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::support_points::random_kfold;

pub use kernel::{KernelLoss, KernelModel};
pub use mlp::{Activation, MlpModel, MlpNet, MlpSpec};
pub use super_learner::{
    fit_stacked, stack, CvBlocks, CvRiskReport, EnsembleMode, StackedEnsemble, SuperLearnerSpec,
};

/// Declarative learner configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// Predicts a fixed value regardless of the data.
    Constant { value: f64 },
    Ridge { lambda: f64 },
    Lasso { lambda: f64, max_iter: usize, tol: f64 },
    KernelMachine {
        /// RBF coefficient γ in `exp(−γ‖a − b‖²)`.
        bandwidth: f64,
        lambda: f64,
        #[serde(default)]
        loss: KernelLoss,
    },
    Mlp(MlpSpec),
    SuperLearner(SuperLearnerSpec),
}

impl LearnerSpec {
    pub fn ridge(lambda: f64) -> Self {
        LearnerSpec::Ridge { lambda }
    }

    pub fn lasso(lambda: f64) -> Self {
        LearnerSpec::Lasso {
            lambda,
            max_iter: 1000,
            tol: 1e-7,
        }
    }

    pub fn kernel(bandwidth: f64, lambda: f64) -> Self {
        LearnerSpec::KernelMachine {
            bandwidth,
            lambda,
            loss: KernelLoss::Squared,
        }
    }

    pub fn super_learner(candidates: Vec<LearnerSpec>) -> Self {
        LearnerSpec::SuperLearner(SuperLearnerSpec {
            candidates,
            ..SuperLearnerSpec::default()
        })
    }

    /// Short name used in reports.
    pub fn label(&self) -> String {
        match self {
            LearnerSpec::Constant { .. } => "constant".into(),
            LearnerSpec::Ridge { .. } => "ridge".into(),
            LearnerSpec::Lasso { .. } => "lasso".into(),
            LearnerSpec::KernelMachine { .. } => "kernel".into(),
            LearnerSpec::Mlp(_) => "mlp".into(),
            LearnerSpec::SuperLearner(sl) => {
                let names: Vec<String> = sl.candidates.iter().map(LearnerSpec::label).collect();
                format!("super({})", names.join("+"))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        match self {
            LearnerSpec::Constant { value } if !value.is_finite() => {
                bad(format!("constant {value} is not finite"))
            }
            LearnerSpec::Ridge { lambda } if !(*lambda >= 0.0) => {
                bad(format!("ridge lambda {lambda} must be >= 0"))
            }
            LearnerSpec::Lasso {
                lambda,
                max_iter,
                tol,
            } => {
                if !(*lambda >= 0.0) {
                    bad(format!("lasso lambda {lambda} must be >= 0"))
                } else if *max_iter == 0 || !(*tol > 0.0) {
                    bad("lasso needs max_iter > 0 and tol > 0".into())
                } else {
                    Ok(())
                }
            }
            LearnerSpec::KernelMachine {
                bandwidth,
                lambda,
                loss,
            } => {
                if !(*bandwidth > 0.0) || !(*lambda > 0.0) {
                    return bad("kernel machine needs bandwidth > 0 and lambda > 0".into());
                }
                match loss {
                    KernelLoss::EpsilonInsensitive {
                        epsilon,
                        c,
                        max_iter,
                    } if !(*epsilon >= 0.0) || !(*c > 0.0) || *max_iter == 0 => {
                        bad("epsilon-insensitive loss needs epsilon >= 0, C > 0, max_iter > 0".into())
                    }
                    _ => Ok(()),
                }
            }
            LearnerSpec::Mlp(m) => {
                if m.hidden.contains(&0) {
                    bad("hidden layer widths must be positive".into())
                } else if !(m.step_size > 0.0) || m.epochs == 0 || m.batch == 0 {
                    bad("mlp needs step_size > 0, epochs > 0, batch > 0".into())
                } else if !(m.l2 >= 0.0) {
                    bad(format!("mlp l2 {} must be >= 0", m.l2))
                } else {
                    Ok(())
                }
            }
            LearnerSpec::SuperLearner(sl) => {
                if sl.candidates.is_empty() {
                    return bad("super learner needs at least one candidate".into());
                }
                if sl.v_blocks < 2 {
                    return bad("super learner needs v_blocks >= 2".into());
                }
                for c in &sl.candidates {
                    if matches!(c, LearnerSpec::SuperLearner(_)) {
                        return bad("nested super learners are not supported".into());
                    }
                    c.validate()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Something that maps covariate rows to predictions.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;
}

/// Something that can be trained into a [`Predictor`]. [`LearnerSpec`] is the
/// main implementation; oracles and test doubles implement it too.
pub trait Regressor: Send + Sync {
    fn fit_predictor(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Box<dyn Predictor>>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedParams {
    Constant(f64),
    Linear { coef: Vec<f64>, intercept: f64 },
    Kernel(KernelModel),
    Mlp(MlpModel),
    /// Full-data refits with their blend weights; zero-weight members are dropped.
    Ensemble {
        report: CvRiskReport,
        members: Vec<(f64, FittedModel)>,
    },
}

/// An immutable trained learner.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub spec: LearnerSpec,
    pub params: FittedParams,
    /// Training `(n, p)`.
    pub training_dims: (usize, usize),
}

impl FittedModel {
    pub fn coefficients(&self) -> Option<(&[f64], f64)> {
        match &self.params {
            FittedParams::Linear { coef, intercept } => Some((coef, *intercept)),
            _ => None,
        }
    }

    pub fn cv_report(&self) -> Option<&CvRiskReport> {
        match &self.params {
            FittedParams::Ensemble { report, .. } => Some(report),
            _ => None,
        }
    }

    pub fn mlp(&self) -> Option<&MlpModel> {
        match &self.params {
            FittedParams::Mlp(m) => Some(m),
            _ => None,
        }
    }

    pub fn kernel(&self) -> Option<&KernelModel> {
        match &self.params {
            FittedParams::Kernel(k) => Some(k),
            _ => None,
        }
    }
}

fn check_training(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} rows but y has {}",
            x.nrows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::DimensionMismatch("no training rows".into()));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            what: "training data".into(),
        });
    }
    Ok(())
}

/// Trains `spec` on `(x, y)`. Deterministic given the spec (seeds included).
pub fn fit(spec: &LearnerSpec, x: &DMatrix<f64>, y: &[f64]) -> Result<FittedModel> {
    spec.validate()?;
    check_training(x, y)?;
    let params = match spec {
        LearnerSpec::Constant { value } => FittedParams::Constant(*value),
        LearnerSpec::Ridge { lambda } => {
            let (coef, intercept) = linear::fit_ridge(x, y, *lambda)?;
            FittedParams::Linear { coef, intercept }
        }
        LearnerSpec::Lasso {
            lambda,
            max_iter,
            tol,
        } => {
            let fit = linear::fit_lasso(x, y, *lambda, *max_iter, *tol)?;
            FittedParams::Linear {
                coef: fit.coef,
                intercept: fit.intercept,
            }
        }
        LearnerSpec::KernelMachine {
            bandwidth,
            lambda,
            loss,
        } => FittedParams::Kernel(kernel::fit_kernel(x, y, *bandwidth, *lambda, *loss)?),
        LearnerSpec::Mlp(m) => FittedParams::Mlp(mlp::fit_mlp(x, y, m)?),
        LearnerSpec::SuperLearner(sl) => super_learner::fit_super_learner(sl, x, y)?,
    };
    Ok(FittedModel {
        spec: spec.clone(),
        params,
        training_dims: x.shape(),
    })
}

/// Predictions of `m` on the rows of `x`.
pub fn predict(m: &FittedModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != m.training_dims.1 {
        return Err(Error::DimensionMismatch(format!(
            "model was trained on {} columns, got {}",
            m.training_dims.1,
            x.ncols()
        )));
    }
    let out = match &m.params {
        FittedParams::Constant(v) => vec![*v; x.nrows()],
        FittedParams::Linear { coef, intercept } => x
            .row_iter()
            .map(|r| intercept + r.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>())
            .collect(),
        FittedParams::Kernel(k) => k.predict(x)?,
        FittedParams::Mlp(net) => net.predict(x),
        FittedParams::Ensemble { members, .. } => {
            let mut acc = vec![0.0; x.nrows()];
            for (w, model) in members {
                for (a, v) in acc.iter_mut().zip(predict(model, x)?) {
                    *a += w * v;
                }
            }
            acc
        }
    };
    Ok(out)
}

impl Predictor for FittedModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        predict(self, x)
    }
}

impl Regressor for LearnerSpec {
    fn fit_predictor(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(fit(self, x, y)?))
    }
}

pub(crate) fn mean_squared_error(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (t - p) * (t - p)).sum::<f64>() / y.len() as f64
}

/// Test-set estimate of the generalization error under squared loss.
pub fn generalization_error(m: &dyn Predictor, x_test: &DMatrix<f64>, y_test: &[f64]) -> Result<f64> {
    if x_test.nrows() != y_test.len() || y_test.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "test set has {} rows and {} labels",
            x_test.nrows(),
            y_test.len()
        )));
    }
    let pred = m.predict(x_test)?;
    Ok(mean_squared_error(&pred, y_test))
}

/// V-fold cross-validated risk: the mean over blocks of the validation MSE of
/// a model trained on the other blocks.
pub fn cv_risk(
    learner: &dyn Regressor,
    x: &DMatrix<f64>,
    y: &[f64],
    v_blocks: usize,
    seed: u64,
) -> Result<f64> {
    check_training(x, y)?;
    let plan = random_kfold(y.len(), v_blocks, seed)?;
    let mut total = 0.0;
    for k in 0..plan.k() {
        let (train, valid) = (plan.complement(k), plan.fold(k));
        let model = learner.fit_predictor(&x.select_rows(&train), &select(y, &train))?;
        let pred = model.predict(&x.select_rows(valid))?;
        total += mean_squared_error(&pred, &select(y, valid));
    }
    Ok(total / plan.k() as f64)
}

pub(crate) fn select(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(LearnerSpec::ridge(-1.0).validate().is_err());
        assert!(LearnerSpec::kernel(0.0, 1.0).validate().is_err());
        assert!(LearnerSpec::kernel(1.0, 0.0).validate().is_err());
        assert!(LearnerSpec::super_learner(vec![]).validate().is_err());
        let nested = LearnerSpec::super_learner(vec![LearnerSpec::super_learner(vec![
            LearnerSpec::ridge(1.0),
        ])]);
        assert!(matches!(nested.validate(), Err(Error::InvalidSpec(_))));
        let mlp = LearnerSpec::Mlp(MlpSpec {
            hidden: vec![0],
            ..MlpSpec::default()
        });
        assert!(mlp.validate().is_err());
    }

    #[test]
    fn predict_dimension_mismatch() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let m = fit(&LearnerSpec::ridge(0.0), &x, &[2.0, 4.0]).unwrap();
        assert!(matches!(
            predict(&m, &DMatrix::zeros(1, 2)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn generalization_error_cases() {
        let x = DMatrix::zeros(2, 1);
        let zero = fit(&LearnerSpec::Constant { value: 0.0 }, &x, &[0.0, 0.0]).unwrap();
        assert_eq!(generalization_error(&zero, &x, &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(generalization_error(&zero, &x, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(generalization_error(&zero, &x, &[1.0]).is_err());
    }

    #[test]
    fn labels() {
        let sl = LearnerSpec::super_learner(vec![LearnerSpec::ridge(1.0), LearnerSpec::lasso(0.1)]);
        assert_eq!(sl.label(), "super(ridge+lasso)");
    }
}
