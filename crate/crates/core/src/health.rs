//! The health factor, its loss model and the threshold decision, plus the
//! end-to-end scoring of a single wafermap.

use serde::{Deserialize, Serialize};

use crate::classify::TrainedClassifier;
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureConfig};
use crate::intensity::intensity_score;
use crate::model::{CriticalityModel, HealthReport, ProcessState, Wafermap};

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("{name} = {v} outside [0,1]")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub tau: f64,
}

impl DecisionConfig {
    pub fn new(tau: f64) -> Result<Self> {
        unit("tau", tau)?;
        Ok(DecisionConfig { tau })
    }
}

/// `i * h`.
pub fn health_factor(i: f64, h: f64) -> Result<f64> {
    unit("intensity", i)?;
    unit("criticality", h)?;
    Ok(i * h)
}

/// Loss of decision `act` in `state`: acting always costs `tau`, not acting
/// costs the realised health factor.
pub fn loss(act: bool, state: &ProcessState, tau: f64) -> f64 {
    if act {
        tau
    } else {
        state.intensity() * state.criticality()
    }
}

/// Act iff `hf > tau`; a tie does nothing.
pub fn decide(hf: f64, tau: f64) -> bool {
    hf > tau
}

/// Features, pattern prediction, criticality of the predicted one-hot
/// pattern (its mean under a stochastic model), Moran intensity, then HF and
/// the decision. A constant map has no spatial structure and gets intensity 0.
pub fn score_wafermap(
    w: &Wafermap,
    clf: &TrainedClassifier,
    criticality: &CriticalityModel,
    features: &FeatureConfig,
    cfg: &DecisionConfig,
) -> Result<HealthReport> {
    unit("tau", cfg.tau)?;
    let fv = extract_features(w, features)?;
    let (class, posterior) = clf.predict(&fv.values)?;
    let predicted = clf.registry.one_hot(class)?;
    let h = criticality.expected(&predicted)?;
    let i = match intensity_score(w) {
        Ok(i) => i,
        Err(Error::ZeroVariance) => 0.0,
        Err(e) => return Err(e),
    };
    HealthReport::new(i, posterior, predicted, h, cfg.tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PatternVector;

    #[test]
    fn factor_arithmetic() {
        assert_eq!(health_factor(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(health_factor(0.9, 0.0).unwrap(), 0.0);
        assert!((health_factor(0.7, 0.6).unwrap() - 0.42).abs() < 1e-15);
        assert_eq!(health_factor(1.1, 0.5).unwrap_err().name(), "out-of-range");
    }

    #[test]
    fn loss_cases() {
        let p = PatternVector::one_hot(2, 0).unwrap();
        let s = ProcessState::new(0.8, p.clone(), 0.5).unwrap();
        assert_eq!(loss(true, &s, 0.3), 0.3);
        assert!((loss(false, &s, 0.3) - 0.4).abs() < 1e-15);
        let z = ProcessState::new(0.0, p, 1.0).unwrap();
        assert_eq!(loss(false, &z, 0.3), 0.0);
    }

    #[test]
    fn decision_rule() {
        assert!(decide(0.42, 0.35));
        assert!(!decide(0.35, 0.35));
        assert!(!decide(0.0, 0.0));
    }

    #[test]
    fn decide_minimises_expected_loss() {
        // two-point HF distributions: value a w.p. q, b otherwise
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        for &a in &grid {
            for &b in &grid {
                for &q in &grid {
                    for &tau in &grid {
                        let e = q * a + (1.0 - q) * b;
                        let keep = e;
                        let act = tau;
                        let brute = act < keep;
                        assert_eq!(decide(e, tau), brute, "a={a} b={b} q={q} tau={tau}");
                    }
                }
            }
        }
    }
}
