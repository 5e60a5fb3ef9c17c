//! Soft-margin RBF SVM on the scalar tamper percentage.
//!
//! The dual is solved by SMO with second-order working-set selection. Scores
//! are divided by 100 before entering the kernel `exp(-gamma (a - b)^2)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{require_both_classes, ImageScore, LabeledScore};
use crate::error::{Error, Result};
use crate::label::Label;

const FEATURE_SCALE: f64 = 100.0;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// Box constraint on the dual coefficients.
    pub c: f64,
    pub gamma: f64,
    /// Stop once the maximal KKT violation drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, gamma: 1.0, tol: 1e-3, max_iter: 1_000_000 }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.c) || !ok(self.gamma) || !ok(self.tol) {
            return Err(Error::Config(format!(
                "svm C, gamma and tolerance must be positive and finite: C={} gamma={} tol={}",
                self.c, self.gamma, self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Scaled features of the support vectors.
    pub support: Vec<f64>,
    /// `alpha_i * y_i` per support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub rbf_gamma: f64,
    pub c: f64,
    /// Set when the fitted function misclassifies some training score.
    pub non_separable: bool,
}

impl SvmModel {
    /// Decision value on a raw percentage; positive means tampered.
    pub fn decision(&self, output: f64) -> f64 {
        let x = output / FEATURE_SCALE;
        let sum: f64 = self.support.iter().zip(&self.dual_coef).map(|(&s, &a)| a * rbf(self.rbf_gamma, s, x)).sum();
        sum + self.bias
    }
}

/// Everything the solver produced, in the sorted training order.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    pub model: SvmModel,
    pub features: Vec<f64>,
    pub labels: Vec<Label>,
    pub alphas: Vec<f64>,
    pub iterations: usize,
}

fn rbf(gamma: f64, a: f64, b: f64) -> f64 {
    (-gamma * (a - b) * (a - b)).exp()
}

pub fn train_svm(scores: &[LabeledScore], params: &SvmParams) -> Result<SvmModel> {
    Ok(fit_svm(scores, params)?.model)
}

pub fn fit_svm(scores: &[LabeledScore], params: &SvmParams) -> Result<SvmFit> {
    require_both_classes(scores, "svm training")?;
    params.validate()?;
    let mut pts: Vec<(f64, Label)> = scores.iter().map(|s| (s.score.output / FEATURE_SCALE, s.label)).collect();
    if pts.iter().any(|p| !p.0.is_finite()) {
        return Err(Error::InvalidArgument("svm scores must be finite".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.sign()).collect();
    let n = x.len();
    let c = params.c;
    let k: Vec<f64> = (0..n * n).map(|ij| rbf(params.gamma, x[ij / n], x[ij % n])).collect();
    let kern = |i: usize, j: usize| k[i * n + j];

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    while iterations < params.max_iter {
        let mut g_max = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > g_max {
                g_max = -y[t] * grad[t];
                i = t;
            }
        }
        let mut g_min = f64::INFINITY;
        let mut j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            g_min = g_min.min(v);
            let b = g_max - v;
            if i != usize::MAX && b > 0.0 {
                let quad = (kern(i, i) + kern(t, t) - 2.0 * kern(i, t)).max(TAU);
                let obj = -(b * b) / quad;
                if obj < obj_min {
                    obj_min = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < params.tol {
            break;
        }
        iterations += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        let quad = (kern(i, i) + kern(j, j) - 2.0 * kern(i, j)).max(TAU);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * kern(t, i) * di + y[j] * kern(t, j) * dj);
        }
    }

    // bias from free vectors, else the midpoint of the feasible interval
    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else if at_lower {
            if y[t] > 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else {
            sum += yg;
            free += 1;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };

    let (mut support, mut dual_coef) = (Vec::new(), Vec::new());
    for t in 0..n {
        if alpha[t] > 0.0 {
            support.push(x[t]);
            dual_coef.push(alpha[t] * y[t]);
        }
    }
    let mut model = SvmModel { support, dual_coef, bias: -rho, rbf_gamma: params.gamma, c, non_separable: false };
    let labels: Vec<Label> = pts.iter().map(|p| p.1).collect();
    model.non_separable =
        x.iter().zip(&labels).any(|(&xi, &l)| svm_predict(&model, &score_of(xi * FEATURE_SCALE)).0 != l);
    if model.non_separable {
        log::warn!("svm cannot separate the calibration scores; decisions on this set will contain errors");
    }
    Ok(SvmFit { model, features: x, labels, alphas: alpha, iterations })
}

fn score_of(output: f64) -> ImageScore {
    ImageScore { image_id: String::new(), total_patches: 1, tampered_patches: 0, output }
}

/// Label and decision value; ties (`f = 0`) go to authentic.
pub fn svm_predict(model: &SvmModel, score: &ImageScore) -> (Label, f64) {
    let f = model.decision(score.output);
    let label = if f.partial_cmp(&0.0) == Some(Ordering::Greater) { Label::Tampered } else { Label::Authentic };
    (label, f)
}

/// Largest violation of the soft-margin KKT conditions, recomputed from the
/// dual coefficients without reference to solver state.
pub fn kkt_violation(fit: &SvmFit) -> f64 {
    let m = &fit.model;
    let c = m.c;
    let n = fit.features.len();
    let mut worst: f64 = 0.0;
    for t in 0..n {
        let f: f64 = (0..n)
            .map(|s| fit.alphas[s] * fit.labels[s].sign() * rbf(m.rbf_gamma, fit.features[s], fit.features[t]))
            .sum::<f64>()
            + m.bias;
        let yf = fit.labels[t].sign() * f;
        let a = fit.alphas[t];
        let v = if a <= 0.0 {
            (1.0 - yf).max(0.0)
        } else if a >= c {
            (yf - 1.0).max(0.0)
        } else {
            (yf - 1.0).abs()
        };
        worst = worst.max(v);
        if a < 0.0 || a > c {
            worst = f64::INFINITY;
        }
    }
    let balance: f64 = fit.alphas.iter().zip(&fit.labels).map(|(a, l)| a * l.sign()).sum();
    worst.max(balance.abs())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::aggregate::labeled;
    use Label::{Authentic as A, Tampered as T};

    #[test]
    fn separable_data_fits_exactly() {
        let s = labeled(&[(1.0, A), (2.0, A), (9.0, T), (10.0, T)]);
        let fit = fit_svm(&s, &SvmParams { c: 10.0, gamma: 0.5, ..SvmParams::default() }).unwrap();
        assert!(!fit.model.non_separable);
        for ls in &s {
            assert_eq!(svm_predict(&fit.model, &ls.score).0, ls.label);
        }
        assert!(kkt_violation(&fit) <= 1e-3);
        // extremes follow the nearest class
        assert_eq!(svm_predict(&fit.model, &score_of(0.0)).0, A);
        assert_eq!(svm_predict(&fit.model, &score_of(100.0)).0, T);
    }

    #[test]
    fn symmetric_data_has_zero_at_center() {
        let s = labeled(&[(10.0, A), (20.0, A), (30.0, A), (50.0, T), (60.0, T), (70.0, T)]);
        let params = SvmParams { c: 5.0, gamma: 4.0, tol: 1e-10, ..SvmParams::default() };
        let m = train_svm(&s, &params).unwrap();
        assert!(m.decision(40.0).abs() < 1e-6, "{}", m.decision(40.0));
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut s = labeled(&[(3.0, A), (0.0, A), (7.0, T), (12.0, T), (5.0, A), (5.0, T), (40.0, T)]);
        let a = train_svm(&s, &SvmParams::default()).unwrap();
        s.reverse();
        s.swap(1, 4);
        let b = train_svm(&s, &SvmParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_scores_flag_non_separable() {
        let s = labeled(&[(5.0, A), (5.0, T), (5.0, A), (5.0, T)]);
        let fit = fit_svm(&s, &SvmParams::default()).unwrap();
        assert!(fit.model.non_separable);
        assert!(fit.model.decision(5.0).is_finite());
    }

    #[test]
    fn random_sets_satisfy_kkt_and_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(2..40);
            let mut pairs: Vec<(f64, Label)> = (0..n)
                .map(|_| {
                    let t = rng.gen_bool(0.5);
                    let base = if t { 30.0 } else { 5.0 };
                    ((base + rng.gen_range(-20.0..20.0f64)).clamp(0.0, 100.0), if t { T } else { A })
                })
                .collect();
            pairs.push((0.0, A));
            pairs.push((100.0, T));
            let params =
                SvmParams { c: rng.gen_range(0.1..20.0), gamma: rng.gen_range(0.1..50.0), ..SvmParams::default() };
            let fit = fit_svm(&labeled(&pairs), &params).unwrap();
            assert!(kkt_violation(&fit) <= 1e-3, "{}", kkt_violation(&fit));
            assert!(fit.model.dual_coef.iter().all(|a| a.abs() <= params.c + 1e-12));
        }
    }

    #[test]
    fn free_support_vectors_classify_to_own_label() {
        let s = labeled(&[(0.0, A), (4.0, A), (6.0, A), (20.0, T), (25.0, T), (90.0, T)]);
        let params = SvmParams { c: 100.0, gamma: 10.0, ..SvmParams::default() };
        let fit = fit_svm(&s, &params).unwrap();
        for (t, &a) in fit.alphas.iter().enumerate() {
            if a > 0.0 && a < params.c {
                assert_eq!(svm_predict(&fit.model, &score_of(fit.features[t] * 100.0)).0, fit.labels[t]);
            }
        }
    }

    #[test]
    fn decision_is_continuous() {
        let s = labeled(&[(1.0, A), (3.0, A), (8.0, T), (30.0, T)]);
        let m = train_svm(&s, &SvmParams { c: 10.0, gamma: 20.0, ..SvmParams::default() }).unwrap();
        for i in 0..=1000 {
            let v = i as f64 / 10.0;
            assert!((m.decision(v) - m.decision(v + 1e-6)).abs() < 1e-3);
        }
    }
}
