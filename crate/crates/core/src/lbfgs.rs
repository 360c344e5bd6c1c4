//! Limited-memory BFGS with a backtracking line search.
//!
//! Steps are accepted on sufficient decrease. Once energy differences drop to
//! the rounding level of the objective, an approximate-Wolfe test on the
//! directional derivative takes over, so tight gradient tolerances stay
//! reachable on badly scaled landscapes.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsSettings {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub max_backtracks: usize,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Largest allowed max-norm of a single step.
    pub max_step: f64,
    /// Absolute evaluation noise of the objective. Below it, steps are judged
    /// by the directional derivative alone.
    pub value_noise: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-9,
            max_iters: 50_000,
            memory: 20,
            max_backtracks: 60,
            armijo: 1e-4,
            max_step: 0.5,
            value_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
    /// Objective returned an error or a non-finite value at the current point.
    Evaluation(String),
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(grad: &[f64], history: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for pair in history.iter().rev() {
        let a = pair.rho * dot(&pair.s, &q);
        q.iter_mut().zip(&pair.y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for (pair, a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = pair.rho * dot(&pair.y, &q);
        q.iter_mut().zip(&pair.s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Minimizes `objective`, which returns the value and writes the gradient.
/// `observer` sees every accepted iterate.
pub fn minimize<F, O>(x0: Vec<f64>, settings: &LbfgsSettings, objective: F, observer: O) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64, String>,
    O: FnMut(IterationRecord),
{
    let scale = vec![1.0; x0.len()];
    minimize_scaled(x0, &scale, settings, objective, observer)
}

/// As [`minimize`], iterating on `y = x / scale` so that a diagonal estimate of
/// the inverse Hessian square root can be supplied. Step limits, the gradient
/// tolerance and the reported gradient norm all refer to the original `x`.
pub fn minimize_scaled<F, O>(
    x0: Vec<f64>,
    scale: &[f64],
    settings: &LbfgsSettings,
    mut user_objective: F,
    mut observer: O,
) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64, String>,
    O: FnMut(IterationRecord),
{
    assert_eq!(x0.len(), scale.len(), "one scale per variable");
    let dim = x0.len();
    let mut x_buf = vec![0.0; dim];
    let mut objective = |y: &[f64], g: &mut [f64]| -> Result<f64, String> {
        x_buf.iter_mut().zip(y).zip(scale).for_each(|((x, y), s)| *x = y * s);
        let v = user_objective(&x_buf, g)?;
        g.iter_mut().zip(scale).for_each(|(g, s)| *g *= s);
        Ok(v)
    };
    // max-norm of the unscaled gradient / step
    let true_norm = |g: &[f64]| g.iter().zip(scale).fold(0.0f64, |a, (g, s)| a.max((g / s).abs()));
    let step_norm = |d: &[f64]| d.iter().zip(scale).fold(0.0f64, |a, (d, s)| a.max((d * s).abs()));
    let unscale = |y: Vec<f64>| -> Vec<f64> { y.iter().zip(scale).map(|(y, s)| y * s).collect() };

    let mut x: Vec<f64> = x0.iter().zip(scale).map(|(x, s)| x / s).collect();
    let mut grad = vec![0.0; dim];
    let mut evaluations = 1;
    let mut value = match objective(&x, &mut grad) {
        Ok(v) if v.is_finite() => v,
        Ok(v) => {
            return LbfgsOutcome {
                grad_norm: f64::NAN,
                x: unscale(x),
                value: v,
                iterations: 0,
                evaluations,
                termination: Termination::Evaluation("non-finite objective".into()),
            }
        }
        Err(e) => {
            return LbfgsOutcome {
                grad_norm: f64::NAN,
                x: unscale(x),
                value: f64::NAN,
                iterations: 0,
                evaluations,
                termination: Termination::Evaluation(e),
            }
        }
    };
    let mut grad_norm = true_norm(&grad);
    observer(IterationRecord {
        iteration: 0,
        value,
        grad_norm,
    });

    let mut history: VecDeque<Pair> = VecDeque::with_capacity(settings.memory);
    let mut trial = vec![0.0; dim];
    let mut trial_grad = vec![0.0; dim];
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < settings.max_iters {
        if grad_norm <= settings.grad_tol {
            termination = Termination::Converged;
            break;
        }
        let mut direction = two_loop(&grad, &history);
        let mut slope = dot(&direction, &grad);
        if !(slope < 0.0) {
            history.clear();
            direction = grad.iter().map(|g| -g).collect();
            slope = dot(&direction, &grad);
        }

        let mut step = if history.is_empty() {
            (1.0 / step_norm(&direction)).min(1.0) * settings.max_step.min(1.0)
        } else {
            1.0
        };
        let longest = step * step_norm(&direction);
        if longest > settings.max_step {
            step *= settings.max_step / longest;
        }

        let tolerance = (4.0 * f64::EPSILON * value.abs()).max(settings.value_noise);
        let mut accepted = None;
        for _ in 0..settings.max_backtracks {
            trial
                .iter_mut()
                .zip(&x)
                .zip(&direction)
                .for_each(|((t, xi), di)| *t = xi + step * di);
            evaluations += 1;
            match objective(&trial, &mut trial_grad) {
                Ok(v) if v.is_finite() => {
                    let decrease = v <= value + settings.armijo * step * slope;
                    // approximate Wolfe once differences sit at rounding level
                    let trial_slope = dot(&trial_grad, &direction);
                    let flat = (v - value).abs() <= tolerance
                        && trial_slope >= 0.9 * slope
                        && trial_slope <= (2.0 * settings.armijo - 1.0) * slope;
                    if decrease || flat {
                        accepted = Some(v);
                        break;
                    }
                }
                _ => {}
            }
            step *= 0.5;
        }

        let Some(new_value) = accepted else {
            if history.is_empty() {
                termination = Termination::LineSearchFailed;
                break;
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back(Pair { s, y, rho: 1.0 / sy });
        }

        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        value = new_value;
        grad_norm = true_norm(&grad);
        iterations += 1;
        observer(IterationRecord {
            iteration: iterations,
            value,
            grad_norm,
        });
    }
    if grad_norm <= settings.grad_tol {
        termination = Termination::Converged;
    }

    LbfgsOutcome {
        x: unscale(x),
        value,
        grad_norm,
        iterations,
        evaluations,
        termination,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> Result<f64, String> {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        Ok((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
    }

    #[test]
    fn solves_rosenbrock() {
        let settings = LbfgsSettings {
            grad_tol: 1e-10,
            ..Default::default()
        };
        let out = minimize(vec![-1.2, 1.0], &settings, rosenbrock, |_| {});
        assert_eq!(out.termination, Termination::Converged);
        assert!((out.x[0] - 1.0).abs() < 1e-8 && (out.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ill_conditioned_quadratic_reaches_tight_tolerance() {
        let scales: Vec<f64> = (0..200).map(|i| 10f64.powf(-6.0 * i as f64 / 199.0)).collect();
        let f = |x: &[f64], g: &mut [f64]| -> Result<f64, String> {
            let mut v = 0.0;
            for i in 0..x.len() {
                let d = x[i] - 1.0;
                g[i] = scales[i] * d;
                v += 0.5 * scales[i] * d * d;
            }
            Ok(v - 3.0)
        };
        let settings = LbfgsSettings {
            grad_tol: 1e-11,
            ..Default::default()
        };
        let out = minimize(vec![0.0; 200], &settings, f, |_| {});
        assert_eq!(out.termination, Termination::Converged, "{out:?}");
    }

    #[test]
    fn diagonal_scaling_removes_ill_conditioning() {
        let curv: Vec<f64> = (0..50).map(|i| 10f64.powf(-8.0 * i as f64 / 49.0)).collect();
        let f = |x: &[f64], g: &mut [f64]| -> Result<f64, String> {
            let mut v = 0.0;
            for i in 0..x.len() {
                let d = x[i] - 2.0;
                g[i] = curv[i] * d;
                v += 0.5 * curv[i] * d * d;
            }
            Ok(v)
        };
        let settings = LbfgsSettings {
            grad_tol: 1e-13,
            max_step: f64::INFINITY,
            ..Default::default()
        };
        let scale: Vec<f64> = curv.iter().map(|c| 1.0 / c.sqrt()).collect();
        let out = minimize_scaled(vec![0.0; 50], &scale, &settings, f, |_| {});
        assert_eq!(out.termination, Termination::Converged);
        assert!(out.iterations < 10, "{}", out.iterations);
        assert!(out.x.iter().all(|x| (x - 2.0).abs() < 1e-4));
    }

    #[test]
    fn values_never_increase() {
        let mut last = f64::INFINITY;
        let mut monotone = true;
        minimize(vec![2.0, -1.0], &LbfgsSettings::default(), rosenbrock, |r| {
            monotone &= r.value <= last;
            last = r.value;
        });
        assert!(monotone);
    }

    #[test]
    fn evaluation_errors_are_reported() {
        let out = minimize(
            vec![0.0],
            &LbfgsSettings::default(),
            |_, _| Err("boom".to_string()),
            |_| {},
        );
        assert_eq!(out.termination, Termination::Evaluation("boom".into()));
    }
}
