//! Bounded minimizers over a box: projected L-BFGS with forward-difference
//! gradients, and golden-section search for a single variable.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::dot;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub max_iter: usize,
    /// Stop once an accepted step changes the objective by less than this
    /// fraction of its value.
    pub rel_tol: f64,
    /// Forward-difference step relative to the coordinate magnitude.
    pub fd_step: f64,
    /// Number of correction pairs kept by L-BFGS.
    pub memory: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self { max_iter: 100, rel_tol: 1e-8, fd_step: 1e-6, memory: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        self.evaluations += 1;
        let v = (self.f)(x)?;
        if !v.is_finite() {
            return Err(Error::Optimizer(format!("objective is {v} at {x:?}")));
        }
        Ok(v)
    }
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

fn gradient<F: FnMut(&[f64]) -> Result<f64>>(
    f: &mut Counted<F>,
    x: &[f64],
    fx: f64,
    bounds: &[(f64, f64)],
    step: f64,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = step * x[j].abs().max(step);
        // Step backwards when the forward probe would leave the box.
        let h = if x[j] + h > bounds[j].1 { -h } else { h };
        probe[j] = x[j] + h;
        g[j] = (f.eval(&probe)? - fx) / h;
        probe[j] = x[j];
    }
    Ok(g)
}

/// Coordinates pinned at a bound with the gradient pointing outward.
fn pinned(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<bool> {
    x.iter().zip(g).zip(bounds).map(|((&v, &gj), &(lo, hi))| (v <= lo && gj > 0.0) || (v >= hi && gj < 0.0)).collect()
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let a = dot(s, &q) / dot(y, s);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = dot(y, &q) / dot(y, s);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Projected L-BFGS with an Armijo backtracking search along the projected path.
pub fn lbfgsb<F>(f: F, x0: &[f64], bounds: &[(f64, f64)], settings: &Settings) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut f = Counted { f, evaluations: 0 };
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let mut fx = f.eval(&x)?;
    let mut g = gradient(&mut f, &x, fx, bounds, settings.fd_step)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut trace = vec![fx];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iter {
        iterations += 1;
        let pin = pinned(&x, &g, bounds);
        if g.iter().zip(&pin).all(|(gj, &p)| p || *gj == 0.0) {
            converged = true;
            break;
        }
        let mut d = two_loop(&g, &history);
        for (dj, &p) in d.iter_mut().zip(&pin) {
            if p {
                *dj = 0.0;
            }
        }
        if dot(&g, &d) >= 0.0 {
            history.clear();
            d = g.iter().zip(&pin).map(|(gj, &p)| if p { 0.0 } else { -gj }).collect();
        }
        let mut alpha = if history.is_empty() {
            // Without curvature information, first try a quarter of the box.
            let width = bounds.iter().map(|(lo, hi)| hi - lo).fold(f64::INFINITY, f64::min);
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            0.25 * width / dmax
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            project(&mut trial, bounds);
            if trial == x {
                break;
            }
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let ft = f.eval(&trial)?;
            if ft <= fx + 1e-4 * dot(&g, &step) {
                accepted = Some((trial, ft, step));
                break;
            }
            alpha *= 0.5;
        }

        let Some((trial, ft, s)) = accepted else {
            if history.is_empty() {
                // No descent along the projected gradient at this resolution.
                converged = true;
                break;
            }
            history.clear();
            continue;
        };

        let gt = gradient(&mut f, &trial, ft, bounds, settings.fd_step)?;
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back((s, y));
        }
        let rel = (fx - ft).abs() / fx.abs().max(f64::MIN_POSITIVE);
        x = trial;
        fx = ft;
        g = gt;
        trace.push(fx);
        if rel < settings.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(Outcome { x, f: fx, iterations, evaluations: f.evaluations, converged, trace })
}

/// Golden-section search on `[lo, hi]`. The starting point is evaluated too and
/// kept if nothing better is found.
pub fn golden_section<F>(f: F, x0: f64, lo: f64, hi: f64, settings: &Settings) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut f = Counted { f, evaluations: 0 };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let x0 = x0.clamp(lo, hi);
    let f0 = f.eval(&[x0])?;
    let mut trace = vec![f0];
    let (mut best_x, mut best_f) = (x0, f0);

    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f.eval(&[c])?;
    let mut fd = f.eval(&[d])?;
    let tol = 1e-7 * (hi - lo);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iter {
        iterations += 1;
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f.eval(&[c])?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f.eval(&[d])?;
        }
        let (x, v) = if fc < fd { (c, fc) } else { (d, fd) };
        if v < best_f {
            best_x = x;
            best_f = v;
            trace.push(v);
        }
        if b - a < tol {
            converged = true;
            break;
        }
    }
    Ok(Outcome { x: vec![best_x], f: best_f, iterations, evaluations: f.evaluations, converged, trace })
}
