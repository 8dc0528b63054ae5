//! Limited-memory BFGS with a clamped step and Armijo backtracking.
//!
//! The objective supplies its own gradient so callers can pick the cheapest
//! finite-difference scheme. Accepted steps strictly decrease the cost.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

pub trait Objective<T> {
    fn value(&mut self, x: &[T]) -> T;
    /// Gradient at `x`, where `fx = value(x)` was the most recent evaluation.
    fn gradient(&mut self, x: &[T], fx: T) -> Vec<T>;
}

/// How step length is measured before clamping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepNorm {
    Euclidean,
    /// Largest Euclidean norm over consecutive `(dx, dy)` pairs.
    MaxPair,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions<T> {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of a full (not backtracked) step
    /// is below this.
    pub tolerance: T,
    pub max_step: T,
    pub step_norm: StepNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    LineSearchFailed,
    ZeroGradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsReport<T> {
    pub x: Vec<T>,
    pub value: T,
    pub initial_value: T,
    pub iterations: usize,
    pub evaluations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub costs: Vec<T>,
    pub stop: StopReason,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 12;

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm<T: Real>(v: &[T], kind: StepNorm) -> T {
    match kind {
        StepNorm::Euclidean => dot(v, v).sqrt(),
        StepNorm::MaxPair => v
            .chunks(2)
            .map(|c| c.iter().map(|&x| x * x).sum::<T>().sqrt())
            .fold(T::zero(), |a, b| a.max(b)),
    }
}

fn scale<T: Real>(v: &mut [T], k: T) {
    for x in v {
        *x *= k;
    }
}

fn two_loop<T: Real>(g: &[T], hist: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q: Vec<T> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, &yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        scale(&mut q, gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, &si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    for v in &mut q {
        *v = -*v;
    }
    q
}

pub fn minimize<T: Real, O: Objective<T> + ?Sized>(obj: &mut O, x0: Vec<T>, opts: &LbfgsOptions<T>) -> LbfgsReport<T> {
    let mut x = x0;
    let mut f = obj.value(&x);
    let mut evaluations = 1;
    let initial_value = f;
    let mut costs = vec![f];
    let mut g = obj.gradient(&x, f);
    let mut hist: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::new();
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;

    while iterations < opts.max_iterations {
        if g.iter().all(|v| *v == T::zero()) {
            stop = StopReason::ZeroGradient;
            break;
        }
        iterations += 1;
        let mut d = if hist.is_empty() { g.iter().map(|&v| -v).collect() } else { two_loop(&g, &hist) };
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) || d.iter().any(|v| !v.is_finite()) {
            hist.clear();
            d = g.iter().map(|&v| -v).collect();
            slope = dot(&g, &d);
        }
        let n = norm(&d, opts.step_norm);
        // Steepest-descent steps carry no curvature, so they start at the
        // full allowed length.
        if hist.is_empty() || n > opts.max_step {
            let k = opts.max_step / n;
            scale(&mut d, k);
            slope *= k;
        }

        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let xn: Vec<T> = x.iter().zip(&d).map(|(&xi, &di)| xi + alpha * di).collect();
            let fnew = obj.value(&xn);
            evaluations += 1;
            if fnew.is_finite() && fnew <= f + T::lit(ARMIJO_C) * alpha * slope && fnew < f {
                accepted = Some((xn, fnew, alpha == T::one()));
                break;
            }
            alpha *= T::lit(0.5);
        }
        let Some((xn, fnew, full_step)) = accepted else {
            if hist.is_empty() {
                stop = StopReason::LineSearchFailed;
                break;
            }
            hist.clear();
            continue;
        };
        let gn = obj.gradient(&xn, fnew);
        let s: Vec<T> = xn.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = gn.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > T::zero() {
            if hist.len() == opts.memory.max(1) {
                hist.pop_front();
            }
            hist.push_back((s, y, T::one() / sy));
        }
        let rel = (f - fnew) / f.abs().max(T::lit(1e-12));
        x = xn;
        f = fnew;
        g = gn;
        costs.push(f);
        // A shortened step says nothing about convergence.
        if full_step && rel <= opts.tolerance {
            stop = StopReason::Converged;
            break;
        }
    }
    LbfgsReport {
        x,
        value: f,
        initial_value,
        iterations,
        evaluations,
        costs,
        stop,
    }
}
