use crate::error::Result;
use crate::formulations::{EvaluationResult, Evaluator};
use crate::netmodel::CaseSnapshot;
use crate::powerflow::{PhaseAssignment, QSettings};

#[derive(Debug, Clone, Copy)]
pub struct PvQOptions {
    /// Golden-section iterations per coordinate.
    pub line_iterations: usize,
    /// A sweep improving F by less than this ends the descent.
    pub sweep_tol: f64,
    pub max_sweeps: usize,
}

impl Default for PvQOptions {
    fn default() -> Self {
        PvQOptions {
            line_iterations: 64,
            sweep_tol: 1e-6,
            max_sweeps: 50,
        }
    }
}

/// Minimizes a unimodal `f` on `[lo, hi]`; returns the best point seen.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, iterations: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iterations {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Reactive-power coordinate descent from zero adjustment.
pub fn optimize_pv_q(
    snap: &CaseSnapshot,
    asg: &PhaseAssignment,
    ev: &Evaluator,
) -> Result<(QSettings, EvaluationResult)> {
    let q = QSettings::zeros(asg.len());
    optimize_pv_q_from(snap, asg, ev, &q, &PvQOptions::default())
}

/// Cyclic coordinate descent over the customers with a non-empty reactive
/// range, in ascending index order.
pub fn optimize_pv_q_from(
    snap: &CaseSnapshot,
    asg: &PhaseAssignment,
    ev: &Evaluator,
    start: &QSettings,
    opts: &PvQOptions,
) -> Result<(QSettings, EvaluationResult)> {
    let mut q = start.clone();
    let controlled: Vec<usize> = (0..q.0.len())
        .filter(|&c| snap.q_bounds()[c].0 < snap.q_bounds()[c].1)
        .collect();
    let mut f = ev.evaluate(snap, asg, Some(&q))?.objective;
    for _ in 0..opts.max_sweeps {
        let before = f;
        for &c in &controlled {
            let (lo, hi) = snap.q_bounds()[c];
            let mut err = None;
            let mut score = |x: f64, q: &mut QSettings| -> f64 {
                let keep = q.0[c];
                q.0[c] = x;
                let r = ev.evaluate(snap, asg, Some(q));
                q.0[c] = keep;
                match r {
                    Ok(e) => e.objective,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::INFINITY
                    }
                }
            };
            let mut best = (q.0[c], f);
            let mut scratch = q.clone();
            let (x, fx) = golden_section(|x| score(x, &mut scratch), lo, hi, opts.line_iterations);
            let mut candidates = vec![(x, fx), (lo, score(lo, &mut scratch)), (hi, score(hi, &mut scratch))];
            if lo <= 0.0 && 0.0 <= hi {
                candidates.push((0.0, score(0.0, &mut scratch)));
            }
            for (x, fx) in candidates {
                if fx < best.1 {
                    best = (x, fx);
                }
            }
            if let Some(e) = err {
                if !best.1.is_finite() {
                    return Err(e);
                }
            }
            q.0[c] = best.0;
            f = best.1;
        }
        if before - f < opts.sweep_tol {
            break;
        }
    }
    let eval = ev.evaluate(snap, asg, Some(&q))?;
    Ok((q, eval))
}
