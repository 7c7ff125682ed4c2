//! Block solvers: weighted Dykstra projection for `{β}` and projected
//! gradient ascent with backtracking for `{Γ, W, β̃, ξ}`.

use num_complex::Complex64;

use super::model::{Block2, Block2Eval};

/// A halfspace `Σ coef_j x_j ≤ rhs` over sparse coordinates.
#[derive(Debug, Clone)]
pub(crate) struct Halfspace {
    pub coef: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Scaled coefficients, right-hand side and squared coefficient norm.
type ScaledHalfspace = (Vec<(usize, f64)>, f64, f64);

/// `argmin Σ_j weight_j (x_j − target_j)²` over the intersection of the
/// halfspaces, by Dykstra's alternating projections in the scaled
/// coordinates `y = √weight · x`.
pub(crate) fn weighted_projection(
    target: &[f64],
    weight: &[f64],
    halfspaces: &[Halfspace],
    max_cycles: usize,
    tol: f64,
) -> Vec<f64> {
    let sw: Vec<f64> = weight.iter().map(|w| w.sqrt()).collect();
    let mut y: Vec<f64> = target.iter().zip(&sw).map(|(t, s)| t * s).collect();
    let scaled: Vec<ScaledHalfspace> = halfspaces
        .iter()
        .map(|h| {
            let c: Vec<(usize, f64)> = h.coef.iter().map(|&(j, a)| (j, a / sw[j])).collect();
            let n2 = c.iter().map(|(_, a)| a * a).sum::<f64>();
            (c, h.rhs, n2)
        })
        .collect();
    let mut inc: Vec<Vec<f64>> = scaled.iter().map(|(c, _, _)| vec![0.0; c.len()]).collect();
    for _ in 0..max_cycles {
        let mut change = 0.0;
        for (s, (c, rhs, n2)) in scaled.iter().enumerate() {
            if *n2 == 0.0 {
                continue;
            }
            // z = y + increment, restricted to the support of the halfspace.
            let mut dotv = 0.0;
            for (l, &(j, a)) in c.iter().enumerate() {
                dotv += a * (y[j] + inc[s][l]);
            }
            let viol = (dotv - rhs).max(0.0) / n2;
            for (l, &(j, a)) in c.iter().enumerate() {
                let z = y[j] + inc[s][l];
                let x = z - viol * a;
                inc[s][l] = z - x;
                change += (x - y[j]) * (x - y[j]);
                y[j] = x;
            }
        }
        if change <= tol * tol {
            break;
        }
    }
    y.iter().zip(&sw).map(|(v, s)| v / s).collect()
}

fn inner(
    bss: &[usize],
    gw: &[Vec<Complex64>],
    gbt: &[Vec<f64>],
    dw: &[Vec<Complex64>],
    dbt: &[Vec<f64>],
) -> f64 {
    bss.iter()
        .map(|&m| {
            gw[m]
                .iter()
                .zip(&dw[m])
                .map(|(a, b)| a.re * b.re + a.im * b.im)
                .sum::<f64>()
                + gbt[m].iter().zip(&dbt[m]).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum()
}

/// Result of [`maximize`].
pub(crate) struct Ascent {
    pub eval: Block2Eval,
    pub steps: usize,
    pub start_value: f64,
}

/// Projected gradient ascent with Armijo backtracking on the block
/// objective, starting from the projection of `(w, bt)`.
pub(crate) fn maximize(
    b: &Block2<'_>,
    w: &mut Vec<Vec<Complex64>>,
    bt: &mut Vec<Vec<f64>>,
    max_steps: usize,
    tol: f64,
) -> Ascent {
    b.project(w, bt);
    let mut cur = b.eval(w, bt, true);
    let start_value = cur.value;
    let mut step = 1.0;
    let mut steps = 0;
    for _ in 0..max_steps {
        let mut accepted = None;
        for _ in 0..60 {
            let mut nw = w.clone();
            let mut nbt = bt.clone();
            for &m in &b.bss {
                for (x, g) in nw[m].iter_mut().zip(&cur.gw[m]) {
                    *x += g * step;
                }
                for (x, g) in nbt[m].iter_mut().zip(&cur.gbt[m]) {
                    *x += g * step;
                }
            }
            b.project(&mut nw, &mut nbt);
            let dw: Vec<Vec<Complex64>> = nw
                .iter()
                .zip(w.iter())
                .map(|(a, c)| a.iter().zip(c).map(|(x, y)| x - y).collect())
                .collect();
            let dbt: Vec<Vec<f64>> = nbt
                .iter()
                .zip(bt.iter())
                .map(|(a, c)| a.iter().zip(c).map(|(x, y)| x - y).collect())
                .collect();
            let d2 = inner(&b.bss, &dw, &dbt, &dw, &dbt);
            let lin = inner(&b.bss, &cur.gw, &cur.gbt, &dw, &dbt);
            let cand = b.eval(&nw, &nbt, false);
            let slack = 1e-12 * (1.0 + cur.value.abs());
            if cand.value >= cur.value + lin - d2 / (2.0 * step) - slack {
                accepted = Some((nw, nbt, d2, cand.value));
                break;
            }
            step *= 0.5;
        }
        let Some((nw, nbt, d2, val)) = accepted else {
            break;
        };
        let scale: f64 = b
            .bss
            .iter()
            .map(|&m| {
                w[m].iter().map(|x| x.norm_sqr()).sum::<f64>()
                    + bt[m].iter().map(|x| x * x).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt();
        let gain = val - cur.value;
        *w = nw;
        *bt = nbt;
        steps += 1;
        cur = b.eval(w, bt, true);
        if d2.sqrt() <= tol * (1.0 + scale) || gain.abs() <= tol * (1.0 + cur.value.abs()) {
            break;
        }
        step *= 2.0;
    }
    Ascent {
        eval: cur,
        steps,
        start_value,
    }
}
