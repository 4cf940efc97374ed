use super::lp::{solve_lp, LpProblem, LpStatus};
use super::{check_c, dot, ClassifierKind, LabeledSet, LinearModel};
use crate::error::{Error, Result};

/// A training constraint within this distance of equality marks a support vector.
pub const MCM_ACTIVE_TOL: f64 = 1e-6;
const FEASIBILITY_TOL: f64 = 1e-8;

/// Soft-margin linear MCM:
///
/// ```text
/// min  h + C * sum(q)
/// s.t. h >= y_i (u.x_i + v) + q_i >= 1,  q_i >= 0,  u, v, h free
/// ```
pub fn train_mcm(data: &LabeledSet, c: f64) -> Result<LinearModel> {
    check_c(c)?;
    data.check_binary()?;
    let (n, d) = (data.len(), data.dim());
    // variables: u[0..d], v, h, q[0..n]
    let (iv, ih, iq) = (d, d + 1, d + 2);
    let mut p = LpProblem::new(d + 2 + n);
    for j in 0..=ih {
        p.set_free(j);
    }
    p.objective[ih] = 1.0;
    for i in 0..n {
        p.objective[iq + i] = c;
    }
    for (i, (x, &y)) in data.vectors().iter().zip(data.labels()).enumerate() {
        let y = y as f64;
        let mut terms: Vec<(usize, f64)> = x.iter().enumerate().map(|(j, xj)| (j, y * xj)).collect();
        terms.push((iv, y));
        terms.push((iq + i, 1.0));
        // y f + q >= 1
        p.add_row(&terms, 1.0, f64::INFINITY);
        // h - y f - q >= 0
        terms.iter_mut().for_each(|t| t.1 = -t.1);
        terms.push((ih, 1.0));
        p.add_row(&terms, 0.0, f64::INFINITY);
    }

    let sol = solve_lp(&p)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Lp(format!("MCM program is {:?}", sol.status)));
    }
    let violation = p.max_violation(&sol.x);
    if violation > FEASIBILITY_TOL {
        return Err(Error::Lp(format!("MCM solution violates constraints by {violation:e}")));
    }
    let u = sol.x[..d].to_vec();
    let (v, h) = (sol.x[iv], sol.x[ih]);
    let q = &sol.x[iq..];
    let support_indices = data
        .vectors()
        .iter()
        .zip(data.labels())
        .enumerate()
        .filter(|(i, (x, &y))| {
            let m = y as f64 * (dot(&u, x) + v) + q[*i];
            (m - 1.0).abs() <= MCM_ACTIVE_TOL || (h - m).abs() <= MCM_ACTIVE_TOL
        })
        .map(|(i, _)| i)
        .collect();
    log::debug!("mcm: n={n} d={d} h={h:.4} pivots={}", sol.iterations);
    Ok(LinearModel {
        kind: ClassifierKind::Mcm,
        u,
        v,
        h,
        c,
        slacks_sum: q.iter().sum(),
        support_indices,
        converged: true,
    })
}
