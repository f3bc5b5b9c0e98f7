//! Dense primal-dual interior-point method (Mehrotra predictor-corrector) for
//! `min 1/2 x'Hx + c'x  s.t.  Ax = b, Gx <= h`.

use nalgebra::{DMatrix, DVector};

use super::PdhgError;

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h_ineq: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `Ax = b`, entering the Lagrangian as `y'(Ax - b)`.
    pub y: DVector<f64>,
    /// Multipliers of `Gx <= h`, nonnegative.
    pub z: DVector<f64>,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 200 }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter().zip(dv.iter()).filter(|(_, d)| **d < 0.0).map(|(x, d)| -x / d).fold(1.0, f64::min)
}

pub fn solve(p: &QpProblem, opts: QpOptions) -> Result<QpSolution, PdhgError> {
    let n = p.c.len();
    let me = p.b.len();
    let mi = p.h_ineq.len();
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(me);
    let mut s = (&p.h_ineq - &p.g * &x).map(|v| v.max(1.0));
    let mut z = DVector::from_element(mi, 1.0);

    let scale_p = 1.0 + p.b.amax().max(p.h_ineq.amax());
    let scale_d = 1.0 + p.c.amax();

    for iter in 0..opts.max_iter {
        let r_d = &p.h * &x + &p.c + p.a.tr_mul(&y) + p.g.tr_mul(&z);
        let r_p = &p.a * &x - &p.b;
        let r_g = &p.g * &x + &s - &p.h_ineq;
        let mu = if mi > 0 { s.dot(&z) / mi as f64 } else { 0.0 };
        if r_d.amax() <= opts.tol * scale_d
            && r_p.amax() <= opts.tol * scale_p
            && r_g.amax() <= opts.tol * scale_p
            && mu <= opts.tol
        {
            let objective = 0.5 * x.dot(&(&p.h * &x)) + p.c.dot(&x);
            return Ok(QpSolution { x, y, z, iterations: iter, objective });
        }

        let w = z.component_div(&s);
        let mut gw = p.g.clone();
        for (i, mut row) in gw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut kkt = DMatrix::zeros(n + me, n + me);
        kkt.view_mut((0, 0), (n, n)).copy_from(&(&p.h + p.g.tr_mul(&gw)));
        kkt.view_mut((0, n), (n, me)).copy_from(&p.a.transpose());
        kkt.view_mut((n, 0), (me, n)).copy_from(&p.a);
        let lu = kkt.lu();

        let direction = |r_c: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let t = (r_c + z.component_mul(&r_g)).component_div(&s);
            let mut rhs = DVector::zeros(n + me);
            rhs.rows_mut(0, n).copy_from(&(-&r_d - p.g.tr_mul(&t)));
            rhs.rows_mut(n, me).copy_from(&(-&r_p));
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, me).into_owned();
            let ds = -&r_g - &p.g * &dx;
            let dz = (r_c + z.component_mul(&r_g) + z.component_mul(&(&p.g * &dx))).component_div(&s);
            Some((dx, dy, ds, dz))
        };

        let singular = || PdhgError::Solver(format!("singular KKT system at iteration {iter}"));
        let r_aff = -s.component_mul(&z);
        let (_, _, ds_a, dz_a) = direction(&r_aff).ok_or_else(singular)?;
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = if mi > 0 {
            (&s + alpha_aff * &ds_a).dot(&(&z + alpha_aff * &dz_a)) / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3) } else { 0.0 };
        let r_c = r_aff - ds_a.component_mul(&dz_a) + DVector::from_element(mi, sigma * mu);
        let (dx, dy, ds, dz) = direction(&r_c).ok_or_else(singular)?;
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += alpha * dx;
        y += alpha * dy;
        s += alpha * ds;
        z += alpha * dz;
    }
    Err(PdhgError::Solver(format!("no convergence within {} iterations", opts.max_iter)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_constrained_quadratic() {
        // min (x-3)^2 + (y+1)^2, x + y = 1, 0 <= x <= 1.5
        let p = QpProblem {
            h: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0])),
            c: DVector::from_vec(vec![-6.0, 2.0]),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b: DVector::from_vec(vec![1.0]),
            g: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]),
            h_ineq: DVector::from_vec(vec![0.0, 1.5]),
        };
        let sol = solve(&p, QpOptions::default()).unwrap();
        assert!((sol.x[0] - 1.5).abs() < 1e-8, "{}", sol.x);
        assert!((sol.x[1] + 0.5).abs() < 1e-8);
        // stationarity: 2(y+1) + y_eq = 0 -> y_eq = -1; 2(x-3) + y_eq + z_hi = 0 -> z_hi = 4
        assert!((sol.y[0] + 1.0).abs() < 1e-7);
        assert!((sol.z[1] - 4.0).abs() < 1e-7);
        assert!(sol.z[0].abs() < 1e-7);
    }
}
