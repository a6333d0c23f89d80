//! Dense primal-dual interior-point solver for linear and second-order cone
//! programs:
//!
//! ```text
//! minimize    c'x
//! subject to  A x = b
//!             G x + s = h,   s in K = R+^l x Q^{q1} x ... x Q^{qk}
//! ```
//!
//! The iteration runs on the homogeneous self-dual embedding with
//! Nesterov-Todd scaling and a Mehrotra predictor-corrector step, so
//! infeasible problems terminate with a certificate instead of diverging.
//! Sizes are small (tens to a few hundred variables), so every KKT system is
//! assembled densely and factored with partial-pivoting LU.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConeDims {
    pub nonneg: usize,
    pub soc: Vec<usize>,
}

impl ConeDims {
    pub fn total(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>()
    }

    /// Barrier degree (one per nonnegative coordinate, one per cone).
    pub fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }
}

#[derive(Debug, Clone)]
pub struct ConeProblem {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub dims: ConeDims,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSettings {
    pub max_iter: usize,
    /// Relative primal and dual residual tolerance.
    pub feas_tol: f64,
    /// Relative duality gap tolerance.
    pub gap_tol: f64,
    /// Tolerance for infeasibility certificates.
    pub infeas_tol: f64,
    /// If progress stalls numerically, the best iterate is still reported
    /// optimal when its residuals and gap are below this.
    pub fallback_tol: f64,
}

impl Default for ConeSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            infeas_tol: 1e-8,
            fallback_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub status: ConeStatus,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub s: DVector<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub iterations: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub rel_gap: f64,
}

impl ConeProblem {
    pub fn new(
        c: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
        dims: ConeDims,
    ) -> Result<Self> {
        let n = c.len();
        if a.ncols() != n || g.ncols() != n {
            return Err(Error::Shape(format!(
                "A has {} columns, G has {} columns, c has {}",
                a.ncols(),
                g.ncols(),
                n
            )));
        }
        if a.nrows() != b.len() || g.nrows() != h.len() {
            return Err(Error::Shape("row counts of A/b or G/h differ".into()));
        }
        if dims.total() != g.nrows() {
            return Err(Error::Shape(format!(
                "cone dimensions sum to {} but G has {} rows",
                dims.total(),
                g.nrows()
            )));
        }
        if dims.soc.iter().any(|&q| q < 2) {
            return Err(Error::Shape("second-order cones need dimension >= 2".into()));
        }
        Ok(Self { c, a, b, g, h, dims })
    }

    pub fn solve(&self, settings: &ConeSettings) -> Result<ConeSolution> {
        Solver::new(self, *settings).run()
    }
}

/// NT scaling for one cone block.
#[derive(Debug, Clone)]
enum BlockScaling {
    /// diag(sqrt(s/z))
    NonNeg(Vec<f64>),
    /// W = beta (2 w w' - J), W^{-1} = (1/beta)(2 J w w' J - J)
    Soc { beta: f64, w: Vec<f64> },
}

struct Scaling {
    blocks: Vec<(usize, usize, BlockScaling)>,
    dim: usize,
}

impl Scaling {
    fn compute(dims: &ConeDims, s: &DVector<f64>, z: &DVector<f64>) -> Result<Self> {
        let mut blocks = Vec::new();
        if dims.nonneg > 0 {
            let d = (0..dims.nonneg).map(|i| (s[i] / z[i]).sqrt()).collect();
            blocks.push((0, dims.nonneg, BlockScaling::NonNeg(d)));
        }
        let mut off = dims.nonneg;
        for &q in &dims.soc {
            let sb = s.rows(off, q);
            let zb = z.rows(off, q);
            let sj = jnorm_sq(sb.as_slice());
            let zj = jnorm_sq(zb.as_slice());
            if !(sj > 0.0 && zj > 0.0) {
                return Err(Error::Solver("iterate left the cone interior".into()));
            }
            let sn = sj.sqrt();
            let zn = zj.sqrt();
            let beta = (sn / zn).sqrt();
            let sbar: Vec<f64> = sb.iter().map(|v| v / sn).collect();
            let zbar: Vec<f64> = zb.iter().map(|v| v / zn).collect();
            let dot: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
            let gamma = ((1.0 + dot) / 2.0).sqrt();
            let mut w: Vec<f64> = (0..q)
                .map(|i| {
                    let jz = if i == 0 { zbar[0] } else { -zbar[i] };
                    (sbar[i] + jz) / (2.0 * gamma)
                })
                .collect();
            let wn = jnorm_sq(&w).sqrt();
            w.iter_mut().for_each(|v| *v /= wn);
            // v = (w + e) / sqrt(2 (w0 + 1)) so that W = beta (2 v v' - J)
            let denom = (2.0 * (w[0] + 1.0)).sqrt();
            w[0] += 1.0;
            w.iter_mut().for_each(|v| *v /= denom);
            blocks.push((off, q, BlockScaling::Soc { beta, w }));
            off += q;
        }
        Ok(Self {
            blocks,
            dim: dims.total(),
        })
    }

    /// y = W x
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim);
        for (off, len, blk) in &self.blocks {
            let xs = &x.as_slice()[*off..off + len];
            let ys = &mut y.as_mut_slice()[*off..off + len];
            match blk {
                BlockScaling::NonNeg(d) => {
                    for i in 0..*len {
                        ys[i] = d[i] * xs[i];
                    }
                }
                BlockScaling::Soc { beta, w } => {
                    // beta (2 w (w'x) - J x)
                    let wx: f64 = w.iter().zip(xs).map(|(a, b)| a * b).sum();
                    for i in 0..*len {
                        let jx = if i == 0 { xs[0] } else { -xs[i] };
                        ys[i] = beta * (2.0 * w[i] * wx - jx);
                    }
                }
            }
        }
        y
    }

    /// y = W^{-1} x
    fn apply_inv(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim);
        for (off, len, blk) in &self.blocks {
            let xs = &x.as_slice()[*off..off + len];
            let ys = &mut y.as_mut_slice()[*off..off + len];
            match blk {
                BlockScaling::NonNeg(d) => {
                    for i in 0..*len {
                        ys[i] = xs[i] / d[i];
                    }
                }
                BlockScaling::Soc { beta, w } => {
                    // (1/beta)(2 Jw (Jw)'x - J x)
                    let jw: Vec<f64> = (0..*len).map(|i| if i == 0 { w[0] } else { -w[i] }).collect();
                    let jwx: f64 = jw.iter().zip(xs).map(|(a, b)| a * b).sum();
                    for i in 0..*len {
                        let jx = if i == 0 { xs[0] } else { -xs[i] };
                        ys[i] = (2.0 * jw[i] * jwx - jx) / beta;
                    }
                }
            }
        }
        y
    }

    /// W^{-1} M applied column by column.
    fn apply_inv_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            let col = self.apply_inv(&m.column(j).into_owned());
            out.set_column(j, &col);
        }
        out
    }
}

fn jnorm_sq(x: &[f64]) -> f64 {
    x[0] * x[0] - x[1..].iter().map(|v| v * v).sum::<f64>()
}

/// Jordan product x o y.
fn cone_prod(dims: &ConeDims, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.len());
    for i in 0..dims.nonneg {
        out[i] = x[i] * y[i];
    }
    let mut off = dims.nonneg;
    for &q in &dims.soc {
        let xs = &x.as_slice()[off..off + q];
        let ys = &y.as_slice()[off..off + q];
        out[off] = xs.iter().zip(ys).map(|(a, b)| a * b).sum();
        for i in 1..q {
            out[off + i] = xs[0] * ys[i] + ys[0] * xs[i];
        }
        off += q;
    }
    out
}

/// Solves lambda o u = v for u.
fn cone_div(dims: &ConeDims, lambda: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for i in 0..dims.nonneg {
        out[i] = v[i] / lambda[i];
    }
    let mut off = dims.nonneg;
    for &q in &dims.soc {
        let l = &lambda.as_slice()[off..off + q];
        let vs = &v.as_slice()[off..off + q];
        let det = jnorm_sq(l);
        let l1v1: f64 = l[1..].iter().zip(&vs[1..]).map(|(a, b)| a * b).sum();
        let u0 = (l[0] * vs[0] - l1v1) / det;
        out[off] = u0;
        for i in 1..q {
            out[off + i] = (vs[i] - u0 * l[i]) / l[0];
        }
        off += q;
    }
    out
}

fn identity_elem(dims: &ConeDims) -> DVector<f64> {
    let mut e = DVector::zeros(dims.total());
    for i in 0..dims.nonneg {
        e[i] = 1.0;
    }
    let mut off = dims.nonneg;
    for &q in &dims.soc {
        e[off] = 1.0;
        off += q;
    }
    e
}

/// Largest alpha in [0, inf) with x + alpha d in the cone (inf if unbounded).
fn max_step(dims: &ConeDims, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..dims.nonneg {
        if d[i] < 0.0 {
            alpha = alpha.min(-x[i] / d[i]);
        }
    }
    let mut off = dims.nonneg;
    for &q in &dims.soc {
        let xs = &x.as_slice()[off..off + q];
        let ds = &d.as_slice()[off..off + q];
        // f(a) = (x0 + a d0)^2 - |x1 + a d1|^2
        let qa = jnorm_sq(ds);
        let qb = 2.0 * (xs[0] * ds[0] - xs[1..].iter().zip(&ds[1..]).map(|(a, b)| a * b).sum::<f64>());
        let qc = jnorm_sq(xs);
        let root = smallest_positive_root(qa, qb, qc);
        // the linear condition x0 + a d0 >= 0 can only bind after f turns negative
        let lin = if ds[0] < 0.0 { -xs[0] / ds[0] } else { f64::INFINITY };
        alpha = alpha.min(root).min(lin);
        off += q;
    }
    alpha
}

fn smallest_positive_root(a: f64, b: f64, c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    let scale = a.abs().max(b.abs()).max(c.abs());
    if a.abs() <= 1e-14 * scale {
        return if b < 0.0 { -c / b } else { f64::INFINITY };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let sq = disc.sqrt();
    let qq = -0.5 * (b + b.signum() * sq);
    let mut best = f64::INFINITY;
    for r in [qq / a, if qq != 0.0 { c / qq } else { f64::INFINITY }] {
        if r > 0.0 && r < best {
            best = r;
        }
    }
    best
}

struct Solver<'a> {
    p: &'a ConeProblem,
    settings: ConeSettings,
}

struct Kkt {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    mat: DMatrix<f64>,
    n: usize,
    pe: usize,
    m: usize,
}

impl Kkt {
    /// K = [[0, A', Gh'], [A, 0, 0], [Gh, 0, -I]] with Gh = W^{-1} G.
    fn new(p: &ConeProblem, gh: &DMatrix<f64>) -> Self {
        let n = p.c.len();
        let pe = p.b.len();
        let m = p.h.len();
        let dim = n + pe + m;
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, n), (n, pe)).copy_from(&p.a.transpose());
        k.view_mut((0, n + pe), (n, m)).copy_from(&gh.transpose());
        k.view_mut((n, 0), (pe, n)).copy_from(&p.a);
        k.view_mut((n + pe, 0), (m, n)).copy_from(gh);
        for i in 0..m {
            k[(n + pe + i, n + pe + i)] = -1.0;
        }
        let mut reg = k.clone();
        let delta = 1e-11;
        for i in 0..n {
            reg[(i, i)] += delta;
        }
        for i in n..n + pe {
            reg[(i, i)] -= delta;
        }
        Self {
            lu: reg.lu(),
            mat: k,
            n,
            pe,
            m,
        }
    }

    fn solve(
        &self,
        rx: &DVector<f64>,
        ry: &DVector<f64>,
        rz: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let mut rhs = DVector::zeros(self.n + self.pe + self.m);
        rhs.rows_mut(0, self.n).copy_from(rx);
        rhs.rows_mut(self.n, self.pe).copy_from(ry);
        rhs.rows_mut(self.n + self.pe, self.m).copy_from(rz);
        let mut sol = self.lu.solve(&rhs)?;
        for _ in 0..3 {
            let res = &rhs - &self.mat * &sol;
            let corr = self.lu.solve(&res)?;
            sol += corr;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((
            sol.rows(0, self.n).into_owned(),
            sol.rows(self.n, self.pe).into_owned(),
            sol.rows(self.n + self.pe, self.m).into_owned(),
        ))
    }
}

impl<'a> Solver<'a> {
    fn new(p: &'a ConeProblem, settings: ConeSettings) -> Self {
        Self { p, settings }
    }

    fn run(&self) -> Result<ConeSolution> {
        let p = self.p;
        let dims = &p.dims;
        let n = p.c.len();
        let pe = p.b.len();
        let m = p.h.len();
        let degree = dims.degree() as f64;
        let e = identity_elem(dims);

        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(pe);
        let mut s = e.clone();
        let mut z = e.clone();
        let mut tau = 1.0;
        let mut kappa = 1.0;

        let res_x0 = p.c.norm().max(1.0);
        let res_y0 = p.b.norm().max(1.0);
        let res_z0 = p.h.norm().max(1.0);

        let mut best: Option<(f64, ConeSolution)> = None;
        for iter in 0..=self.settings.max_iter {
            // residuals of the embedding
            let hrx = -(p.a.transpose() * &y + p.g.transpose() * &z);
            let rx = -&hrx + &p.c * tau; // A'y + G'z + c tau
            let hry = &p.a * &x;
            let ry = &p.b * tau - &hry;
            let hrz = &s + &p.g * &x;
            let rz = &p.h * tau - &hrz;
            let cx = p.c.dot(&x);
            let by = p.b.dot(&y);
            let hz = p.h.dot(&z);
            let rt = -cx - by - hz - kappa;

            let gap = s.dot(&z);
            let mu = (gap + tau * kappa) / (degree + 1.0);
            let pcost = cx / tau;
            let dcost = -(by + hz) / tau;
            let pres = (ry.norm() / tau / res_y0).max(rz.norm() / tau / res_z0);
            let dres = rx.norm() / tau / res_x0;
            let rel_gap = (gap / (tau * tau)) / pcost.abs().min(dcost.abs()).max(1.0);
            let rel_gap = rel_gap.max((pcost - dcost).abs() / pcost.abs().min(dcost.abs()).max(1.0));

            let snapshot = |status| ConeSolution {
                status,
                x: &x / tau,
                y: &y / tau,
                z: &z / tau,
                s: &s / tau,
                primal_obj: pcost,
                dual_obj: dcost,
                iterations: iter,
                primal_res: pres,
                dual_res: dres,
                rel_gap,
            };

            if pres <= self.settings.feas_tol && dres <= self.settings.feas_tol && rel_gap <= self.settings.gap_tol {
                return Ok(snapshot(ConeStatus::Optimal));
            }
            let score = pres.max(dres).max(rel_gap);
            if score.is_finite() && best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, snapshot(ConeStatus::IterationLimit)));
            }
            // infeasibility certificates
            if by + hz < 0.0 {
                let pinf = hrx.norm() / res_x0 / (-(by + hz));
                if pinf <= self.settings.infeas_tol {
                    let scale = -(by + hz);
                    return Ok(ConeSolution {
                        status: ConeStatus::PrimalInfeasible,
                        x: DVector::from_element(n, f64::NAN),
                        y: &y / scale,
                        z: &z / scale,
                        s: DVector::from_element(m, f64::NAN),
                        primal_obj: f64::NAN,
                        dual_obj: f64::NAN,
                        iterations: iter,
                        primal_res: pres,
                        dual_res: dres,
                        rel_gap: f64::NAN,
                    });
                }
            }
            if cx < 0.0 {
                let dinf = (hry.norm() / res_y0).max(hrz.norm() / res_z0) / (-cx);
                if dinf <= self.settings.infeas_tol {
                    return Ok(ConeSolution {
                        status: ConeStatus::DualInfeasible,
                        x: &x / (-cx),
                        y: DVector::from_element(pe, f64::NAN),
                        z: DVector::from_element(m, f64::NAN),
                        s: &s / (-cx),
                        primal_obj: f64::NAN,
                        dual_obj: f64::NAN,
                        iterations: iter,
                        primal_res: pres,
                        dual_res: dres,
                        rel_gap: f64::NAN,
                    });
                }
            }
            if iter == self.settings.max_iter {
                break;
            }

            let Ok(w) = Scaling::compute(dims, &s, &z) else {
                break;
            };
            let lambda = w.apply(&z);
            let lambda_sq = cone_prod(dims, &lambda, &lambda);
            let gh = w.apply_inv_mat(&p.g);
            let kkt = Kkt::new(p, &gh);
            let h_hat = w.apply_inv(&p.h);
            let Some((x1, y1, z1)) = kkt.solve(&(-&p.c), &p.b, &h_hat) else {
                break;
            };

            // returns (dx, dy, dz, ds, dtau, dkappa) for a given (eta, rhs_s, rhs_tau)
            let direction = |eta: f64, rhs_s: &DVector<f64>, rhs_tau: f64| -> Option<_> {
                let u = cone_div(dims, &lambda, rhs_s);
                let bx = -&rx * eta;
                let by_ = &ry * eta;
                let bz = w.apply_inv(&(&rz * eta)) - &u;
                let (x0, y0, z0) = kkt.solve(&bx, &by_, &bz)?;
                let denom = kappa / tau + z1.norm_squared();
                let num = -eta * rt + p.c.dot(&x0) + p.b.dot(&y0) + h_hat.dot(&z0) + rhs_tau / tau;
                let dtau = num / denom;
                let dx = &x0 + &x1 * dtau;
                let dy = &y0 + &y1 * dtau;
                let dz_scaled = &z0 + &z1 * dtau;
                let dz = w.apply_inv(&dz_scaled);
                let ds = w.apply(&(&u - &dz_scaled));
                let dkappa = (rhs_tau - kappa * dtau) / tau;
                Some((dx, dy, dz, ds, dtau, dkappa))
            };
            let step_len = |ds: &DVector<f64>, dz: &DVector<f64>, dtau: f64, dkappa: f64| {
                let mut a = max_step(dims, &s, ds).min(max_step(dims, &z, dz));
                if dtau < 0.0 {
                    a = a.min(-tau / dtau);
                }
                if dkappa < 0.0 {
                    a = a.min(-kappa / dkappa);
                }
                a
            };

            // predictor
            let Some(aff) = direction(1.0, &(-&lambda_sq), -tau * kappa) else {
                break;
            };
            let alpha_aff = step_len(&aff.3, &aff.2, aff.4, aff.5).min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

            // corrector
            let ds_scaled = w.apply_inv(&aff.3);
            let dz_scaled = w.apply(&aff.2);
            let corr = cone_prod(dims, &ds_scaled, &dz_scaled);
            let rhs_s = -&lambda_sq + &e * (sigma * mu) - corr;
            let rhs_tau = -tau * kappa + sigma * mu - aff.4 * aff.5;
            let Some((dx, dy, dz, ds, dtau, dkappa)) = direction(1.0 - sigma, &rhs_s, rhs_tau) else {
                break;
            };
            let alpha = (0.99 * step_len(&ds, &dz, dtau, dkappa)).min(1.0);

            x += &dx * alpha;
            y += &dy * alpha;
            z += &dz * alpha;
            s += &ds * alpha;
            tau += dtau * alpha;
            kappa += dkappa * alpha;
        }
        let (score, mut sol) = best.ok_or_else(|| Error::Solver("no finite iterate".into()))?;
        if score <= self.settings.fallback_tol {
            sol.status = ConeStatus::Optimal;
        }
        Ok(sol)
    }
}

/// Row-oriented builder for problems with named variable blocks.
#[derive(Debug, Clone, Default)]
pub struct ProblemBuilder {
    n: usize,
    c: Vec<f64>,
    eq: Vec<(Vec<(usize, f64)>, f64)>,
    ineq: Vec<(Vec<(usize, f64)>, f64)>,
    socs: Vec<Vec<(Vec<(usize, f64)>, f64)>>,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with objective coefficient `cost`; returns its index.
    pub fn var(&mut self, cost: f64) -> usize {
        self.c.push(cost);
        self.n += 1;
        self.n - 1
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// sum coef * x = rhs
    pub fn eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.eq.push((terms, rhs));
        self.eq.len() - 1
    }

    /// sum coef * x <= rhs
    pub fn le(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.ineq.push((terms, rhs));
        self.ineq.len() - 1
    }

    /// Second-order cone on affine entries `e_k = sum coef x + const`:
    /// e_0 >= || (e_1, ..., e_{q-1}) ||. Returns the cone's ordinal.
    pub fn soc(&mut self, entries: Vec<(Vec<(usize, f64)>, f64)>) -> usize {
        self.socs.push(entries);
        self.socs.len() - 1
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq.len()
    }

    /// Row offset of SOC number `k` inside the slack vector.
    pub fn soc_offset(&self, k: usize) -> usize {
        self.ineq.len() + self.socs[..k].iter().map(Vec::len).sum::<usize>()
    }

    pub fn build(&self) -> Result<ConeProblem> {
        let n = self.n;
        let mut a = DMatrix::zeros(self.eq.len(), n);
        let mut b = DVector::zeros(self.eq.len());
        for (r, (terms, rhs)) in self.eq.iter().enumerate() {
            for &(j, v) in terms {
                a[(r, j)] += v;
            }
            b[r] = *rhs;
        }
        let soc_rows: usize = self.socs.iter().map(Vec::len).sum();
        let m = self.ineq.len() + soc_rows;
        let mut g = DMatrix::zeros(m, n);
        let mut h = DVector::zeros(m);
        for (r, (terms, rhs)) in self.ineq.iter().enumerate() {
            for &(j, v) in terms {
                g[(r, j)] += v;
            }
            h[r] = *rhs;
        }
        // s = h - G x = entries  =>  G = -coef, h = const
        let mut r = self.ineq.len();
        for cone in &self.socs {
            for (terms, k) in cone {
                for &(j, v) in terms {
                    g[(r, j)] -= v;
                }
                h[r] = *k;
                r += 1;
            }
        }
        let dims = ConeDims {
            nonneg: self.ineq.len(),
            soc: self.socs.iter().map(Vec::len).collect(),
        };
        ConeProblem::new(DVector::from_vec(self.c.clone()), a, b, g, h, dims)
    }
}
