//! The closed Riemannian target: metric, Christoffel symbols, curvature,
//! exponential/log maps, parallel transport, and the finite-difference
//! derivative maps of the exponential and the transport.
//!
//! Three models ship: the round sphere (closed forms through an internal
//! embedding), the flat torus (everything trivial — the linear oracle), and a
//! generic chart model driven by a named conformal-factor table (geodesics by
//! a fixed-step RK4 integrator, log by shooting).

use crate::error::GlueError;
use crate::vecn::{MatN, VecN, MAX_DIM};
use crate::Result;

pub const H_GAMMA: f64 = 1e-4;
pub const H_EXP: f64 = 1e-5;
const ODE_STEPS_PER_UNIT: usize = 160;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetPoint {
    pub chart: usize,
    pub y: VecN,
}

impl TargetPoint {
    pub fn new(chart: usize, y: VecN) -> Self {
        TargetPoint { chart, y }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TangentVector {
    pub base: TargetPoint,
    pub v: VecN,
}

/// Christoffel symbols at a point: gamma[k][i][j] = Gamma^k_ij.
#[derive(Clone, Copy)]
pub struct Gamma {
    pub n: usize,
    pub g: [[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM],
}

impl Gamma {
    pub fn zeros(n: usize) -> Self {
        Gamma {
            n,
            g: [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM],
        }
    }

    /// Contract Gamma^k_ij u^i w^j.
    #[inline]
    pub fn contract(&self, u: &VecN, w: &VecN) -> VecN {
        let mut r = VecN::zeros(self.n);
        for k in 0..self.n {
            let mut s = 0.0;
            for i in 0..self.n {
                for j in 0..self.n {
                    s += self.g[k][i][j] * u.a[i] * w.a[j];
                }
            }
            r.a[k] = s;
        }
        r
    }
}

#[derive(Clone, Debug)]
pub enum ChartTable {
    /// Conformal metric e^{2 phi} delta on a periodic box, with
    /// phi = amp * cos(2 pi y1 / L1) * cos(2 pi y2 / L2).
    ConformalTorus { periods: [f64; 2], amp: f64 },
    /// The round 2-sphere as a two-chart conformal model (for cross-checking
    /// the ODE path against the closed forms).
    SphereStereographic { radius: f64 },
}

#[derive(Clone, Debug)]
pub enum ModelKind {
    Sphere { radius: f64 },
    FlatTorus { periods: [f64; 2] },
    Chart(ChartTable),
}

#[derive(Clone, Debug)]
pub struct ManifoldModel {
    pub dim: usize,
    pub kind: ModelKind,
    /// Lower bound for the injectivity radius (length units).
    pub inj: f64,
}

impl ManifoldModel {
    pub fn sphere(dim: usize, radius: f64) -> Self {
        ManifoldModel {
            dim,
            kind: ModelKind::Sphere { radius },
            inj: std::f64::consts::PI * radius,
        }
    }

    pub fn flat_torus(periods: [f64; 2]) -> Self {
        ManifoldModel {
            dim: 2,
            kind: ModelKind::FlatTorus { periods },
            inj: 0.5 * periods[0].min(periods[1]),
        }
    }

    pub fn chart_model(table: ChartTable) -> Self {
        let inj = match &table {
            ChartTable::ConformalTorus { periods, amp } => {
                0.4 * periods[0].min(periods[1]) * (-amp.abs()).exp()
            }
            ChartTable::SphereStereographic { radius } => std::f64::consts::PI * radius,
        };
        ManifoldModel {
            dim: 2,
            kind: ModelKind::Chart(table),
            inj,
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, ModelKind::FlatTorus { .. })
    }

    pub fn n_charts(&self) -> usize {
        match &self.kind {
            ModelKind::Sphere { .. } => 2,
            ModelKind::FlatTorus { .. } => 1,
            ModelKind::Chart(ChartTable::ConformalTorus { .. }) => 1,
            ModelKind::Chart(ChartTable::SphereStereographic { .. }) => 2,
        }
    }

    // ---------------------------------------------------------------- charts

    /// Conformal factor phi with metric e^{2 phi} delta in the given chart,
    /// and its gradient. All shipped models are conformal in every chart.
    fn phi_grad(&self, chart: usize, y: &VecN) -> (f64, VecN) {
        match &self.kind {
            ModelKind::Sphere { radius }
            | ModelKind::Chart(ChartTable::SphereStereographic { radius }) => {
                let _ = chart;
                let s = y.norm2();
                let phi = (2.0 * radius / (1.0 + s)).ln();
                let c = -2.0 / (1.0 + s);
                (phi, y.scale(c))
            }
            ModelKind::FlatTorus { .. } => (0.0, VecN::zeros(self.dim)),
            ModelKind::Chart(ChartTable::ConformalTorus { periods, amp }) => {
                let w1 = 2.0 * std::f64::consts::PI / periods[0];
                let w2 = 2.0 * std::f64::consts::PI / periods[1];
                let (c1, s1) = ((w1 * y.a[0]).cos(), (w1 * y.a[0]).sin());
                let (c2, s2) = ((w2 * y.a[1]).cos(), (w2 * y.a[1]).sin());
                let phi = amp * c1 * c2;
                (phi, VecN::v2(-amp * w1 * s1 * c2, -amp * w2 * c1 * s2))
            }
        }
    }

    pub fn metric(&self, p: &TargetPoint) -> MatN {
        let (phi, _) = self.phi_grad(p.chart, &p.y);
        let lam2 = (2.0 * phi).exp();
        let mut m = MatN::zeros(self.dim);
        for i in 0..self.dim {
            m.m[i][i] = lam2;
        }
        m
    }

    #[inline]
    pub fn inner(&self, p: &TargetPoint, u: &VecN, w: &VecN) -> f64 {
        let (phi, _) = self.phi_grad(p.chart, &p.y);
        (2.0 * phi).exp() * u.dot(w)
    }

    #[inline]
    pub fn vec_norm(&self, p: &TargetPoint, u: &VecN) -> f64 {
        self.inner(p, u, u).sqrt()
    }

    pub fn christoffel(&self, p: &TargetPoint) -> Gamma {
        let n = self.dim;
        let mut g = Gamma::zeros(n);
        if self.is_flat() {
            return g;
        }
        let (_, dphi) = self.phi_grad(p.chart, &p.y);
        // Conformal metric: Gamma^k_ij = d^k_i phi_j + d^k_j phi_i - delta_ij phi^k
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = 0.0;
                    if k == i {
                        v += dphi.a[j];
                    }
                    if k == j {
                        v += dphi.a[i];
                    }
                    if i == j {
                        v -= dphi.a[k];
                    }
                    g.g[k][i][j] = v;
                }
            }
        }
        g
    }

    /// Is the chart coordinate inside the declared chart box?
    pub fn in_chart_box(&self, chart: usize, y: &VecN) -> bool {
        match &self.kind {
            ModelKind::Sphere { .. } | ModelKind::Chart(ChartTable::SphereStereographic { .. }) => {
                let _ = chart;
                y.norm() <= 3.0
            }
            ModelKind::FlatTorus { periods }
            | ModelKind::Chart(ChartTable::ConformalTorus { periods, .. }) => {
                (0..2).all(|i| y.a[i] >= -periods[i] && y.a[i] <= 2.0 * periods[i])
            }
        }
    }

    /// Canonical chart for a point (spheres: the chart where |y| <= 1).
    pub fn normalize(&self, p: &TargetPoint) -> TargetPoint {
        match &self.kind {
            ModelKind::Sphere { .. } | ModelKind::Chart(ChartTable::SphereStereographic { .. }) => {
                if p.y.norm2() > 1.0 + 1e-12 {
                    self.to_chart(p, 1 - p.chart)
                } else {
                    *p
                }
            }
            ModelKind::FlatTorus { periods }
            | ModelKind::Chart(ChartTable::ConformalTorus { periods, .. }) => {
                let mut y = p.y;
                for i in 0..2 {
                    y.a[i] = y.a[i].rem_euclid(periods[i]);
                }
                TargetPoint::new(0, y)
            }
        }
    }

    /// Express p in the requested chart (sphere charts: conjugate inversion).
    pub fn to_chart(&self, p: &TargetPoint, chart: usize) -> TargetPoint {
        if p.chart == chart {
            return *p;
        }
        match &self.kind {
            ModelKind::Sphere { .. } | ModelKind::Chart(ChartTable::SphereStereographic { .. }) => {
                let s = p.y.norm2();
                assert!(s > 1e-300, "chart transition at chart center");
                let y = if self.dim == 2 {
                    VecN::v2(p.y.a[0] / s, -p.y.a[1] / s)
                } else {
                    p.y.scale(1.0 / s)
                };
                TargetPoint::new(chart, y)
            }
            _ => unreachable!("single-chart model"),
        }
    }

    /// d(coords in `chart`)/d(coords in p.chart) at p.
    pub fn jacobian_to_chart(&self, p: &TargetPoint, chart: usize) -> MatN {
        if p.chart == chart {
            return MatN::identity(self.dim);
        }
        match &self.kind {
            ModelKind::Sphere { .. } | ModelKind::Chart(ChartTable::SphereStereographic { .. }) => {
                let s = p.y.norm2();
                let n = self.dim;
                let mut j = MatN::zeros(n);
                if n == 2 {
                    let (a, b) = (p.y.a[0], p.y.a[1]);
                    j.m[0][0] = (s - 2.0 * a * a) / (s * s);
                    j.m[0][1] = -2.0 * a * b / (s * s);
                    j.m[1][0] = 2.0 * a * b / (s * s);
                    j.m[1][1] = (2.0 * b * b - s) / (s * s);
                } else {
                    for r in 0..n {
                        for c in 0..n {
                            let d = if r == c { 1.0 } else { 0.0 };
                            j.m[r][c] = d / s - 2.0 * p.y.a[r] * p.y.a[c] / (s * s);
                        }
                    }
                }
                j
            }
            _ => MatN::identity(self.dim),
        }
    }

    /// Chart coordinates of q expressed in `chart`, choosing (for periodic
    /// models) the representative nearest to `near`.
    pub fn coords_in_chart(&self, q: &TargetPoint, chart: usize, near: &VecN) -> VecN {
        match &self.kind {
            ModelKind::FlatTorus { periods }
            | ModelKind::Chart(ChartTable::ConformalTorus { periods, .. }) => {
                let mut y = q.y;
                for i in 0..2 {
                    let mut d = y.a[i] - near.a[i];
                    d -= (d / periods[i]).round() * periods[i];
                    y.a[i] = near.a[i] + d;
                }
                y
            }
            _ => self.to_chart(q, chart).y,
        }
    }

    // ------------------------------------------------------------- embedding

    fn radius(&self) -> f64 {
        match &self.kind {
            ModelKind::Sphere { radius }
            | ModelKind::Chart(ChartTable::SphereStereographic { radius }) => *radius,
            _ => panic!("radius only defined for sphere models"),
        }
    }

    /// Sphere chart -> ambient R^{dim+1} (radius r sphere).
    pub fn embed(&self, p: &TargetPoint) -> [f64; MAX_DIM + 1] {
        let r = self.radius();
        let n = self.dim;
        let s = p.y.norm2();
        let mut x = [0.0; MAX_DIM + 1];
        let c = 2.0 * r / (1.0 + s);
        for i in 0..n {
            x[i] = c * p.y.a[i];
        }
        x[n] = r * (s - 1.0) / (1.0 + s);
        if p.chart == 1 {
            if n == 2 {
                x[1] = -x[1];
            }
            x[n] = -x[n];
        }
        x
    }

    fn unembed(&self, x: &[f64; MAX_DIM + 1]) -> TargetPoint {
        let r = self.radius();
        let n = self.dim;
        // chart 0 where x_n <= 0 (|y| <= 1), else chart 1
        if x[n] <= 0.0 {
            let d = r - x[n];
            let mut y = VecN::zeros(n);
            for i in 0..n {
                y.a[i] = r * x[i] / (r * d) * (d / d); // placeholder, fixed below
            }
            // y = x_perp / (r - x_n) * r ... derive: x_i = 2 r y_i/(1+s), x_n = r(s-1)/(1+s)
            // => r - x_n = 2r/(1+s) => y_i = x_i / (r - x_n)
            for i in 0..n {
                y.a[i] = x[i] / (r - x[n]);
            }
            TargetPoint::new(0, y)
        } else {
            let mut y = VecN::zeros(n);
            for i in 0..n {
                y.a[i] = x[i] / (r + x[n]);
            }
            if n == 2 {
                y.a[1] = -y.a[1];
            }
            TargetPoint::new(1, y)
        }
    }

    /// Push a chart tangent vector to the embedding.
    fn push_tangent(&self, p: &TargetPoint, v: &VecN) -> [f64; MAX_DIM + 1] {
        // centered difference of the embedding is exact enough only to O(h^2);
        // use the analytic differential instead.
        let r = self.radius();
        let n = self.dim;
        let s = p.y.norm2();
        let yd = p.y.dot(v);
        let c = 2.0 * r / (1.0 + s);
        let mut x = [0.0; MAX_DIM + 1];
        for i in 0..n {
            x[i] = c * (v.a[i] - 2.0 * p.y.a[i] * yd / (1.0 + s));
        }
        x[n] = c * 2.0 * yd / (1.0 + s);
        if p.chart == 1 {
            if n == 2 {
                x[1] = -x[1];
            }
            x[n] = -x[n];
        }
        x
    }

    /// Pull an ambient tangent vector at p back to chart components.
    fn pull_tangent(&self, p: &TargetPoint, x: &[f64; MAX_DIM + 1]) -> VecN {
        // Solve push_tangent(p, v) = x in the least-squares sense; since the
        // push is conformal with factor lam = 2r/(1+s), v = push^T(x)/lam^2.
        let r = self.radius();
        let n = self.dim;
        let s = p.y.norm2();
        let lam = 2.0 * r / (1.0 + s);
        let mut xx = *x;
        if p.chart == 1 {
            if n == 2 {
                xx[1] = -xx[1];
            }
            xx[n] = -xx[n];
        }
        let mut v = VecN::zeros(n);
        // d(embed)_i/d y_j = lam (delta_ij - 2 y_i y_j/(1+s)); d(embed)_n/d y_j = lam * 2 y_j/(1+s)
        for j in 0..n {
            let mut t = 0.0;
            for i in 0..n {
                let d = if i == j { 1.0 } else { 0.0 };
                t += (d - 2.0 * p.y.a[i] * p.y.a[j] / (1.0 + s)) * xx[i];
            }
            t += 2.0 * p.y.a[j] / (1.0 + s) * xx[n];
            v.a[j] = t / lam;
        }
        v
    }

    // ------------------------------------------------------------- geometry

    pub fn dist(&self, p: &TargetPoint, q: &TargetPoint) -> f64 {
        match &self.kind {
            ModelKind::Sphere { .. } => {
                let r = self.radius();
                let xp = self.embed(p);
                let xq = self.embed(q);
                let mut dot = 0.0;
                let mut cross2 = 0.0;
                for i in 0..=self.dim {
                    dot += xp[i] * xq[i];
                }
                // |P x Q|^2 = |P|^2|Q|^2 - (P.Q)^2
                let pp = r * r;
                cross2 += (pp * pp - dot * dot).max(0.0);
                r * cross2.sqrt().atan2(dot)
            }
            ModelKind::FlatTorus { periods } => {
                let mut s = 0.0;
                for i in 0..2 {
                    let mut d = q.y.a[i] - p.y.a[i];
                    d -= (d / periods[i]).round() * periods[i];
                    s += d * d;
                }
                s.sqrt()
            }
            ModelKind::Chart(_) => match self.log_map(p, q) {
                Ok(v) => self.vec_norm(p, &v),
                Err(_) => f64::INFINITY,
            },
        }
    }

    /// Geodesic endpoint exp_p(v); v in chart components at p.
    pub fn exp_map(&self, p: &TargetPoint, v: &VecN) -> Result<TargetPoint> {
        let len = self.vec_norm(p, v);
        if len >= self.inj {
            return Err(GlueError::VectorTooLong {
                len,
                bound: self.inj,
            });
        }
        if len == 0.0 {
            return Ok(*p);
        }
        match &self.kind {
            ModelKind::Sphere { .. } => {
                let r = self.radius();
                let xp = self.embed(p);
                let xv = self.push_tangent(p, v);
                let vn = norm_amb(&xv, self.dim + 1);
                let th = vn / r;
                let mut x = [0.0; MAX_DIM + 1];
                for i in 0..=self.dim {
                    x[i] = th.cos() * xp[i] + r * th.sin() * xv[i] / vn;
                }
                Ok(self.unembed(&x))
            }
            ModelKind::FlatTorus { .. } => {
                Ok(self.normalize(&TargetPoint::new(0, p.y.add(v))))
            }
            ModelKind::Chart(_) => {
                let (end, _, _) = self.integrate_geodesic(p, v, None)?;
                Ok(end)
            }
        }
    }

    /// log_p(q): v with exp_p(v) = q; chart components at p.
    pub fn log_map(&self, p: &TargetPoint, q: &TargetPoint) -> Result<VecN> {
        match &self.kind {
            ModelKind::Sphere { .. } => {
                let r = self.radius();
                let d = self.dist(p, q);
                if d >= self.inj {
                    return Err(GlueError::OutOfInjectivityRadius {
                        dist: d,
                        bound: self.inj,
                    });
                }
                if d == 0.0 {
                    return Ok(VecN::zeros(self.dim));
                }
                let xp = self.embed(p);
                let xq = self.embed(q);
                let mut dot = 0.0;
                for i in 0..=self.dim {
                    dot += xp[i] * xq[i];
                }
                let mut u = [0.0; MAX_DIM + 1];
                for i in 0..=self.dim {
                    u[i] = xq[i] - dot / (r * r) * xp[i];
                }
                let un = norm_amb(&u, self.dim + 1);
                if un < 1e-14 * r {
                    // no tangential direction: either coincident to roundoff
                    // (dist carries sqrt-eps cancellation noise) or antipodal
                    if d < 1e-7 * r {
                        return Ok(VecN::zeros(self.dim));
                    }
                    return Err(GlueError::OutOfInjectivityRadius {
                        dist: d,
                        bound: self.inj,
                    });
                }
                for x in u.iter_mut() {
                    *x *= d / un;
                }
                Ok(self.pull_tangent(p, &u))
            }
            ModelKind::FlatTorus { periods } => {
                let mut v = VecN::zeros(2);
                for i in 0..2 {
                    let mut d = q.y.a[i] - p.y.a[i];
                    d -= (d / periods[i]).round() * periods[i];
                    v.a[i] = d;
                }
                Ok(v)
            }
            ModelKind::Chart(_) => self.log_by_shooting(p, q),
        }
    }

    /// Parallel transport of u along t -> exp_p(t v_dir), t: 0 -> 1.
    /// Returns chart components at the endpoint's chart.
    pub fn parallel_transport(
        &self,
        p: &TargetPoint,
        v_dir: &VecN,
        u: &VecN,
    ) -> Result<(TargetPoint, VecN)> {
        let len = self.vec_norm(p, v_dir);
        if len >= self.inj {
            return Err(GlueError::VectorTooLong {
                len,
                bound: self.inj,
            });
        }
        if len == 0.0 {
            return Ok((*p, *u));
        }
        match &self.kind {
            ModelKind::Sphere { .. } => {
                let r = self.radius();
                let xp = self.embed(p);
                let xv = self.push_tangent(p, v_dir);
                let xu = self.push_tangent(p, u);
                let vn = norm_amb(&xv, self.dim + 1);
                let th = vn / r;
                let mut vhat = [0.0; MAX_DIM + 1];
                for i in 0..=self.dim {
                    vhat[i] = xv[i] / vn;
                }
                let upar: f64 = (0..=self.dim).map(|i| xu[i] * vhat[i]).sum();
                let mut out = [0.0; MAX_DIM + 1];
                for i in 0..=self.dim {
                    out[i] = xu[i] + upar * ((th.cos() - 1.0) * vhat[i] - th.sin() * xp[i] / r);
                }
                let end = self.exp_map(p, v_dir)?;
                Ok((end, self.pull_tangent(&end, &out)))
            }
            ModelKind::FlatTorus { .. } => {
                let end = self.exp_map(p, v_dir)?;
                Ok((end, *u))
            }
            ModelKind::Chart(_) => {
                let (end, _, tu) = self.integrate_geodesic(p, v_dir, Some(*u))?;
                Ok((end, tu.expect("transport requested")))
            }
        }
    }

    /// Curvature R(X, Y)Z at p, chart components.
    pub fn curvature_apply(&self, p: &TargetPoint, x: &VecN, y: &VecN, z: &VecN) -> VecN {
        match &self.kind {
            ModelKind::Sphere { radius } => {
                // Constant curvature 1/r^2: R(X,Y)Z = ( <Y,Z> X - <X,Z> Y ) / r^2.
                let c = 1.0 / (radius * radius);
                let yz = self.inner(p, y, z);
                let xz = self.inner(p, x, z);
                x.scale(c * yz).sub(&y.scale(c * xz))
            }
            ModelKind::FlatTorus { .. } => VecN::zeros(self.dim),
            ModelKind::Chart(_) => self.curvature_fd(p, x, y, z),
        }
    }

    /// R(X,Y)Z from centered finite differences of the Christoffel symbols.
    pub fn curvature_fd(&self, p: &TargetPoint, x: &VecN, y: &VecN, z: &VecN) -> VecN {
        let n = self.dim;
        let g0 = self.christoffel(p);
        // dg[d][k][i][j] = d_d Gamma^k_ij
        let mut dg = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for d in 0..n {
            let mut yp = *p;
            yp.y.a[d] += H_GAMMA;
            let gp = self.christoffel(&yp);
            let mut ym = *p;
            ym.y.a[d] -= H_GAMMA;
            let gm = self.christoffel(&ym);
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        dg[d][k][i][j] = (gp.g[k][i][j] - gm.g[k][i][j]) / (2.0 * H_GAMMA);
                    }
                }
            }
        }
        // R^k_{l i j} = d_i G^k_{j l} - d_j G^k_{i l} + G^k_{i m} G^m_{j l} - G^k_{j m} G^m_{i l}
        let mut out = VecN::zeros(n);
        for k in 0..n {
            let mut s = 0.0;
            for l in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let mut rk = dg[i][k][j][l] - dg[j][k][i][l];
                        for m in 0..n {
                            rk += g0.g[k][i][m] * g0.g[m][j][l] - g0.g[k][j][m] * g0.g[m][i][l];
                        }
                        s += rk * z.a[l] * x.a[i] * y.a[j];
                    }
                }
            }
            out.a[k] = s;
        }
        out
    }

    // -------------------------------------------------- derivative maps E, Psi

    /// E_p(xi) xi' = d/dt exp_p(xi + t xi')|_0, components at exp_p(xi)'s chart.
    pub fn e_map(&self, p: &TargetPoint, xi: &VecN, xip: &VecN) -> Result<VecN> {
        if self.is_flat() {
            return Ok(*xip);
        }
        let end = self.exp_map(p, xi)?;
        let h = H_EXP / xip.norm().max(1e-9);
        let qp = self.exp_map(p, &xi.axpy(h, xip))?;
        let qm = self.exp_map(p, &xi.axpy(-h, xip))?;
        let cp = self.coords_in_chart(&qp, end.chart, &end.y);
        let cm = self.coords_in_chart(&qm, end.chart, &end.y);
        Ok(cp.sub(&cm).scale(0.5 / h))
    }

    /// Psi_p(xi; xi', eta) = covariant t-derivative at 0 of Phi(xi + t xi') eta,
    /// components at exp_p(xi)'s chart.
    pub fn psi_map(&self, p: &TargetPoint, xi: &VecN, xip: &VecN, eta: &VecN) -> Result<VecN> {
        if self.is_flat() {
            return Ok(VecN::zeros(self.dim));
        }
        let end = self.exp_map(p, xi)?;
        let h = H_EXP / xip.norm().max(1e-9);
        let (ep, wp) = self.parallel_transport(p, &xi.axpy(h, xip), eta)?;
        let (em, wm) = self.parallel_transport(p, &xi.axpy(-h, xip), eta)?;
        // transport W(h), W(-h) back to end along the connecting geodesics
        let vp = self.log_map(&end, &ep)?;
        let vm = self.log_map(&end, &em)?;
        let bp = self.transport_between(&ep, &end, &wp)?;
        let bm = self.transport_between(&em, &end, &wm)?;
        let _ = (vp, vm);
        Ok(bp.sub(&bm).scale(0.5 / h))
    }

    /// Transport u from p to q along the connecting geodesic; components at q's chart.
    pub fn transport_between(&self, p: &TargetPoint, q: &TargetPoint, u: &VecN) -> Result<VecN> {
        let v = self.log_map(p, q)?;
        let (end, w) = self.parallel_transport(p, &v, u)?;
        // `end` should be q up to roundoff; re-express in q's chart.
        let mut out = w;
        if end.chart != q.chart {
            let j = self.jacobian_to_chart(&end, q.chart);
            out = j.apply(&w);
        }
        Ok(out)
    }

    // ----------------------------------------------------------- ODE backend

    /// RK4 integration of the geodesic ODE (optionally carrying a transported
    /// vector): y'' + Gamma(y)(y', y') = 0, V' + Gamma(y)(y', V) = 0.
    fn integrate_geodesic(
        &self,
        p: &TargetPoint,
        v: &VecN,
        carry: Option<VecN>,
    ) -> Result<(TargetPoint, VecN, Option<VecN>)> {
        let len = self.vec_norm(p, v);
        let steps = ((len * ODE_STEPS_PER_UNIT as f64).ceil() as usize).max(16);
        let dt = 1.0 / steps as f64;
        let mut chart = p.chart;
        let mut y = p.y;
        let mut dy = *v;
        let mut w = carry;
        for _ in 0..steps {
            let f = |yy: &VecN, dd: &VecN, ww: &Option<VecN>| -> (VecN, VecN, Option<VecN>) {
                let g = self.christoffel(&TargetPoint::new(chart, *yy));
                let acc = g.contract(dd, dd).scale(-1.0);
                let dw = ww.as_ref().map(|wv| g.contract(dd, wv).scale(-1.0));
                (*dd, acc, dw)
            };
            let (k1y, k1d, k1w) = f(&y, &dy, &w);
            let (k2y, k2d, k2w) = f(
                &y.axpy(0.5 * dt, &k1y),
                &dy.axpy(0.5 * dt, &k1d),
                &w.map(|wv| wv.axpy(0.5 * dt, k1w.as_ref().unwrap())),
            );
            let (k3y, k3d, k3w) = f(
                &y.axpy(0.5 * dt, &k2y),
                &dy.axpy(0.5 * dt, &k2d),
                &w.map(|wv| wv.axpy(0.5 * dt, k2w.as_ref().unwrap())),
            );
            let (k4y, k4d, k4w) = f(
                &y.axpy(dt, &k3y),
                &dy.axpy(dt, &k3d),
                &w.map(|wv| wv.axpy(dt, k3w.as_ref().unwrap())),
            );
            let c = dt / 6.0;
            y = y
                .axpy(c, &k1y)
                .axpy(2.0 * c, &k2y)
                .axpy(2.0 * c, &k3y)
                .axpy(c, &k4y);
            dy = dy
                .axpy(c, &k1d)
                .axpy(2.0 * c, &k2d)
                .axpy(2.0 * c, &k3d)
                .axpy(c, &k4d);
            if let Some(wv) = w {
                w = Some(
                    wv.axpy(c, k1w.as_ref().unwrap())
                        .axpy(2.0 * c, k2w.as_ref().unwrap())
                        .axpy(2.0 * c, k3w.as_ref().unwrap())
                        .axpy(c, k4w.as_ref().unwrap()),
                );
            }
            // chart housekeeping
            match &self.kind {
                ModelKind::Chart(ChartTable::SphereStereographic { .. }) => {
                    if y.norm() > 1.45 {
                        let here = TargetPoint::new(chart, y);
                        let j = self.jacobian_to_chart(&here, 1 - chart);
                        let moved = self.to_chart(&here, 1 - chart);
                        dy = j.apply(&dy);
                        if let Some(wv) = w {
                            w = Some(j.apply(&wv));
                        }
                        chart = moved.chart;
                        y = moved.y;
                    }
                }
                ModelKind::Chart(ChartTable::ConformalTorus { periods, .. }) => {
                    for i in 0..2 {
                        y.a[i] = y.a[i].rem_euclid(periods[i]);
                    }
                }
                _ => {}
            }
            if !self.in_chart_box(chart, &y) {
                return Err(GlueError::ChartEscape(y.a[0], y.a[1]));
            }
        }
        Ok((TargetPoint::new(chart, y), dy, w))
    }

    /// log by damped-Newton shooting on the geodesic endpoint.
    fn log_by_shooting(&self, p: &TargetPoint, q: &TargetPoint) -> Result<VecN> {
        let n = self.dim;
        let qc = self.coords_in_chart(q, p.chart, &p.y);
        let mut v = qc.sub(&p.y); // flat initial guess
        let mut last_res = f64::INFINITY;
        for _ in 0..60 {
            let end = self.exp_map(p, &v)?;
            let ec = self.coords_in_chart(&end, p.chart, &qc);
            let r = ec.sub(&qc);
            let res = r.norm();
            last_res = res;
            if res < 1e-11 {
                return Ok(v);
            }
            // FD Jacobian of endpoint coords wrt v
            let mut jac = MatN::zeros(n);
            let h = 1e-6 * v.norm().max(1e-3);
            for j in 0..n {
                let mut vp = v;
                vp.a[j] += h;
                let ep = self.exp_map(p, &vp)?;
                let epc = self.coords_in_chart(&ep, p.chart, &qc);
                let mut vm = v;
                vm.a[j] -= h;
                let em = self.exp_map(p, &vm)?;
                let emc = self.coords_in_chart(&em, p.chart, &qc);
                for i in 0..n {
                    jac.m[i][j] = (epc.a[i] - emc.a[i]) / (2.0 * h);
                }
            }
            let step = jac
                .solve(&r)
                .ok_or(GlueError::NoConvergence(res))?;
            v = v.sub(&step);
        }
        Err(GlueError::NoConvergence(last_res))
    }
}

#[inline]
fn norm_amb(x: &[f64; MAX_DIM + 1], n: usize) -> f64 {
    x[..n].iter().map(|t| t * t).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere() -> ManifoldModel {
        ManifoldModel::sphere(2, 1.0)
    }

    #[test]
    fn exp_zero_is_identity() {
        let m = sphere();
        let p = TargetPoint::new(0, VecN::v2(0.3, -0.1));
        let q = m.exp_map(&p, &VecN::zeros(2)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn torus_exp_is_translation() {
        let m = ManifoldModel::flat_torus([1.0, 1.0]);
        let p = TargetPoint::new(0, VecN::v2(0.1, 0.2));
        let q = m.exp_map(&p, &VecN::v2(0.3, 0.0)).unwrap();
        assert!((q.y.a[0] - 0.4).abs() < 1e-15 && (q.y.a[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn sphere_quarter_turn_from_pole() {
        // north pole = chart-1 center; a |v| = pi/2 geodesic lands on the equator.
        let m = sphere();
        let p = TargetPoint::new(1, VecN::zeros(2));
        let v = VecN::v2(std::f64::consts::FRAC_PI_4, 0.0); // metric factor 2 at center
        let q = m.exp_map(&p, &v).unwrap();
        let x = m.embed(&q);
        assert!(x[2].abs() < 1e-12, "should land on equator, x3 = {}", x[2]);
    }

    #[test]
    fn sphere_log_exp_roundtrip() {
        let m = sphere();
        let p = TargetPoint::new(0, VecN::v2(0.4, 0.2));
        for k in 0..40 {
            let a = 0.3 + 0.11 * k as f64;
            let v = VecN::v2(a.cos(), a.sin()).scale(0.2 + 0.03 * k as f64);
            let q = m.exp_map(&p, &v).unwrap();
            let w = m.log_map(&p, &q).unwrap();
            assert!(w.sub(&v).norm() < 1e-10, "roundtrip error {}", w.sub(&v).norm());
        }
    }

    #[test]
    fn sphere_transport_isometry() {
        let m = sphere();
        let p = TargetPoint::new(0, VecN::v2(-0.2, 0.5));
        let dir = VecN::v2(0.7, -0.3);
        let u = VecN::v2(0.15, 0.45);
        let (end, tu) = m.parallel_transport(&p, &dir, &u).unwrap();
        let before = m.inner(&p, &u, &u);
        let after = m.inner(&end, &tu, &tu);
        assert!((before - after).abs() < 1e-10 * before.max(1.0));
    }

    #[test]
    fn sphere_closed_forms_match_ode_model() {
        let closed = sphere();
        let ode = ManifoldModel::chart_model(ChartTable::SphereStereographic { radius: 1.0 });
        let p = TargetPoint::new(0, VecN::v2(0.25, -0.35));
        let v = VecN::v2(0.4, 0.55);
        let q1 = closed.exp_map(&p, &v).unwrap();
        let q2 = ode.exp_map(&p, &v).unwrap();
        // chordal comparison: the arc-length dist loses half the precision to
        // cancellation for nearly identical points
        let (x1, x2) = (closed.embed(&q1), closed.embed(&q2));
        let chord = (0..3)
            .map(|i| (x1[i] - x2[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(chord < 1e-8, "exp mismatch {chord}");
        let u = VecN::v2(-0.3, 0.2);
        let (e1, t1) = closed.parallel_transport(&p, &v, &u).unwrap();
        let (_e2, t2) = ode.parallel_transport(&p, &v, &u).unwrap();
        let t2c = if _e2.chart == e1.chart {
            t2
        } else {
            ode.jacobian_to_chart(&_e2, e1.chart).apply(&t2)
        };
        assert!(t1.sub(&t2c).norm() < 1e-6, "transport mismatch {}", t1.sub(&t2c).norm());
    }

    #[test]
    fn sphere_curvature_closed_vs_fd() {
        let closed = sphere();
        let fd = ManifoldModel::chart_model(ChartTable::SphereStereographic { radius: 1.0 });
        let p = TargetPoint::new(0, VecN::v2(0.3, 0.6));
        let (x, y, z) = (VecN::v2(1.0, 0.2), VecN::v2(-0.4, 1.0), VecN::v2(0.5, -0.7));
        let a = closed.curvature_apply(&p, &x, &y, &z);
        let b = fd.curvature_apply(&p, &x, &y, &z);
        assert!(a.sub(&b).norm() < 1e-5, "curvature mismatch {:?} vs {:?}", a, b);
        // antisymmetry
        let c = closed.curvature_apply(&p, &y, &x, &z);
        assert!(a.add(&c).norm() < 1e-13);
    }

    #[test]
    fn e_map_at_zero_is_identity() {
        let m = sphere();
        let p = TargetPoint::new(0, VecN::v2(0.1, 0.2));
        let xip = VecN::v2(0.3, -0.4);
        let e = m.e_map(&p, &VecN::zeros(2), &xip).unwrap();
        assert!(e.sub(&xip).norm() < 1e-7);
    }

    #[test]
    fn chart_transition_consistency() {
        let m = sphere();
        let p = TargetPoint::new(0, VecN::v2(0.8, 0.7));
        let q = m.to_chart(&p, 1);
        let back = m.to_chart(&q, 0);
        assert!(back.y.sub(&p.y).norm() < 1e-14);
        // jacobian consistency with FD
        let j = m.jacobian_to_chart(&p, 1);
        let h = 1e-6;
        for c in 0..2 {
            let mut pp = p;
            pp.y.a[c] += h;
            let mut pm = p;
            pm.y.a[c] -= h;
            let qp = m.to_chart(&pp, 1);
            let qm = m.to_chart(&pm, 1);
            for r in 0..2 {
                let fd = (qp.y.a[r] - qm.y.a[r]) / (2.0 * h);
                assert!((fd - j.m[r][c]).abs() < 1e-7);
            }
        }
    }
}
