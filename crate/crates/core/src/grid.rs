//! Overset discretization of a punctured/glued sphere domain.
//!
//! One `Grid` covers a sphere (or the glued surface) with three overlapping
//! charts in a single local coordinate z:
//!   * cap-in:  Cartesian u = z / s_in on [-1, 1]^2 (covers |z| <~ s_in),
//!   * core:    log-polar (tau, theta) = (log |z|, arg z), uniform lattice,
//!   * cap-out: Cartesian w = s_out / z on [-1, 1]^2 (covers |z| >~ s_out,
//!              including the point at infinity at w = 0).
//!
//! The tau lattice is anchored at tau = 0 and the neck parameters are snapped
//! onto it, so the glued grid and the two sphere grids share nodes exactly
//! (same floating-point coordinates and, outside the neck, the same metric
//! weights). The outermost layer of every chart is a fringe layer whose values
//! are not independent unknowns: they are reconstructed from the neighbouring
//! chart by cubic (Catmull-Rom) interpolation.
//!
//! All metric data is carried by a single per-node scalar q = theta / mu
//! (conformal weight over chart scale): the area density in chart coordinates
//! is q^{-2} and the operator coefficient is q^2.

use crate::cutoff::pou_down;
use crate::error::GlueError;
use crate::Result;

pub const SNAP_EPS: f64 = 1e-9;
// the cap weight must vanish strictly before the second-outermost cap ring
// (|u| = 1 - h >= 0.875), so active quadrature nodes never touch fringe
const POU_LO: f64 = 0.50;
const POU_HI: f64 = 0.85;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ChartId {
    CapIn,
    Core,
    CapOut,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub chart: ChartId,
    /// Integer lattice coordinates: cap charts (i, j) in [-m, m]^2;
    /// core (k, j) with tau = k * dtau, theta = j * dtheta.
    pub i: i64,
    pub j: i64,
    /// Chart coordinates (u1, u2) / (tau, theta) / (w1, w2).
    pub c1: f64,
    pub c2: f64,
    /// |z| in the grid's local coordinate (infinite at w = 0).
    pub absz: f64,
    /// Conformal weight over chart scale, q = theta / mu.
    pub q: f64,
    /// Chart cell area (h^2 or dtau * dtheta).
    pub cell: f64,
    /// Partition-of-unity quadrature weight of this chart at this node.
    pub pou: f64,
    pub fringe: bool,
}

/// Neck parameters snapped onto the tau lattice: the effective values are
/// R = exp(m_a dtau), delta = exp(-m_b dtau), so the circles |z| = delta/R,
/// 1/R, 1/(delta R) are all lattice rows.
#[derive(Clone, Copy, Debug)]
pub struct Neck {
    pub n_theta: usize,
    pub dtau: f64,
    pub m_a: i64,
    pub m_b: i64,
}

impl Neck {
    pub fn snap(delta: f64, big_r: f64, n_theta: usize) -> Result<Neck> {
        if !(delta > 0.0 && delta < 1.0) || !(big_r > 1.0) {
            return Err(GlueError::InadmissibleParams {
                delta,
                r: big_r,
                delta0: 0.25,
            });
        }
        let dtau = 2.0 * std::f64::consts::PI / n_theta as f64;
        let m_a = (big_r.ln() / dtau).round() as i64;
        let m_b = ((1.0 / delta).ln() / dtau).round() as i64;
        // need delta < 1 strictly, a genuinely long neck, and delta R >= 4
        if m_b < 2 || ((m_a - m_b) as f64) * dtau < (4.0f64).ln() {
            return Err(GlueError::InadmissibleParams {
                delta,
                r: big_r,
                delta0: 0.25,
            });
        }
        Ok(Neck {
            n_theta,
            dtau,
            m_a,
            m_b,
        })
    }

    pub fn delta(&self) -> f64 {
        (-(self.m_b as f64) * self.dtau).exp()
    }

    pub fn big_r(&self) -> f64 {
        ((self.m_a as f64) * self.dtau).exp()
    }

    /// The effective neck length parameter delta * R.
    pub fn delta_r(&self) -> f64 {
        (((self.m_a - self.m_b) as f64) * self.dtau).exp()
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub n_theta: usize,
    pub dtau: f64,
    pub dtheta: f64,
    pub m_cap: i64,
    pub h_cap: f64,
    pub s_in: f64,
    pub s_out: f64,
    /// Set on the glued grid: the conformal weight switches branch at the
    /// lattice row k = -m_a (|z| = 1/R).
    pub glued_ma: Option<i64>,
    pub k_min: i64,
    pub k_max: i64,
    pub nodes: Vec<Node>,
    /// Donor stencil per node; empty unless the node is fringe.
    pub donors: Vec<Vec<(usize, f64)>>,
    cap_in_base: usize,
    core_base: usize,
    cap_out_base: usize,
}

impl Grid {
    /// Glued surface grid for the snapped neck: s_in = R^{-2}, s_out = 1.
    pub fn glued(neck: &Neck) -> Result<Grid> {
        let s_in = (-2.0 * neck.m_a as f64 * neck.dtau).exp();
        Grid::new(neck.n_theta, s_in, 1.0, Some(neck.m_a))
    }

    /// First sphere (gluing point at z = 0): cap-in sits strictly inside the
    /// region where the perturbed maps are constant.
    pub fn sphere0(neck: &Neck) -> Result<Grid> {
        let s_in = 0.5 * (-((neck.m_a + neck.m_b) as f64) * neck.dtau).exp();
        Grid::new(neck.n_theta, s_in, 1.0, None)
    }

    /// Second sphere in the coordinate v = R^2 z (gluing point at v = infinity).
    pub fn sphere_inf(neck: &Neck) -> Result<Grid> {
        let s_out = 2.0 * (((neck.m_a + neck.m_b) as f64) * neck.dtau).exp();
        Grid::new(neck.n_theta, 1.0, s_out, None)
    }

    /// Plain full-sphere grid (no neck), s_in = s_out scale split around 1.
    pub fn sphere_plain(n_theta: usize) -> Result<Grid> {
        Grid::new(n_theta, 0.125, 8.0, None)
    }

    pub fn new(n_theta: usize, s_in: f64, s_out: f64, glued_ma: Option<i64>) -> Result<Grid> {
        if n_theta < 24 || n_theta % 2 != 0 {
            return Err(GlueError::ResolutionTooCoarse(format!(
                "n_theta = {n_theta} (need even, >= 24)"
            )));
        }
        if !(s_out / s_in >= 8.0) {
            return Err(GlueError::WrongDomain(format!(
                "cap scales too close: s_in = {s_in:.3e}, s_out = {s_out:.3e}"
            )));
        }
        let dtau = 2.0 * std::f64::consts::PI / n_theta as f64;
        let dtheta = dtau;
        let m_cap = ((1.0 / dtau).ceil() as i64).max(8);
        let h_cap = 1.0 / m_cap as f64;
        let ln2 = std::f64::consts::LN_2;
        // two spare rows beyond the nominal half-octave overlap keep all
        // donor stencils strictly inside the neighbouring chart
        let k_min = ((s_in.ln() - ln2) / dtau).ceil() as i64 - 2;
        let k_max = ((s_out.ln() + ln2) / dtau).floor() as i64 + 2;
        if k_max - k_min < 8 {
            return Err(GlueError::ResolutionTooCoarse(format!(
                "core has only {} rows",
                k_max - k_min + 1
            )));
        }

        let side = (2 * m_cap + 1) as usize;
        let n_core_rows = (k_max - k_min + 1) as usize;
        let cap_in_base = 0usize;
        let core_base = side * side;
        let cap_out_base = core_base + n_core_rows * n_theta;
        let n_total = cap_out_base + side * side;

        let mut g = Grid {
            n_theta,
            dtau,
            dtheta,
            m_cap,
            h_cap,
            s_in,
            s_out,
            glued_ma,
            k_min,
            k_max,
            nodes: Vec::with_capacity(n_total),
            donors: vec![Vec::new(); n_total],
            cap_in_base,
            core_base,
            cap_out_base,
        };

        let chi_in = |absz: f64| pou_down(absz, POU_LO * s_in, POU_HI * s_in);
        let chi_out = |absz: f64| pou_down(s_out / absz, POU_LO, POU_HI);

        // cap-in
        for i in -m_cap..=m_cap {
            for j in -m_cap..=m_cap {
                let c1 = i as f64 * h_cap;
                let c2 = j as f64 * h_cap;
                let un2 = c1 * c1 + c2 * c2;
                let absz = s_in * un2.sqrt();
                let q = if glued_ma.is_some() {
                    1.0 + un2
                } else {
                    (1.0 + (s_in * s_in) * un2) / s_in
                };
                let fringe = i.abs() == m_cap || j.abs() == m_cap;
                let pou = if fringe { 0.0 } else { chi_in(absz) };
                g.nodes.push(Node {
                    chart: ChartId::CapIn,
                    i,
                    j,
                    c1,
                    c2,
                    absz,
                    q,
                    cell: h_cap * h_cap,
                    pou,
                    fringe,
                });
            }
        }
        // core
        for k in k_min..=k_max {
            for j in 0..n_theta as i64 {
                let tau = k as f64 * dtau;
                let theta = j as f64 * dtheta;
                let absz = tau.exp();
                let tau_eff = match glued_ma {
                    Some(ma) if k <= -ma => ((k + 2 * ma) as f64) * dtau,
                    _ => tau,
                };
                let q = (-tau_eff).exp() + tau_eff.exp();
                let fringe = k == k_min || k == k_max;
                let pou = if fringe {
                    0.0
                } else {
                    (1.0 - chi_in(absz) - chi_out(absz)).max(0.0)
                };
                g.nodes.push(Node {
                    chart: ChartId::Core,
                    i: k,
                    j,
                    c1: tau,
                    c2: theta,
                    absz,
                    q,
                    cell: dtau * dtheta,
                    pou,
                    fringe,
                });
            }
        }
        // cap-out
        for i in -m_cap..=m_cap {
            for j in -m_cap..=m_cap {
                let c1 = i as f64 * h_cap;
                let c2 = j as f64 * h_cap;
                let wn2 = c1 * c1 + c2 * c2;
                let wn = wn2.sqrt();
                let absz = if wn == 0.0 { f64::INFINITY } else { s_out / wn };
                let q = (wn2 + s_out * s_out) / s_out;
                let fringe = i.abs() == m_cap || j.abs() == m_cap;
                let pou = if fringe { 0.0 } else { pou_down(wn, POU_LO, POU_HI) };
                g.nodes.push(Node {
                    chart: ChartId::CapOut,
                    i,
                    j,
                    c1,
                    c2,
                    absz,
                    q,
                    cell: h_cap * h_cap,
                    pou,
                    fringe,
                });
            }
        }
        debug_assert_eq!(g.nodes.len(), n_total);

        g.build_donors()?;
        Ok(g)
    }

    // ----------------------------------------------------------- indexing

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn idx(&self, chart: ChartId, i: i64, j: i64) -> Option<usize> {
        let side = (2 * self.m_cap + 1) as i64;
        match chart {
            ChartId::CapIn | ChartId::CapOut => {
                if i.abs() > self.m_cap || j.abs() > self.m_cap {
                    return None;
                }
                let base = if chart == ChartId::CapIn {
                    self.cap_in_base
                } else {
                    self.cap_out_base
                };
                Some(base + ((i + self.m_cap) * side + (j + self.m_cap)) as usize)
            }
            ChartId::Core => {
                if i < self.k_min || i > self.k_max {
                    return None;
                }
                let jw = j.rem_euclid(self.n_theta as i64);
                Some(self.core_base + ((i - self.k_min) as usize) * self.n_theta + jw as usize)
            }
        }
    }

    /// 1-ring neighbor in chart coordinates; axis 0 = first coordinate,
    /// dir in {-1, +1}. Defined for every non-fringe node.
    pub fn neighbor(&self, idx: usize, axis: usize, dir: i64) -> usize {
        let n = &self.nodes[idx];
        let (i, j) = if axis == 0 {
            (n.i + dir, n.j)
        } else {
            (n.i, n.j + dir)
        };
        self.idx(n.chart, i, j)
            .unwrap_or_else(|| panic!("neighbor off grid at node {idx} axis {axis} dir {dir}"))
    }

    /// Diagonal neighbor (i + d1, j + d2).
    pub fn corner(&self, idx: usize, d1: i64, d2: i64) -> usize {
        let n = &self.nodes[idx];
        self.idx(n.chart, n.i + d1, n.j + d2)
            .expect("corner neighbor off grid")
    }

    pub fn spacings(&self, chart: ChartId) -> (f64, f64) {
        match chart {
            ChartId::Core => (self.dtau, self.dtheta),
            _ => (self.h_cap, self.h_cap),
        }
    }

    /// Local coordinate z = (re, im); None for the point at infinity.
    pub fn local_z(&self, idx: usize) -> Option<(f64, f64)> {
        let n = &self.nodes[idx];
        match n.chart {
            ChartId::CapIn => Some((self.s_in * n.c1, self.s_in * n.c2)),
            ChartId::Core => {
                let r = n.absz;
                Some((r * n.c2.cos(), r * n.c2.sin()))
            }
            ChartId::CapOut => {
                let wn2 = n.c1 * n.c1 + n.c2 * n.c2;
                if wn2 == 0.0 {
                    None
                } else {
                    // z = s_out / w = s_out * conj(w) / |w|^2
                    Some((self.s_out * n.c1 / wn2, -self.s_out * n.c2 / wn2))
                }
            }
        }
    }

    /// The inverted coordinate w = s_out / z (well-defined away from z = 0).
    pub fn local_w(&self, idx: usize) -> (f64, f64) {
        let n = &self.nodes[idx];
        match n.chart {
            ChartId::CapOut => (n.c1, n.c2),
            _ => {
                let (zr, zi) = self.local_z(idx).expect("finite node");
                let z2 = zr * zr + zi * zi;
                (self.s_out * zr / z2, -self.s_out * zi / z2)
            }
        }
    }

    // ---------------------------------------------------------- quadrature

    /// Quadrature weight of a node: pou * cell * q^{-2} (area element).
    #[inline]
    pub fn quad_weight(&self, idx: usize) -> f64 {
        let n = &self.nodes[idx];
        n.pou * n.cell / (n.q * n.q)
    }

    /// Integral over the surface of a nodal scalar.
    pub fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        (0..self.n_nodes())
            .map(|i| {
                let w = self.quad_weight(i);
                if w > 0.0 {
                    w * f(i)
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn total_area(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    /// Nodes with rmin <= |z| <= rmax (local coordinate).
    pub fn nodes_in_annulus(&self, rmin: f64, rmax: f64) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&i| {
                let a = self.nodes[i].absz;
                a >= rmin && a <= rmax
            })
            .collect()
    }

    // ------------------------------------------------------- fringe donors

    fn build_donors(&mut self) -> Result<()> {
        let mut donors = vec![Vec::new(); self.n_nodes()];
        for idx in 0..self.n_nodes() {
            if !self.nodes[idx].fringe {
                continue;
            }
            let n = &self.nodes[idx];
            let stencil = match n.chart {
                ChartId::CapIn => {
                    let absz = n.absz;
                    let theta = n.c2.atan2(n.c1);
                    self.core_stencil(absz.ln(), theta)?
                }
                ChartId::CapOut => {
                    let wn = (n.c1 * n.c1 + n.c2 * n.c2).sqrt();
                    let theta = (-n.c2).atan2(n.c1);
                    self.core_stencil(self.s_out.ln() - wn.ln(), theta)?
                }
                ChartId::Core => {
                    if n.i == self.k_min {
                        let r = n.absz / self.s_in;
                        self.cap_stencil(ChartId::CapIn, r * n.c2.cos(), r * n.c2.sin())?
                    } else {
                        let r = self.s_out / n.absz;
                        self.cap_stencil(ChartId::CapOut, r * n.c2.cos(), -r * n.c2.sin())?
                    }
                }
            };
            donors[idx] = stencil;
        }
        self.donors = donors;
        Ok(())
    }

    /// Interpolation stencil at (tau, theta) from non-fringe core nodes.
    fn core_stencil(&self, tau: f64, theta: f64) -> Result<Vec<(usize, f64)>> {
        let x = tau / self.dtau;
        let y = (theta / self.dtheta).rem_euclid(self.n_theta as f64);
        // exact lattice hit: copy the node
        if (x - x.round()).abs() < SNAP_EPS && (y - y.round()).abs() < SNAP_EPS {
            let k = x.round() as i64;
            let j = (y.round() as i64).rem_euclid(self.n_theta as i64);
            let id = self.idx(ChartId::Core, k, j).ok_or_else(|| {
                GlueError::WrongDomain(format!("donor row {k} outside core"))
            })?;
            if self.nodes[id].fringe {
                return Err(GlueError::WrongDomain(format!(
                    "exact donor at core row {k} is fringe"
                )));
            }
            return Ok(vec![(id, 1.0)]);
        }
        let kf = x.floor() as i64;
        let jf = y.floor() as i64;
        let sx = x - kf as f64;
        let sy = y - jf as f64;
        if kf - 1 <= self.k_min || kf + 2 >= self.k_max {
            return Err(GlueError::ResolutionTooCoarse(format!(
                "core donor rows {}..{} hit the fringe band [{}, {}]",
                kf - 1,
                kf + 2,
                self.k_min,
                self.k_max
            )));
        }
        let wx = cr_weights(sx);
        let wy = cr_weights(sy);
        let mut out = Vec::with_capacity(16);
        for (a, &wa) in wx.iter().enumerate() {
            for (b, &wb) in wy.iter().enumerate() {
                let k = kf - 1 + a as i64;
                let j = jf - 1 + b as i64;
                let id = self.idx(ChartId::Core, k, j).unwrap();
                debug_assert!(!self.nodes[id].fringe);
                out.push((id, wa * wb));
            }
        }
        Ok(out)
    }

    /// Interpolation stencil at cap coordinates (c1, c2) from non-fringe cap nodes.
    fn cap_stencil(&self, chart: ChartId, c1: f64, c2: f64) -> Result<Vec<(usize, f64)>> {
        let x = c1 / self.h_cap;
        let y = c2 / self.h_cap;
        if (x - x.round()).abs() < SNAP_EPS && (y - y.round()).abs() < SNAP_EPS {
            let i = x.round() as i64;
            let j = y.round() as i64;
            let id = self
                .idx(chart, i, j)
                .ok_or_else(|| GlueError::WrongDomain(format!("donor ({i}, {j}) outside cap")))?;
            if self.nodes[id].fringe {
                return Err(GlueError::WrongDomain(format!(
                    "exact donor at cap node ({i}, {j}) is fringe"
                )));
            }
            return Ok(vec![(id, 1.0)]);
        }
        let ifl = x.floor() as i64;
        let jfl = y.floor() as i64;
        if ifl - 1 <= -self.m_cap
            || ifl + 2 >= self.m_cap
            || jfl - 1 <= -self.m_cap
            || jfl + 2 >= self.m_cap
        {
            return Err(GlueError::ResolutionTooCoarse(format!(
                "cap donor cell ({ifl}, {jfl}) hits the fringe band (m = {})",
                self.m_cap
            )));
        }
        let sx = x - ifl as f64;
        let sy = y - jfl as f64;
        let wx = cr_weights(sx);
        let wy = cr_weights(sy);
        let mut out = Vec::with_capacity(16);
        for (a, &wa) in wx.iter().enumerate() {
            for (b, &wb) in wy.iter().enumerate() {
                let id = self.idx(chart, ifl - 1 + a as i64, jfl - 1 + b as i64).unwrap();
                debug_assert!(!self.nodes[id].fringe);
                out.push((id, wa * wb));
            }
        }
        Ok(out)
    }

    /// Reconstruct fringe values of a nodal scalar from its donors.
    pub fn fill_fringe(&self, vals: &mut [f64]) {
        assert_eq!(vals.len(), self.n_nodes());
        for idx in 0..self.n_nodes() {
            if self.nodes[idx].fringe {
                vals[idx] = self.donors[idx].iter().map(|&(s, w)| w * vals[s]).sum();
            }
        }
    }
}

/// Catmull-Rom weights for the interval [p1, p2] at parameter s in [0, 1].
fn cr_weights(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        0.5 * (-s3 + 2.0 * s2 - s),
        0.5 * (3.0 * s3 - 5.0 * s2 + 2.0),
        0.5 * (-3.0 * s3 + 4.0 * s2 + s),
        0.5 * (s3 - s2),
    ]
}

/// Lattice-coincident node pairs (same domain point, same chart family)
/// between the glued grid and the first sphere grid (shared coordinate z):
/// cap-out onto cap-out, core row k onto core row k.
pub fn shared_nodes_sphere0(glued: &Grid, s0: &Grid) -> Vec<(usize, usize)> {
    assert_eq!(glued.n_theta, s0.n_theta);
    assert_eq!(glued.m_cap, s0.m_cap);
    assert_eq!(glued.s_out, s0.s_out);
    let mut out = Vec::new();
    for m in -glued.m_cap..=glued.m_cap {
        for j in -glued.m_cap..=glued.m_cap {
            out.push((
                glued.idx(ChartId::CapOut, m, j).unwrap(),
                s0.idx(ChartId::CapOut, m, j).unwrap(),
            ));
        }
    }
    let klo = glued.k_min.max(s0.k_min);
    let khi = glued.k_max.min(s0.k_max);
    for k in klo..=khi {
        for j in 0..glued.n_theta as i64 {
            out.push((
                glued.idx(ChartId::Core, k, j).unwrap(),
                s0.idx(ChartId::Core, k, j).unwrap(),
            ));
        }
    }
    out
}

/// Lattice-coincident pairs between the glued grid (coordinate z) and the
/// second sphere grid (coordinate v = R^2 z): glued cap-in onto sphere cap-in
/// (u = v), glued core row k onto sphere core row k + 2 m_a.
pub fn shared_nodes_sphere_inf(glued: &Grid, si: &Grid, m_a: i64) -> Vec<(usize, usize)> {
    assert_eq!(glued.n_theta, si.n_theta);
    assert_eq!(glued.m_cap, si.m_cap);
    assert_eq!(si.s_in, 1.0);
    let mut out = Vec::new();
    for m in -glued.m_cap..=glued.m_cap {
        for j in -glued.m_cap..=glued.m_cap {
            out.push((
                glued.idx(ChartId::CapIn, m, j).unwrap(),
                si.idx(ChartId::CapIn, m, j).unwrap(),
            ));
        }
    }
    for k in glued.k_min..=glued.k_max {
        let kv = k + 2 * m_a;
        if kv < si.k_min || kv > si.k_max {
            continue;
        }
        for j in 0..glued.n_theta as i64 {
            out.push((
                glued.idx(ChartId::Core, k, j).unwrap(),
                si.idx(ChartId::Core, kv, j).unwrap(),
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_neck(n_theta: usize) -> Neck {
        Neck::snap(0.05, 400.0, n_theta).unwrap()
    }

    #[test]
    fn snap_produces_lattice_exact_circles() {
        let nk = test_neck(48);
        let r = nk.big_r();
        let d = nk.delta();
        assert!((r.ln() / nk.dtau - nk.m_a as f64).abs() < 1e-12);
        assert!(((1.0 / d).ln() / nk.dtau - nk.m_b as f64).abs() < 1e-12);
        assert!((r - 400.0).abs() / 400.0 < 0.1);
        assert!((d - 0.05).abs() / 0.05 < 0.1);
    }

    #[test]
    fn construction_invariants() {
        let nk = test_neck(48);
        for g in [
            Grid::glued(&nk).unwrap(),
            Grid::sphere0(&nk).unwrap(),
            Grid::sphere_inf(&nk).unwrap(),
        ] {
            for idx in 0..g.n_nodes() {
                let n = &g.nodes[idx];
                assert!(n.pou >= 0.0 && n.pou <= 1.0);
                assert!(n.q > 0.0 && n.q.is_finite());
                if n.fringe {
                    assert!(!g.donors[idx].is_empty(), "fringe node without donor");
                    assert!(n.pou == 0.0);
                    let wsum: f64 = g.donors[idx].iter().map(|&(_, w)| w).sum();
                    assert!((wsum - 1.0).abs() < 1e-12, "donor weights sum {wsum}");
                    for &(s, _) in &g.donors[idx] {
                        assert!(!g.nodes[s].fringe, "fringe donor");
                        assert_ne!(g.nodes[s].chart, n.chart);
                    }
                } else {
                    // full 1-ring present
                    for axis in 0..2 {
                        for dir in [-1i64, 1] {
                            let _ = g.neighbor(idx, axis, dir);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn glued_area_matches_closed_form() {
        let nk = test_neck(48);
        let g = Grid::glued(&nk).unwrap();
        let r2 = nk.big_r().powi(2);
        let exact = 2.0 * std::f64::consts::PI * r2 / (1.0 + r2);
        let got = g.total_area();
        let err48 = (got - exact).abs() / exact;
        assert!(err48 < 5e-3, "area {got} vs {exact}, rel err {err48}");

        let nk2 = test_neck(96);
        let g2 = Grid::glued(&nk2).unwrap();
        let r2b = nk2.big_r().powi(2);
        let exact2 = 2.0 * std::f64::consts::PI * r2b / (1.0 + r2b);
        let err96 = (g2.total_area() - exact2).abs() / exact2;
        assert!(err96 < err48 / 2.5, "no convergence: {err48} -> {err96}");
    }

    #[test]
    fn sphere_area_is_pi() {
        let g = Grid::sphere_plain(48).unwrap();
        let got = g.total_area();
        let exact = std::f64::consts::PI;
        assert!(
            (got - exact).abs() / exact < 5e-3,
            "sphere area {got} vs {exact}"
        );
    }

    #[test]
    fn fringe_interpolation_is_accurate() {
        let smooth = |z: Option<(f64, f64)>| -> f64 {
            match z {
                Some((x, y)) => {
                    let r2 = x * x + y * y;
                    (x + 0.3 * y) / (1.0 + r2) + 1.0 / (1.0 + r2)
                }
                None => 0.0, // value at z = infinity
            }
        };
        let mut errs = Vec::new();
        for n_theta in [48usize, 96] {
            let g = Grid::sphere_plain(n_theta).unwrap();
            let mut vals: Vec<f64> = (0..g.n_nodes()).map(|i| smooth(g.local_z(i))).collect();
            let exact = vals.clone();
            // scrub fringe then reconstruct
            for i in 0..g.n_nodes() {
                if g.nodes[i].fringe {
                    vals[i] = f64::NAN;
                }
            }
            g.fill_fringe(&mut vals);
            let mut emax = 0.0f64;
            for i in 0..g.n_nodes() {
                if g.nodes[i].fringe {
                    emax = emax.max((vals[i] - exact[i]).abs());
                }
            }
            errs.push(emax);
        }
        assert!(errs[0] < 1e-3, "interp error {}", errs[0]);
        assert!(
            errs[1] < errs[0] / 5.0,
            "interp not converging: {:?}",
            errs
        );
    }

    #[test]
    fn shared_nodes_are_bitwise_equal() {
        let nk = test_neck(48);
        let glued = Grid::glued(&nk).unwrap();
        let s0 = Grid::sphere0(&nk).unwrap();
        let si = Grid::sphere_inf(&nk).unwrap();

        let p0 = shared_nodes_sphere0(&glued, &s0);
        assert!(!p0.is_empty());
        for &(a, b) in &p0 {
            let na = &glued.nodes[a];
            let nb = &s0.nodes[b];
            assert_eq!(na.c1.to_bits(), nb.c1.to_bits());
            assert_eq!(na.c2.to_bits(), nb.c2.to_bits());
            // metric weight agrees bitwise outside the neck (outer branch)
            if na.chart == ChartId::CapOut || na.i >= -nk.m_a {
                assert_eq!(na.q.to_bits(), nb.q.to_bits());
            }
        }

        let pi = shared_nodes_sphere_inf(&glued, &si, nk.m_a);
        assert!(!pi.is_empty());
        for &(a, b) in &pi {
            let na = &glued.nodes[a];
            let nb = &si.nodes[b];
            if na.chart == ChartId::CapIn {
                assert_eq!(na.c1.to_bits(), nb.c1.to_bits());
                assert_eq!(na.q.to_bits(), nb.q.to_bits());
            } else {
                // same angle; radius differs by the factor R^2
                assert_eq!(na.c2.to_bits(), nb.c2.to_bits());
                if na.i <= -nk.m_a {
                    assert_eq!(na.q.to_bits(), nb.q.to_bits());
                }
            }
        }

        // every glued node lies on at least one sphere grid
        let mut covered = vec![false; glued.n_nodes()];
        for &(a, _) in p0.iter().chain(pi.iter()) {
            covered[a] = true;
        }
        assert!(covered.iter().all(|&c| c), "uncovered glued nodes exist");
    }

    #[test]
    fn inadmissible_necks_are_rejected() {
        assert!(Neck::snap(0.5, 3.0, 48).is_err());
        assert!(Neck::snap(1.5, 100.0, 48).is_err());
        assert!(Neck::snap(0.9999, 100.0, 48).is_err());
    }
}
