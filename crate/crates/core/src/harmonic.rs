//! The harmonic-map machinery: energy, tension field, the transported
//! nonlinear operator F, its intrinsic linearization D as a sparse matrix
//! over fringe-eliminated unknowns, and the derivative dF away from the base.
//!
//! Conventions. The domain weight enters through the per-node scalar
//! q = theta / mu (chart conformal factor); `q_scale` rescales it so that
//! `q_scale * q` is the actual weight (1 on the glued surface, 1/2 on a
//! round sphere where the metric factor is 2/(1+|z|^2)). The tension is
//!   P(f) = -(q_scale q)^2 (Delta_chart f + Gamma(f)(df, df)),
//! with positive spectrum for its linearization
//!   D = -(q_scale q)^2 sum_a (d_a + A_a)^2 + (q_scale q)^2 sum_a R(., f_a) f_a
//! where A_a = Gamma(f)(d_a f, .).

use crate::fields::{
    fill_fringe_section, map_in_center_chart, map_laplacian, map_partials, MapField, Reduction,
    Section,
};
use crate::grid::Grid;
use crate::linalg::{Sparse, TripletBuilder};
use crate::manifold::{ManifoldModel, TargetPoint};
use crate::vecn::{MatN, VecN};
use crate::Result;

/// Dirichlet energy (conformally invariant: flat chart measure, no weight).
pub fn energy(grid: &Grid, model: &ManifoldModel, map: &MapField) -> f64 {
    let mut e = 0.0;
    for idx in 0..grid.n_nodes() {
        let n = &grid.nodes[idx];
        if n.fringe || n.pou <= 0.0 {
            continue;
        }
        let d = partials_any(grid, model, map, idx);
        let p = &map.vals[idx];
        let dens = model.inner(p, &d[0], &d[0]) + model.inner(p, &d[1], &d[1]);
        e += 0.5 * n.pou * n.cell * dens;
    }
    e
}

/// First partials of the map at any node, one-sided (second order) where a
/// centred neighbour does not exist. Components in the node's target chart.
pub fn partials_any(grid: &Grid, model: &ManifoldModel, map: &MapField, idx: usize) -> [VecN; 2] {
    let node = &grid.nodes[idx];
    let (h1, h2) = grid.spacings(node.chart);
    let mut out = [VecN::zeros(model.dim), VecN::zeros(model.dim)];
    for axis in 0..2 {
        let h = if axis == 0 { h1 } else { h2 };
        let at = |d: i64| -> Option<usize> {
            let (i, j) = if axis == 0 {
                (node.i + d, node.j)
            } else {
                (node.i, node.j + d)
            };
            grid.idx(node.chart, i, j)
        };
        out[axis] = match (at(1), at(-1)) {
            (Some(p), Some(m)) => {
                let cp = map_in_center_chart(model, map, idx, p);
                let cm = map_in_center_chart(model, map, idx, m);
                cp.sub(&cm).scale(0.5 / h)
            }
            (Some(p), None) => {
                let pp = at(2).expect("one-sided stencil needs two nodes");
                let c0 = map.vals[idx].y;
                let c1 = map_in_center_chart(model, map, idx, p);
                let c2 = map_in_center_chart(model, map, idx, pp);
                c1.scale(4.0).axpy(-3.0, &c0).axpy(-1.0, &c2).scale(0.5 / h)
            }
            (None, Some(m)) => {
                let mm = at(-2).expect("one-sided stencil needs two nodes");
                let c0 = map.vals[idx].y;
                let c1 = map_in_center_chart(model, map, idx, m);
                let c2 = map_in_center_chart(model, map, idx, mm);
                c1.scale(-4.0).axpy(3.0, &c0).axpy(1.0, &c2).scale(0.5 / h)
            }
            (None, None) => unreachable!("grid narrower than one cell"),
        };
    }
    out
}

/// Tension field P(f) as a section along f (fringe filled from donors).
pub fn tension(grid: &Grid, model: &ManifoldModel, map: &MapField, q_scale: f64) -> Section {
    let mut sec = Section::zeros(grid.n_nodes(), model.dim);
    for idx in 0..grid.n_nodes() {
        if grid.nodes[idx].fringe {
            continue;
        }
        let lap = map_laplacian(grid, model, map, idx);
        let d = partials_any(grid, model, map, idx);
        let gam = model.christoffel(&map.vals[idx]);
        let nl = gam.contract(&d[0], &d[0]).add(&gam.contract(&d[1], &d[1]));
        let q = q_scale * grid.nodes[idx].q;
        sec.vals[idx] = lap.add(&nl).scale(-q * q);
    }
    fill_fringe_section(grid, model, map, &mut sec);
    sec
}

/// The transported nonlinear operator: F(xi) = Phi(xi)^{-1} P(exp_f xi),
/// a section along the base map.
pub fn operator_f(
    grid: &Grid,
    model: &ManifoldModel,
    base: &MapField,
    xi: &Section,
    q_scale: f64,
) -> Result<Section> {
    let moved = exp_of(grid, model, base, xi)?;
    let p = tension(grid, model, &moved, q_scale);
    let mut out = Section::zeros(grid.n_nodes(), model.dim);
    for idx in 0..grid.n_nodes() {
        if grid.nodes[idx].fringe {
            continue;
        }
        out.vals[idx] = model
            .transport_between(&moved.vals[idx], &base.vals[idx], &p.vals[idx])
            .map_err(|e| e.at_stage("transporting tension back"))?;
    }
    fill_fringe_section(grid, model, base, &mut out);
    Ok(out)
}

/// Nodewise exponential of a section: x -> exp_{base(x)} xi(x).
pub fn exp_of(
    grid: &Grid,
    model: &ManifoldModel,
    base: &MapField,
    xi: &Section,
) -> Result<MapField> {
    let mut vals = Vec::with_capacity(grid.n_nodes());
    for idx in 0..grid.n_nodes() {
        let p = model
            .exp_map(&base.vals[idx], &xi.vals[idx])
            .map_err(|e| e.at_stage("moving the base map"))?;
        // sticky chart choice: keep the base chart while the moved point is
        // still inside its box, so the discrete operator stays continuous in
        // xi across chart-boundary rings
        let bc = base.vals[idx].chart;
        let q = model.to_chart(&p, bc);
        if model.in_chart_box(bc, &q.y) {
            vals.push(q);
        } else {
            vals.push(model.normalize(&p));
        }
    }
    Ok(MapField { vals })
}

/// Connection coefficient A_a = Gamma(f)(d_a f, .) at a node, as a matrix in
/// the node's target chart.
fn conn_matrices(model: &ManifoldModel, p: &TargetPoint, d: &[VecN; 2]) -> [MatN; 2] {
    let n = model.dim;
    let gam = model.christoffel(p);
    let mut out = [MatN::zeros(n), MatN::zeros(n)];
    for a in 0..2 {
        for l in 0..n {
            let mut e = VecN::zeros(n);
            e.a[l] = 1.0;
            let col = gam.contract(&d[a], &e);
            for k in 0..n {
                out[a].m[k][l] = col.a[k];
            }
        }
    }
    out
}

/// The linearization D at `map`, assembled over fringe-eliminated unknowns
/// as the exact Jacobian of the discrete transported tension (equal to the
/// covariant operator -q^2 sum (d+A)^2 + q^2 R in the continuum). Sampling
/// Christoffel matrices at neighbour nodes would not survive chart
/// transitions (the connection is not a tensor), so all coefficients are
/// taken at the centre and the Gamma-derivative enters through the centre
/// column. Fringe neighbour values are substituted by their donor
/// combinations, so rows and columns both range over non-fringe nodes.
pub fn assemble_d(
    grid: &Grid,
    model: &ManifoldModel,
    map: &MapField,
    red: &Reduction,
    q_scale: f64,
) -> Result<Sparse> {
    assemble_d_triplets(grid, model, map, red, q_scale).build()
}

/// Same as [`assemble_d`] but returning the raw triplet accumulator, so that
/// callers can relabel rows/columns when embedding D into a larger system.
pub fn assemble_d_triplets(
    grid: &Grid,
    model: &ManifoldModel,
    map: &MapField,
    red: &Reduction,
    q_scale: f64,
) -> TripletBuilder {
    let n = model.dim;
    let nr = red.n_reduced();
    let mut tb = TripletBuilder::new(nr, nr);
    let base_tension = tension(grid, model, map, q_scale);

    // scatter an n x n block into (row-node, col-node), eliminating fringe
    // columns through the donor stencil
    let scatter = |rb: usize, col_node: usize, block: &MatN, tb: &mut TripletBuilder| {
        if let Some(cb) = red.full_to_red[col_node] {
            for k in 0..n {
                for l in 0..n {
                    tb.push(rb * n + k, cb * n + l, block.m[k][l]);
                }
            }
        } else {
            // xi_fringe = sum_d w_d J_{d -> fringe} xi_d
            let pf = &map.vals[col_node];
            for &(src, w) in &grid.donors[col_node] {
                let cb = red.full_to_red[src].expect("donor must be non-fringe");
                let ps = &map.vals[src];
                let eff = if ps.chart == pf.chart {
                    let mut b = *block;
                    for k in 0..n {
                        for l in 0..n {
                            b.m[k][l] *= w;
                        }
                    }
                    b
                } else {
                    let j = model.jacobian_to_chart(ps, pf.chart);
                    let mut b = block.matmul(&j);
                    for k in 0..n {
                        for l in 0..n {
                            b.m[k][l] *= w;
                        }
                    }
                    b
                };
                for k in 0..n {
                    for l in 0..n {
                        tb.push(rb * n + k, cb * n + l, eff.m[k][l]);
                    }
                }
            }
        }
    };

    for (rb, &c) in red.red_to_full.iter().enumerate() {
        let node = &grid.nodes[c];
        let (h1, h2) = grid.spacings(node.chart);
        let q = q_scale * node.q;
        let q2 = q * q;
        let pc = &map.vals[c];
        let dmap = map_partials(grid, model, map, c);
        let conn = conn_matrices(model, pc, &dmap);
        let gam = model.christoffel(pc);
        let mut center = MatN::zeros(n);

        for axis in 0..2 {
            let h = if axis == 0 { h1 } else { h2 };
            for k in 0..n {
                center.m[k][k] += 2.0 * q2 / (h * h);
            }
            for dir in [-1i64, 1] {
                let nb = grid.neighbor(c, axis, dir);
                let pn = &map.vals[nb];
                let j = if pn.chart == pc.chart {
                    MatN::identity(n)
                } else {
                    model.jacobian_to_chart(pn, pc.chart)
                };
                // -q^2 [ J/h^2 + dir A_c J / h ]
                let aj = conn[axis].matmul(&j);
                let s = dir as f64;
                let mut block = MatN::zeros(n);
                for k in 0..n {
                    for l in 0..n {
                        block.m[k][l] = -q2 * (j.m[k][l] / (h * h) + s * aj.m[k][l] / h);
                    }
                }
                scatter(rb, nb, &block, &mut tb);
            }
        }

        // centre column: -q^2 (d_l Gamma)(df, df) from the Christoffel's
        // dependence on f(c), plus the transport derivative Gamma(., P(f))
        let dgam = christoffel_grad(model, pc);
        for l in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for a in 0..2 {
                    for i in 0..n {
                        for jj in 0..n {
                            s += dgam[l].g[k][i][jj] * dmap[a].a[i] * dmap[a].a[jj];
                        }
                    }
                }
                center.m[k][l] -= q2 * s;
            }
            let mut e = VecN::zeros(n);
            e.a[l] = 1.0;
            let col = gam.contract(&e, &base_tension.vals[c]);
            for k in 0..n {
                center.m[k][l] += col.a[k];
            }
        }
        scatter(rb, c, &center, &mut tb);
    }
    tb
}

/// d Gamma / d y_l at p by centred finite differences.
fn christoffel_grad(model: &ManifoldModel, p: &TargetPoint) -> Vec<crate::manifold::Gamma> {
    let h = 1e-4;
    let mut out = Vec::with_capacity(model.dim);
    for l in 0..model.dim {
        let mut pp = *p;
        pp.y.a[l] += h;
        let gp = model.christoffel(&pp);
        let mut pm = *p;
        pm.y.a[l] -= h;
        let gm = model.christoffel(&pm);
        let mut g = crate::manifold::Gamma::zeros(model.dim);
        for k in 0..model.dim {
            for i in 0..model.dim {
                for j in 0..model.dim {
                    g.g[k][i][j] = (gp.g[k][i][j] - gm.g[k][i][j]) / (2.0 * h);
                }
            }
        }
        out.push(g);
    }
    out
}

/// The derivative dF at xi, realized through the chain rule
///   dF(xi) xi' = Phi^{-1} [ D_{exp_f xi} (E_f(xi) xi') - Psi_f(xi; xi', F(xi)) ].
/// At xi = 0 this coincides with `assemble_d` up to finite-difference noise
/// in the derivative maps.
pub struct DfOperator<'a> {
    grid: &'a Grid,
    model: &'a ManifoldModel,
    base: &'a MapField,
    xi: Section,
    pub moved: MapField,
    pub d_moved: Sparse,
    f_xi: Section,
    red: &'a Reduction,
    q_scale: f64,
}

impl<'a> DfOperator<'a> {
    pub fn at(
        grid: &'a Grid,
        model: &'a ManifoldModel,
        base: &'a MapField,
        xi: &Section,
        red: &'a Reduction,
        q_scale: f64,
    ) -> Result<Self> {
        let moved = exp_of(grid, model, base, xi)?;
        let d_moved = assemble_d(grid, model, &moved, red, q_scale)?;
        let f_xi = operator_f(grid, model, base, xi, q_scale)?;
        Ok(DfOperator {
            grid,
            model,
            base,
            xi: xi.clone(),
            moved,
            d_moved,
            f_xi,
            red,
            q_scale,
        })
    }

    pub fn apply(&self, xip: &Section) -> Result<Section> {
        let n = self.model.dim;
        let flat = self.model.is_flat();
        // w = E(xi) xi', a section along the moved map
        let mut w = Section::zeros(self.grid.n_nodes(), n);
        for idx in 0..self.grid.n_nodes() {
            if self.grid.nodes[idx].fringe {
                continue;
            }
            w.vals[idx] = self
                .model
                .e_map(&self.base.vals[idx], &self.xi.vals[idx], &xip.vals[idx])?;
        }
        let wf = self.red.flatten(&w);
        let uf = crate::linalg::spmv(&self.d_moved, &wf);
        let u = self.red.unflatten(self.grid, self.model, &self.moved, &uf);
        let mut out = Section::zeros(self.grid.n_nodes(), n);
        for idx in 0..self.grid.n_nodes() {
            if self.grid.nodes[idx].fringe {
                continue;
            }
            let mut v = u.vals[idx];
            if !flat {
                let psi = self.model.psi_map(
                    &self.base.vals[idx],
                    &self.xi.vals[idx],
                    &xip.vals[idx],
                    &self.f_xi.vals[idx],
                )?;
                v = v.sub(&psi);
                v = self.model.transport_between(
                    &self.moved.vals[idx],
                    &self.base.vals[idx],
                    &v,
                )?;
            }
            out.vals[idx] = v;
        }
        fill_fringe_section(self.grid, self.model, self.base, &mut out);
        Ok(out)
    }

    pub fn q_scale(&self) -> f64 {
        self.q_scale
    }
}

/// Membership checks for a candidate map: sup of the first and second
/// weighted differentials and the sup of the tension residual.
pub struct ModuliReport {
    pub sup_df: f64,
    pub sup_d2f: f64,
    pub sup_tension: f64,
}

pub fn moduli_check(
    grid: &Grid,
    model: &ManifoldModel,
    map: &MapField,
    q_scale: f64,
) -> ModuliReport {
    let p = tension(grid, model, map, q_scale);
    let mut sup_df: f64 = 0.0;
    let mut sup_d2f: f64 = 0.0;
    let mut sup_t: f64 = 0.0;
    for idx in 0..grid.n_nodes() {
        let n = &grid.nodes[idx];
        if n.fringe || n.pou <= 0.0 {
            continue;
        }
        let q = q_scale * n.q;
        let d = partials_any(grid, model, map, idx);
        let pt = &map.vals[idx];
        let g1 = (model.inner(pt, &d[0], &d[0]) + model.inner(pt, &d[1], &d[1])).sqrt();
        sup_df = sup_df.max(q * g1);
        let lap = map_laplacian(grid, model, map, idx);
        sup_d2f = sup_d2f.max(q * q * model.vec_norm(pt, &lap));
        sup_t = sup_t.max(model.vec_norm(pt, &p.vals[idx]));
    }
    ModuliReport {
        sup_df,
        sup_d2f,
        sup_tension: sup_t,
    }
}
