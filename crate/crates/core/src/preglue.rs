//! Pregluing: from a matched pair of maps on two spheres to an approximate
//! solution on the glued surface, the small perturbations of the pair used by
//! the approximate inverse, and the cut/patch transfer operators between the
//! glued grid and the sphere grids.
//!
//! All transfers act on lattice-shared nodes only (no interpolation), so
//! every copy below is exact.

use crate::cutoff::{beta, kappa};
use crate::error::GlueError;
use crate::fields::{MapField, Section};
use crate::grid::{shared_nodes_sphere0, shared_nodes_sphere_inf, ChartId, Grid, Neck};
use crate::manifold::{ManifoldModel, TargetPoint};
use crate::vecn::VecN;
use crate::Result;

/// The three grids of one gluing problem plus shared-node index maps.
#[derive(Clone)]
pub struct Geometry {
    pub neck: Neck,
    pub glued: Grid,
    pub s0: Grid,
    pub si: Grid,
    /// glued node -> coincident sphere node (same lattice point).
    pub g_to_s0: Vec<Option<usize>>,
    pub g_to_si: Vec<Option<usize>>,
    pub s0_to_g: Vec<Option<usize>>,
    pub si_to_g: Vec<Option<usize>>,
}

impl Geometry {
    pub fn new(neck: Neck) -> Result<Geometry> {
        let glued = Grid::glued(&neck)?;
        let s0 = Grid::sphere0(&neck)?;
        let si = Grid::sphere_inf(&neck)?;
        let mut g_to_s0 = vec![None; glued.n_nodes()];
        let mut g_to_si = vec![None; glued.n_nodes()];
        let mut s0_to_g = vec![None; s0.n_nodes()];
        let mut si_to_g = vec![None; si.n_nodes()];
        for (g, s) in shared_nodes_sphere0(&glued, &s0) {
            g_to_s0[g] = Some(s);
            s0_to_g[s] = Some(g);
        }
        for (g, s) in shared_nodes_sphere_inf(&glued, &si, neck.m_a) {
            g_to_si[g] = Some(s);
            si_to_g[s] = Some(g);
        }
        Ok(Geometry {
            neck,
            glued,
            s0,
            si,
            g_to_s0,
            g_to_si,
            s0_to_g,
            si_to_g,
        })
    }

    /// Node index of the first gluing point (z = 0 on the first sphere).
    pub fn x1_node(&self) -> usize {
        self.s0.idx(ChartId::CapIn, 0, 0).unwrap()
    }

    /// Node index of the second gluing point (v = infinity on the second sphere).
    pub fn x2_node(&self) -> usize {
        self.si.idx(ChartId::CapOut, 0, 0).unwrap()
    }
}

/// A matched pair: f0 on the first sphere, finf on the second, with
/// f0(x1) = finf(x2) = y.
#[derive(Clone)]
pub struct MapPair {
    pub f0: MapField,
    pub finf: MapField,
    pub y: TargetPoint,
}

impl MapPair {
    pub fn new(geo: &Geometry, model: &ManifoldModel, f0: MapField, finf: MapField) -> Result<Self> {
        let y = f0.vals[geo.x1_node()];
        let y2 = finf.vals[geo.x2_node()];
        let d = model.dist(&y, &y2);
        if !(d < 1e-8) {
            return Err(GlueError::MatchingViolation(d));
        }
        Ok(MapPair { f0, finf, y })
    }
}

/// rho with plateau snapping: exactly 0 for arguments within 1e-9 of the
/// lower plateau and 1 near the upper one, so the preglued map is exactly
/// constant on the closed neck annulus.
fn rho_snapped(x: f64) -> f64 {
    if x <= 1.0 + 1e-9 {
        0.0
    } else if x >= 2.0 - 1e-9 {
        1.0
    } else {
        kappa(x - 1.0)
    }
}

/// The preglued map on the glued grid:
///   f0(z) outside |z| = 2/(dR); finf(R^2 z) inside |z| = d/(2R);
///   exp_y(rho(dR |z|) log_y f0(z) + rho(d/(R |z|)) log_y finf(R^2 z))
/// across the two transition annuli; exactly y on d/R <= |z| <= 1/(dR).
pub fn preglue_map(geo: &Geometry, model: &ManifoldModel, pair: &MapPair) -> Result<MapField> {
    let d = geo.neck.delta();
    let r = geo.neck.big_r();
    let mut vals = Vec::with_capacity(geo.glued.n_nodes());
    for idx in 0..geo.glued.n_nodes() {
        let absz = geo.glued.nodes[idx].absz;
        let a = rho_snapped(d * r * absz);
        let b = rho_snapped(d / (r * absz));
        let p = if a == 1.0 {
            // pure outer map
            let s = geo.g_to_s0[idx].ok_or_else(|| {
                GlueError::MissingNodes(format!("outer node {idx} not on sphere grid"))
            })?;
            pair.f0.vals[s]
        } else if b == 1.0 {
            let s = geo.g_to_si[idx].ok_or_else(|| {
                GlueError::MissingNodes(format!("inner node {idx} not on sphere grid"))
            })?;
            pair.finf.vals[s]
        } else if a == 0.0 && b == 0.0 {
            pair.y
        } else {
            let mut v = VecN::zeros(model.dim);
            if a > 0.0 {
                let s = geo.g_to_s0[idx].ok_or_else(|| {
                    GlueError::MissingNodes(format!("transition node {idx} not on sphere grid"))
                })?;
                let zeta = model
                    .log_map(&pair.y, &pair.f0.vals[s])
                    .map_err(|e| e.at_stage("preglue outer transition"))?;
                v = v.axpy(a, &zeta);
            }
            if b > 0.0 {
                let s = geo.g_to_si[idx].ok_or_else(|| {
                    GlueError::MissingNodes(format!("transition node {idx} not on sphere grid"))
                })?;
                let zeta = model
                    .log_map(&pair.y, &pair.finf.vals[s])
                    .map_err(|e| e.at_stage("preglue inner transition"))?;
                v = v.axpy(b, &zeta);
            }
            model
                .exp_map(&pair.y, &v)
                .map_err(|e| e.at_stage("preglue exponential"))?
        };
        vals.push(p);
    }
    Ok(MapField { vals })
}

/// The perturbed sphere maps: f_{0,r} equals the preglued map where both are
/// defined and is constant y inside |z| = 1/(dR); f_{inf,r} likewise outside
/// |v| = dR. Copies are node-exact.
pub fn perturbed_maps(
    geo: &Geometry,
    pair: &MapPair,
    fr: &MapField,
) -> Result<(MapField, MapField)> {
    let dr = geo.neck.delta_r();
    let mut f0r = Vec::with_capacity(geo.s0.n_nodes());
    for idx in 0..geo.s0.n_nodes() {
        let absz = geo.s0.nodes[idx].absz;
        if absz < 1.0 / dr {
            f0r.push(pair.y);
        } else {
            let g = geo.s0_to_g[idx].ok_or_else(|| {
                GlueError::MissingNodes(format!("sphere-0 node {idx} at |z| = {absz} unshared"))
            })?;
            f0r.push(fr.vals[g]);
        }
    }
    let mut fir = Vec::with_capacity(geo.si.n_nodes());
    for idx in 0..geo.si.n_nodes() {
        let absv = geo.si.nodes[idx].absz;
        if absv > dr {
            fir.push(pair.y);
        } else {
            let g = geo.si_to_g[idx].ok_or_else(|| {
                GlueError::MissingNodes(format!("sphere-inf node {idx} at |v| = {absv} unshared"))
            })?;
            fir.push(fr.vals[g]);
        }
    }
    Ok((MapField { vals: f0r }, MapField { vals: fir }))
}

/// Cut a right-hand side on the glued grid into the two sphere pieces with
/// complementary indicators: eta0 = eta on |z| >= 1/R (the circle row
/// included), etainf(v) = eta(v / R^2) strictly inside |v| < R.  Every
/// glued node is assigned to exactly one sphere, so eta0 + etainf
/// recombines to eta node-exactly.  Values are copied at shared nodes.
pub fn split_eta(geo: &Geometry, dim: usize, eta: &Section) -> (Section, Section) {
    let ir = 1.0 / geo.neck.big_r();
    let mut eta0 = Section::zeros(geo.s0.n_nodes(), dim);
    for idx in 0..geo.s0.n_nodes() {
        if geo.s0.nodes[idx].absz >= ir * (1.0 - 1e-12) {
            if let Some(g) = geo.s0_to_g[idx] {
                eta0.vals[idx] = eta.vals[g];
            }
        }
    }
    let r = geo.neck.big_r();
    let mut etai = Section::zeros(geo.si.n_nodes(), dim);
    for idx in 0..geo.si.n_nodes() {
        if geo.si.nodes[idx].absz < r * (1.0 - 1e-12) {
            if let Some(g) = geo.si_to_g[idx] {
                etai.vals[idx] = eta.vals[g];
            }
        }
    }
    (eta0, etai)
}

/// Patch two sphere sections into one glued section:
///   xi0(z)                                      for |z| >= 1/(dR),
///   xi0(z) + B(1/(R^2 z)) (xiinf(R^2 z) - c)    for 1/R <= |z| <= 1/(dR),
///   xiinf(R^2 z) + B(z) (xi0(z) - c)            for d/R <= |z| <= 1/R,
///   xiinf(R^2 z)                                for |z| <= d/R,
/// where B is the log-radial neck cutoff and c is the common value at the
/// gluing points.
pub fn patch_xi(
    geo: &Geometry,
    model: &ManifoldModel,
    xi0: &Section,
    xiinf: &Section,
) -> Result<Section> {
    let d = geo.neck.delta();
    let r = geo.neck.big_r();
    let c1 = xi0.vals[geo.x1_node()];
    let c2 = xiinf.vals[geo.x2_node()];
    if c1.sub(&c2).norm() > 1e-7 * (1.0 + c1.norm()) {
        return Err(GlueError::MatchingViolation(c1.sub(&c2).norm()));
    }
    let c = c1;
    let _ = model;
    let dim = xi0.dim;
    let mut out = Section::zeros(geo.glued.n_nodes(), dim);
    let lo = d / r;
    let mid = 1.0 / r;
    let hi = 1.0 / (d * r);
    for idx in 0..geo.glued.n_nodes() {
        let absz = geo.glued.nodes[idx].absz;
        let v0 = geo.g_to_s0[idx].map(|s| xi0.vals[s]);
        let vi = geo.g_to_si[idx].map(|s| xiinf.vals[s]);
        out.vals[idx] = if absz >= hi {
            v0.ok_or_else(|| GlueError::MissingNodes(format!("outer patch node {idx}")))?
        } else if absz <= lo {
            vi.ok_or_else(|| GlueError::MissingNodes(format!("inner patch node {idx}")))?
        } else if absz >= mid {
            let b = beta(1.0 / (r * r * absz), d, r);
            let v0 = v0.ok_or_else(|| GlueError::MissingNodes(format!("patch node {idx}")))?;
            let vi = vi.ok_or_else(|| GlueError::MissingNodes(format!("patch node {idx}")))?;
            v0.axpy(b, &vi.sub(&c))
        } else {
            let b = beta(absz, d, r);
            let v0 = v0.ok_or_else(|| GlueError::MissingNodes(format!("patch node {idx}")))?;
            let vi = vi.ok_or_else(|| GlueError::MissingNodes(format!("patch node {idx}")))?;
            vi.axpy(b, &v0.sub(&c))
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_pair(geo: &Geometry, model: &ManifoldModel) -> MapPair {
        // f0(z) = z, finf(v) = 1/v (a rotation of the round sphere); both are
        // harmonic and match with value y = 0 at the gluing points.
        let f0 = MapField::from_fn(&geo.s0, |i| {
            let p = match geo.s0.local_z(i) {
                Some((x, y)) => TargetPoint::new(0, VecN::v2(x, y)),
                None => TargetPoint::new(1, VecN::zeros(2)),
            };
            model.normalize(&p)
        });
        let finf = MapField::from_fn(&geo.si, |i| {
            // 1/v in chart 0 is the chart-1 coordinate of v under the
            // conjugate-inversion transition composed with conjugation; build
            // it directly: w = 1/v = (vx, -vy)/|v|^2 conjugated once more
            let p = match geo.si.local_z(i) {
                Some((x, y)) => {
                    let n2 = x * x + y * y;
                    if n2 == 0.0 {
                        TargetPoint::new(1, VecN::zeros(2))
                    } else {
                        TargetPoint::new(0, VecN::v2(x / n2, -y / n2))
                    }
                }
                None => TargetPoint::new(0, VecN::zeros(2)),
            };
            model.normalize(&p)
        });
        MapPair::new(geo, model, f0, finf).unwrap()
    }

    #[test]
    fn preglued_identity_pair_structure() {
        let neck = Neck::snap(0.05, 400.0, 48).unwrap();
        let geo = Geometry::new(neck).unwrap();
        let model = ManifoldModel::sphere(2, 1.0);
        let pair = identity_pair(&geo, &model);
        let fr = preglue_map(&geo, &model, &pair).unwrap();
        let d = neck.delta();
        let r = neck.big_r();
        let mut n_neck = 0;
        for idx in 0..geo.glued.n_nodes() {
            let absz = geo.glued.nodes[idx].absz;
            let p = &fr.vals[idx];
            if absz >= d / r && absz <= 1.0 / (d * r) {
                // exactly the constant y on the closed neck annulus
                assert_eq!(p.chart, pair.y.chart, "chart at |z| = {absz}");
                assert_eq!(p.y.a, pair.y.y.a, "value at |z| = {absz}");
                n_neck += 1;
            } else if absz >= 2.0 / (d * r) {
                let s = geo.g_to_s0[idx].unwrap();
                assert_eq!(p, &pair.f0.vals[s]);
            } else if absz <= 0.5 * d / r {
                let s = geo.g_to_si[idx].unwrap();
                assert_eq!(p, &pair.finf.vals[s]);
            }
        }
        assert!(n_neck > 100, "neck annulus unexpectedly small: {n_neck}");

        // perturbed maps agree with the preglued map at every shared node
        let (f0r, fir) = perturbed_maps(&geo, &pair, &fr).unwrap();
        for idx in 0..geo.glued.n_nodes() {
            if let Some(s) = geo.g_to_s0[idx] {
                if geo.s0.nodes[s].absz >= 1.0 / neck.delta_r() {
                    assert_eq!(f0r.vals[s], fr.vals[idx]);
                }
            }
            if let Some(s) = geo.g_to_si[idx] {
                if geo.si.nodes[s].absz <= neck.delta_r() {
                    assert_eq!(fir.vals[s], fr.vals[idx]);
                }
            }
        }
        // and are constant beyond the perturbation radius
        for idx in 0..geo.s0.n_nodes() {
            if geo.s0.nodes[idx].absz < 1.0 / neck.delta_r() {
                assert_eq!(f0r.vals[idx], pair.y);
            }
        }
    }

    #[test]
    fn patch_preserves_matched_constants_and_split_partitions() {
        let neck = Neck::snap(0.05, 400.0, 48).unwrap();
        let geo = Geometry::new(neck).unwrap();
        let model = ManifoldModel::flat_torus([1.0, 1.0]);
        let c = VecN::v2(0.7, -0.2);
        let xi0 = Section::from_fn(geo.s0.n_nodes(), 2, |_| c);
        let xii = Section::from_fn(geo.si.n_nodes(), 2, |_| c);
        let patched = patch_xi(&geo, &model, &xi0, &xii).unwrap();
        for v in &patched.vals {
            assert!(v.sub(&c).norm() < 1e-15);
        }

        // split indicators are complementary: eta0 + etainf recombines to
        // eta node-exactly (the circle |z| = 1/R belongs to the first sphere)
        let eta = Section::from_fn(geo.glued.n_nodes(), 2, |i| {
            VecN::v2(1.0 + i as f64 * 1e-6, -2.0)
        });
        let (e0, ei) = split_eta(&geo, 2, &eta);
        for idx in 0..geo.glued.n_nodes() {
            let absz = geo.glued.nodes[idx].absz;
            let a = geo.g_to_s0[idx].map(|s| e0.vals[s]);
            let b = geo.g_to_si[idx].map(|s| ei.vals[s]);
            let mut total = VecN::zeros(2);
            if let Some(v) = a {
                total = total.add(&v);
            }
            if let Some(v) = b {
                total = total.add(&v);
            }
            assert!(
                total.sub(&eta.vals[idx]).norm() < 1e-14 * (1.0 + eta.vals[idx].norm()),
                "partition failure at |z| = {absz}"
            );
        }
    }
}
