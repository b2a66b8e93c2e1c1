//! Built-in map-pair generators: the oracle cases (constant pair, the
//! identity pair of round spheres, smooth bump pairs into a flat torus) and
//! pairs loaded from node tables on disk.

use crate::error::GlueError;
use crate::fields::MapField;
use crate::manifold::{ManifoldModel, TargetPoint};
use crate::preglue::{Geometry, MapPair};
use crate::vecn::VecN;
use crate::Result;

/// Which matched pair of maps to glue.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PairSpec {
    /// Both maps constant at the given chart point.
    Constant { chart: usize, y: Vec<f64> },
    /// f0(z) = z and finf(v) = 1/v on a round sphere target: both harmonic,
    /// matched with value 0 at the gluing points.
    IdentitySphere,
    /// Smooth non-harmonic bump maps into the target's chart 0, decaying to
    /// the matched value at the gluing points.
    Bump { chart: usize, y: Vec<f64>, amp: f64 },
    /// Node tables on disk, one CSV per sphere (see `pair_from_tables`).
    NodeTable { path0: String, pathi: String },
}

pub fn build_pair(spec: &PairSpec, geo: &Geometry, model: &ManifoldModel) -> Result<MapPair> {
    match spec {
        PairSpec::Constant { chart, y } => {
            let p = point_from(model, *chart, y)?;
            constant_pair(geo, model, p)
        }
        PairSpec::IdentitySphere => identity_sphere_pair(geo, model),
        PairSpec::Bump { chart, y, amp } => {
            let p = point_from(model, *chart, y)?;
            bump_pair(geo, model, p, *amp)
        }
        PairSpec::NodeTable { path0, pathi } => pair_from_tables(geo, model, path0, pathi),
    }
}

fn point_from(model: &ManifoldModel, chart: usize, y: &[f64]) -> Result<TargetPoint> {
    if y.len() != model.dim || chart >= model.n_charts() {
        return Err(GlueError::ConfigParse(format!(
            "target point needs {} coordinates and a chart index below {}",
            model.dim,
            model.n_charts()
        )));
    }
    Ok(model.normalize(&TargetPoint::new(chart, VecN::from_slice(y))))
}

/// Both maps constant at y; trivially harmonic and matched.
pub fn constant_pair(geo: &Geometry, model: &ManifoldModel, y: TargetPoint) -> Result<MapPair> {
    let f0 = MapField::constant(&geo.s0, y);
    let fi = MapField::constant(&geo.si, y);
    MapPair::new(geo, model, f0, fi)
}

/// The identity pair of round spheres: f0(z) = z on the first sphere,
/// finf(v) = 1/v on the second (a rotation of the identity), both harmonic
/// and matched with value 0.
pub fn identity_sphere_pair(geo: &Geometry, model: &ManifoldModel) -> Result<MapPair> {
    if model.dim != 2 {
        return Err(GlueError::ConfigParse(
            "the identity-sphere pair needs a two-dimensional chart target".into(),
        ));
    }
    let f0 = MapField::from_fn(&geo.s0, |i| {
        let p = match geo.s0.local_z(i) {
            Some((x, y)) => TargetPoint::new(0, VecN::v2(x, y)),
            None => TargetPoint::new(1, VecN::zeros(2)),
        };
        model.normalize(&p)
    });
    let finf = MapField::from_fn(&geo.si, |i| {
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
    MapPair::new(geo, model, f0, finf)
}

/// Smooth decaying bumps around the matched value y: generically not
/// harmonic, used to exercise a nontrivial pregluing residual.
pub fn bump_pair(
    geo: &Geometry,
    model: &ManifoldModel,
    y: TargetPoint,
    amp: f64,
) -> Result<MapPair> {
    let n = model.dim;
    let bump = |x: f64, yy: f64| -> VecN {
        let r2 = x * x + yy * yy;
        let s = 1.0 / (1.0 + r2);
        let mut v = VecN::zeros(n);
        v.a[0] = amp * x * s;
        if n > 1 {
            v.a[1] = amp * yy * s * s;
        }
        v
    };
    let f0 = MapField::from_fn(&geo.s0, |i| match geo.s0.local_z(i) {
        // vanishes at z = 0 (the gluing point), decays at infinity
        Some((x, yy)) => {
            let mut p = y;
            p.y = p.y.add(&bump(x, yy));
            model.normalize(&p)
        }
        None => y,
    });
    let finf = MapField::from_fn(&geo.si, |i| match geo.si.local_z(i) {
        // vanishes at v = infinity (the gluing point)
        Some((x, yy)) => {
            let n2 = x * x + yy * yy;
            if n2 == 0.0 {
                let mut p = y;
                p.y = p.y.add(&bump(0.0, 0.0));
                model.normalize(&p)
            } else {
                let mut p = y;
                p.y = p.y.add(&bump(x / n2, -yy / n2));
                model.normalize(&p)
            }
        }
        None => y,
    });
    MapPair::new(geo, model, f0, finf)
}

/// Load a matched pair from two CSV node tables. Each file has a header and
/// one row per grid node, in grid index order:
///   `node,chart,y1,...,yn`
/// with `chart` the target chart index and `y*` the chart coordinates.
pub fn pair_from_tables(
    geo: &Geometry,
    model: &ManifoldModel,
    path0: &str,
    pathi: &str,
) -> Result<MapPair> {
    let f0 = map_from_table(geo.s0.n_nodes(), model, path0)?;
    let fi = map_from_table(geo.si.n_nodes(), model, pathi)?;
    MapPair::new(geo, model, f0, fi)
}

fn map_from_table(n_nodes: usize, model: &ManifoldModel, path: &str) -> Result<MapField> {
    let text = std::fs::read_to_string(path)?;
    let mut vals = Vec::with_capacity(n_nodes);
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 + model.dim {
            return Err(GlueError::ConfigParse(format!(
                "{path}:{}: expected {} fields, found {}",
                lineno + 1,
                2 + model.dim,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| GlueError::ConfigParse(format!("{path}:{}: bad number {s:?}", lineno + 1)))
        };
        let chart: usize = fields[1]
            .parse()
            .map_err(|_| GlueError::ConfigParse(format!("{path}:{}: bad chart {:?}", lineno + 1, fields[1])))?;
        let mut y = VecN::zeros(model.dim);
        for l in 0..model.dim {
            y.a[l] = parse(fields[2 + l])?;
        }
        vals.push(model.normalize(&TargetPoint::new(chart, y)));
    }
    if vals.len() != n_nodes {
        return Err(GlueError::MissingNodes(format!(
            "{path}: {} rows for a grid with {} nodes",
            vals.len(),
            n_nodes
        )));
    }
    Ok(MapField { vals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Neck;

    #[test]
    fn generators_produce_matched_pairs() {
        let neck = Neck::snap(0.1, 100.0, 24).unwrap();
        let geo = Geometry::new(neck).unwrap();

        let sphere = ManifoldModel::sphere(2, 1.0);
        identity_sphere_pair(&geo, &sphere).unwrap();

        let torus = ManifoldModel::flat_torus([1.0, 1.0]);
        let y = TargetPoint::new(0, VecN::v2(0.25, 0.5));
        constant_pair(&geo, &torus, y).unwrap();
        let pair = bump_pair(&geo, &torus, y, 0.05).unwrap();
        // matched and genuinely non-constant
        assert!(torus.dist(&pair.y, &y) < 1e-12);
        let mut varies = false;
        for v in &pair.f0.vals {
            if torus.dist(v, &y) > 1e-3 {
                varies = true;
            }
        }
        assert!(varies);
    }

    #[test]
    fn node_table_round_trip() {
        let neck = Neck::snap(0.1, 100.0, 24).unwrap();
        let geo = Geometry::new(neck).unwrap();
        let torus = ManifoldModel::flat_torus([1.0, 1.0]);
        let y = TargetPoint::new(0, VecN::v2(0.25, 0.5));
        let pair = bump_pair(&geo, &torus, y, 0.05).unwrap();

        let dir = std::env::temp_dir().join("glue-gen-test");
        std::fs::create_dir_all(&dir).unwrap();
        let write = |path: &std::path::Path, map: &MapField| {
            let mut s = String::from("node,chart,y1,y2\n");
            for (i, p) in map.vals.iter().enumerate() {
                s.push_str(&format!("{i},{},{},{}\n", p.chart, p.y.a[0], p.y.a[1]));
            }
            std::fs::write(path, s).unwrap();
        };
        let p0 = dir.join("f0.csv");
        let pi = dir.join("fi.csv");
        write(&p0, &pair.f0);
        write(&pi, &pair.finf);
        let loaded = pair_from_tables(
            &geo,
            &torus,
            p0.to_str().unwrap(),
            pi.to_str().unwrap(),
        )
        .unwrap();
        for (a, b) in loaded.f0.vals.iter().zip(&pair.f0.vals) {
            assert!(torus.dist(a, b) < 1e-12);
        }
    }
}
