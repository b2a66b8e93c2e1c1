//! Cutoff profiles: the smoothstep kappa, the radial plateau cutoff rho, and
//! the log-radial neck cutoff beta with its derivative bounds.

/// Degree-5 symmetric smoothstep: 0 for t <= 0, 1 for t >= 1, C^2 at both ends,
/// kappa(t) + kappa(1-t) = 1.
#[inline]
pub fn kappa(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    }
}

#[inline]
pub fn kappa_d1(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        30.0 * t * t * (1.0 - t) * (1.0 - t)
    }
}

#[inline]
pub fn kappa_d2(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    }
}

/// Radial cutoff: 0 for |z| <= 1, 1 for |z| >= 2, nondecreasing in |z|.
#[inline]
pub fn rho(r: f64) -> f64 {
    kappa(r - 1.0)
}

/// Neck cutoff as a function of |z|: 0 for |z| <= delta/R, 1 for |z| >= 1/R,
/// kappa(log(R|z|/delta)/log(1/delta)) in between.
#[inline]
pub fn beta(r: f64, delta: f64, rr: f64) -> f64 {
    let l = (1.0 / delta).ln();
    kappa((rr * r / delta).ln() / l)
}

/// d(beta)/d|z|.
#[inline]
pub fn beta_dr(r: f64, delta: f64, rr: f64) -> f64 {
    let l = (1.0 / delta).ln();
    kappa_d1((rr * r / delta).ln() / l) / (r * l)
}

/// d^2(beta)/d|z|^2.
#[inline]
pub fn beta_d2r(r: f64, delta: f64, rr: f64) -> f64 {
    let l = (1.0 / delta).ln();
    let s = (rr * r / delta).ln() / l;
    (kappa_d2(s) / l - kappa_d1(s)) / (r * r * l)
}

/// Max over the transition annulus of |z| |beta'| log(1/delta) and
/// |z|^2 |beta''| log(1/delta); both should be stable in delta.
pub fn beta_bound_sample(delta: f64, rr: f64, samples: usize) -> (f64, f64) {
    let l = (1.0 / delta).ln();
    let lo = (delta / rr).ln();
    let hi = (1.0 / rr).ln();
    let mut m1: f64 = 0.0;
    let mut m2: f64 = 0.0;
    for i in 0..=samples {
        let t = lo + (hi - lo) * i as f64 / samples as f64;
        let r = t.exp();
        m1 = m1.max((r * beta_dr(r, delta, rr)).abs() * l);
        m2 = m2.max((r * r * beta_d2r(r, delta, rr)).abs() * l);
    }
    (m1, m2)
}

/// Smooth radial partition-of-unity step in log-radius: 1 for x <= a, 0 for x >= b.
#[inline]
pub fn pou_down(x: f64, a: f64, b: f64) -> f64 {
    1.0 - kappa((x.ln() - a.ln()) / (b.ln() - a.ln()))
}
