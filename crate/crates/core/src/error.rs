use thiserror::Error;

#[derive(Error, Debug)]
pub enum GlueError {
    #[error("tangent vector too long: |v| = {len:.6e} >= injectivity bound {bound:.6e}")]
    VectorTooLong { len: f64, bound: f64 },

    #[error("geodesic left the chart atlas at y = ({0:.4}, {1:.4})")]
    ChartEscape(f64, f64),

    #[error("points outside the injectivity radius: d = {dist:.6e} >= {bound:.6e}")]
    OutOfInjectivityRadius { dist: f64, bound: f64 },

    #[error("fixed-point iteration did not converge (residual {0:.3e})")]
    NoConvergence(f64),

    #[error("inadmissible gluing parameters: delta = {delta}, R = {r}, delta0 = {delta0}")]
    InadmissibleParams { delta: f64, r: f64, delta0: f64 },

    #[error("grid resolution too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("field missing values on nodes: {0}")]
    MissingNodes(String),

    #[error("norm spec and grid domain disagree: {0}")]
    WrongDomain(String),

    #[error("gluing-point values disagree: |f1(x1) - f2(x2)| = {0:.3e}")]
    MatchingViolation(f64),

    #[error("cokernel representatives fail to span after {attempts} attempts (last Gram sigma_min = {sigma_min:.3e})")]
    SpanningFailure { attempts: usize, sigma_min: f64 },

    #[error("linear system singular or solve residual too large: {0}")]
    SingularSystem(String),

    #[error("approximate inverse does not contract: probed factor {0:.3}")]
    NoContraction(f64),

    #[error("iteration hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("no convergence after {iters} iterations (residual {residual:.3e})")]
    NoConvergenceAfter { iters: usize, residual: f64 },

    #[error("config error: {0}")]
    ConfigParse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<GlueError>,
    },
}

impl GlueError {
    pub fn at_stage(self, stage: &'static str) -> Self {
        GlueError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
