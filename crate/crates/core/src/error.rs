use thiserror::Error;

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point lies off the model manifold (deviation {deviation:.3e})")]
    OffManifold { deviation: f64 },

    #[error("map is not periodic on the parameter grid (mismatch {mismatch:.3e} along axis {axis})")]
    NonPeriodic { axis: usize, mismatch: f64 },

    #[error("immersion is rank deficient at node {node} (min singular value {min_singular:.3e})")]
    RankDeficient { node: usize, min_singular: f64 },

    #[error("not affine Legendrian at node {node}: min singular value {min_singular:.3e}, condition {condition:.3e}")]
    NotAffineLegendrian { node: usize, min_singular: f64, condition: f64 },

    #[error("negative phi-volume determinant {value:.3e} at node {node}")]
    Orientation { node: usize, value: f64 },

    #[error("phi-density {rho:.3e} below {floor:.1e} at node {node}")]
    Degenerate { node: usize, rho: f64, floor: f64 },

    #[error("immersion is not phi-minimal: max |H_phi| = {measured:.3e} (gate {gate:.1e})")]
    NotPhiMinimal { measured: f64, gate: f64 },

    #[error("immersion is not Legendrian: max |eta(d iota)| = {defect:.3e}")]
    NotLegendrian { defect: f64 },

    #[error("immersion is not special affine Legendrian (defect {defect:.3e})")]
    NotSpecial { defect: f64 },

    #[error("model is not eta-Einstein (fit residual {residual:.3e})")]
    NotEtaEinstein { residual: f64 },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("field is not differentiable at the sample point (finite-difference mismatch {mismatch:.3e})")]
    NonDifferentiable { mismatch: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("normal field too large: sup norm {norm:.3e} exceeds {bound:.3e}")]
    StepTooLarge { norm: f64, bound: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("angle unwrapping failed between nodes {from} and {to} (jump {jump:.3e})")]
    Unwrap { from: usize, to: usize, jump: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("Re(psi) not positive at node {node} (value {value:.3e})")]
    Positivity { node: usize, value: f64 },

    #[error("flow failed at t = {time:.4}: {source}")]
    Flow {
        time: f64,
        #[source]
        source: Box<GeometryError>,
    },

    #[error("eigensolver failure: {0}")]
    Eigen(String),
}
