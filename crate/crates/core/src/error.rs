use crate::mesh::BoundaryTag;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("mesh quality error: minimum angle {min_angle:.2} deg is below the floor {floor:.2} deg")]
    Quality { min_angle: f64, floor: f64 },
    #[error("deformation error: triangle {triangle} has signed area {area:e}")]
    Deformation { triangle: usize, area: f64 },
    #[error("deformation error: |t| * Lipschitz(V) = {0:.3} is not below 1")]
    NotBijective(f64),
    #[error("boundary tag {0:?} is not present in the mesh")]
    MissingTag(BoundaryTag),
    #[error("assembly error: triangle {triangle} is degenerate (area {area:e})")]
    Assembly { triangle: usize, area: f64 },
    #[error("boundary condition error: {0}")]
    BoundaryCondition(String),
    #[error(
        "resonance: k^2 = {k2} is within relative margin {margin:e} of the discrete eigenvalue {nearest_eigenvalue}"
    )]
    Resonance { k2: f64, nearest_eigenvalue: f64, margin: f64 },
    #[error("solver error: {0}")]
    Solver(String),
    #[error("eigensolver did not converge after {iterations} iterations (worst residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("eigenvalue {lambda} has multiplicity {multiplicity}; {hint}")]
    Multiplicity { lambda: f64, multiplicity: usize, hint: &'static str },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("parse error in {section} at line {line}: {message}")]
    Parse { section: String, line: usize, message: String },
    #[error("fit error: {0}")]
    Fit(String),
    #[error("no admissible step above the minimum step {min_step:e}")]
    Stall { min_step: f64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }
}
