use serde::{Deserialize, Serialize};

/// Exact operation counters for complexity accounting.
///
/// `codeword_evals` counts codeword/residual correlations spent on search:
/// full-codebook detection scans and local grid candidates. Rendering a
/// channel image is tracked separately in `transform_rows`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationCount {
    pub codeword_evals: u64,
    pub transform_rows: u64,
    pub newton_steps: u64,
    pub objective_evals: u64,
    pub detections: u64,
}

impl std::ops::AddAssign for OperationCount {
    fn add_assign(&mut self, o: Self) {
        self.codeword_evals += o.codeword_evals;
        self.transform_rows += o.transform_rows;
        self.newton_steps += o.newton_steps;
        self.objective_evals += o.objective_evals;
        self.detections += o.detections;
    }
}
