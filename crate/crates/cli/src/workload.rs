//! Named arrival vectors that scale with the system size.

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    Light,
    InnerHeavy,
    OuterHeavy,
}

impl Workload {
    pub const ALL: [Workload; 3] = [Workload::Light, Workload::InnerHeavy, Workload::OuterHeavy];

    pub fn as_str(self) -> &'static str {
        match self {
            Workload::Light => "light",
            Workload::InnerHeavy => "inner_heavy",
            Workload::OuterHeavy => "outer_heavy",
        }
    }

    /// Arrival vector at `n` servers with nominal shares `alpha`.
    ///
    /// Two types: type 1 is backed off from `alpha_1 n` by `5n/32`,
    /// `(alpha_1 n)^0.55` or `(alpha_1 n)^0.3`, type 2 always by `6n/32`.
    /// Three types: backoffs `(5n/48, 7n/48)`, exponents `(0.55, 0.65)` or
    /// `(0.3, 0.7)` on the first two types, and `9n/48` on the third.
    pub fn lambda(self, n: usize, alpha: &[f64]) -> Result<Vec<f64>, CliError> {
        let nf = n as f64;
        let nominal: Vec<f64> = alpha.iter().map(|a| a * nf).collect();
        let v = match (alpha.len(), self) {
            (2, Workload::Light) => vec![nominal[0] - 5.0 * nf / 32.0, nominal[1] - 6.0 * nf / 32.0],
            (2, Workload::InnerHeavy) => vec![nominal[0] - nominal[0].powf(0.55), nominal[1] - 6.0 * nf / 32.0],
            (2, Workload::OuterHeavy) => vec![nominal[0] - nominal[0].powf(0.3), nominal[1] - 6.0 * nf / 32.0],
            (3, Workload::Light) => vec![
                nominal[0] - 5.0 * nf / 48.0,
                nominal[1] - 7.0 * nf / 48.0,
                nominal[2] - 9.0 * nf / 48.0,
            ],
            (3, Workload::InnerHeavy) => vec![
                nominal[0] - nominal[0].powf(0.55),
                nominal[1] - nominal[1].powf(0.65),
                nominal[2] - 9.0 * nf / 48.0,
            ],
            (3, Workload::OuterHeavy) => vec![
                nominal[0] - nominal[0].powf(0.3),
                nominal[1] - nominal[1].powf(0.7),
                nominal[2] - 9.0 * nf / 48.0,
            ],
            (k, _) => {
                return Err(CliError::Config(format!(
                    "named workloads are defined for k in {{2, 3}}, got {k}"
                )))
            }
        };
        if v.iter().any(|x| *x < 0.0) {
            return Err(CliError::Config(format!(
                "workload {} is negative at n = {n}: {v:?}",
                self.as_str()
            )));
        }
        Ok(v)
    }
}
