//! Ratio-of-similarities terms shared by the co-occurrence, proxy and
//! counterfactual losses.
//!
//! Raw cosine ratios are undefined when the denominator sums to zero and flip
//! sign when it is negative. `Shifted` maps every similarity `s` to `1 + s`
//! (monotone, non-negative) and adds `RATIO_EPS` to the denominator.
//! `Literal` keeps the raw form and skips terms whose denominator is too small.

use serde::{Deserialize, Serialize};

use crate::numcore::{NumError, Scalar, Tape, Var};

pub const RATIO_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioMode {
    #[default]
    Shifted,
    Literal,
}

impl std::str::FromStr for RatioMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shifted" => Ok(Self::Shifted),
            "literal" => Ok(Self::Literal),
            other => Err(format!("unknown ratio mode `{other}` (expected shifted|literal)")),
        }
    }
}

/// Counts of loss terms dropped in literal mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossDiagnostics {
    pub skipped_terms: usize,
}

/// `-f(num) / sum_k f(den_k)` for rank-0 similarity nodes; `None` when a
/// literal-mode term is skipped.
pub fn ratio_term<T: Scalar>(
    tape: &mut Tape<T>,
    numerator: Var,
    denominator: &[Var],
    mode: RatioMode,
    diag: &mut LossDiagnostics,
) -> Result<Option<Var>, NumError> {
    let den = tape.add_all(denominator)?;
    let (num, den) = match mode {
        RatioMode::Shifted => {
            let num = tape.add_scalar(numerator, T::one());
            let k = T::lit(denominator.len() as f64);
            let den = tape.add_scalar(den, k + T::lit(RATIO_EPS));
            (num, den)
        }
        RatioMode::Literal => {
            if tape.scalar_value(den)?.abs() < T::lit(RATIO_EPS) {
                diag.skipped_terms += 1;
                return Ok(None);
            }
            (numerator, den)
        }
    };
    let q = tape.div(num, den)?;
    Ok(Some(tape.neg(q)))
}
