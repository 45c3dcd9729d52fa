use serde::{Deserialize, Serialize};

use crate::model::AttentionStepTrace;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDiagnostics {
    /// Mean over steps of `−Σ_j α_ij ln α_ij`, in `[0, ln T]`.
    pub entropy: f64,
    /// Fraction of consecutive step pairs whose attention argmax does not
    /// move backwards. One for zero or one steps.
    pub forward_motion: f64,
}

pub fn attention_diagnostics(traces: &[AttentionStepTrace]) -> AttentionDiagnostics {
    if traces.is_empty() {
        return AttentionDiagnostics {
            entropy: 0.0,
            forward_motion: 1.0,
        };
    }
    let entropy = traces
        .iter()
        .map(|t| {
            t.weights
                .iter()
                .filter(|&&a| a > 0.0)
                .map(|&a| -a * a.ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / traces.len() as f64;
    let forward_motion = if traces.len() < 2 {
        1.0
    } else {
        let am: Vec<usize> = traces.iter().map(AttentionStepTrace::argmax).collect();
        let ok = am.windows(2).filter(|w| w[1] >= w[0]).count();
        ok as f64 / (am.len() - 1) as f64
    };
    AttentionDiagnostics {
        entropy,
        forward_motion,
    }
}
