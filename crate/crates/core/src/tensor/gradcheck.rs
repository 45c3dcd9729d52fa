//! Central finite-difference gradient checking in 64-bit precision.

use std::fmt::Write as _;

use serde::Serialize;

use super::{Result, Tape, Tensor, Var};

/// Denominator floor for relative errors, so that gradients which are both
/// essentially zero compare by absolute difference.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// `(f(x+h) - f(x-h)) / 2h`, where `eval(delta)` evaluates at `x + delta`.
pub fn central_difference<E>(
    h: f64,
    mut eval: impl FnMut(f64) -> std::result::Result<f64, E>,
) -> std::result::Result<f64, E> {
    let plus = eval(h)?;
    let minus = eval(-h)?;
    Ok((plus - minus) / (2.0 * h))
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn push(&mut self, name: &str, coord: usize, analytic: f64, numeric: f64) {
        self.entries.push(GradCheckEntry {
            name: name.to_string(),
            coord,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }

    pub fn extend(&mut self, other: GradCheckReport) {
        self.entries.extend(other.entries);
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn passes(&self, tol: f64) -> bool {
        !self.entries.is_empty()
            && self
                .entries
                .iter()
                .all(|e| e.rel_err.is_finite() && e.rel_err < tol)
    }

    /// Per-parameter summary: name, coordinates checked, worst relative error.
    pub fn to_table(&self) -> String {
        let mut names: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !names.contains(&e.name.as_str()) {
                names.push(&e.name);
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<40} {:>6} {:>12}",
            "parameter", "coords", "max_rel_err"
        );
        for n in names {
            let sel: Vec<_> = self.entries.iter().filter(|e| e.name == n).collect();
            let worst = sel.iter().map(|e| e.rel_err).fold(0.0, f64::max);
            let _ = writeln!(out, "{:<40} {:>6} {:>12.3e}", n, sel.len(), worst);
        }
        out
    }
}

/// Fixed, non-symmetric weights used to reduce an op output to a scalar.
fn probe_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 + ((i as f64 + 1.0) * 0.7311).sin())
        .collect()
}

/// Checks every coordinate of every input of the computation `build`.
///
/// The output is reduced to a scalar with fixed non-uniform weights so that
/// errors cannot cancel by symmetry.
pub fn check_op(
    inputs: &[Tensor<f64>],
    h: f64,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let eval = |vals: &[Tensor<f64>], track: bool| -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), track)).collect();
        let y = build(&mut tape, &vars)?;
        let w = probe_weights(tape.value(y).numel());
        let wv = tape.constant(Tensor::new(tape.shape(y).to_vec(), w)?);
        let prod = tape.mul(y, wv)?;
        let loss = tape.sum(prod);
        let value = tape.value(loss).data()[0];
        if !track {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        Ok((
            value,
            vars.iter()
                .map(|&v| tape.grad_slice(v).map(<[f64]>::to_vec))
                .collect(),
        ))
    };

    let (_, grads) = eval(inputs, true)?;
    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for c in 0..input.numel() {
            let numeric = central_difference(h, |d| {
                work[k].data_mut()[c] = input.data()[c] + d;
                let v = eval(&work, false).map(|r| r.0);
                work[k].data_mut()[c] = input.data()[c];
                v
            })?;
            let analytic = grads[k].as_ref().map_or(0.0, |g| g[c]);
            report.push(&format!("input{k}"), c, analytic, numeric);
        }
    }
    Ok(report)
}
