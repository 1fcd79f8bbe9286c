//! Human and key-value renderings of the theory constants.

use std::fmt::Write as _;

use dectd_core::harness::Model;
use dectd_core::theory::{gamma_functions, LogReal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Computed directly from the generated model.
    Exact,
    /// Depends on the mixing estimate or on a numerical search.
    Estimated,
    /// The printed formula is internally inconsistent; see the README.
    ErratumFlagged,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::Exact => "exact",
            Provenance::Estimated => "estimated",
            Provenance::ErratumFlagged => "erratum-flagged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: &'static str,
    pub value: String,
    pub provenance: Provenance,
}

fn entry(key: &'static str, value: impl ToString, provenance: Provenance) -> Entry {
    Entry { key, value: value.to_string(), provenance }
}

fn real(x: f64) -> String {
    format!("{x:e}")
}

pub fn constants_entries(model: &Model) -> Vec<Entry> {
    use Provenance::*;
    let tc = &model.constants;
    let mc = &tc.model;
    let mut out = vec![
        entry("snapshot_id", tc.fingerprint(), Exact),
        entry("num_agents", mc.num_agents, Exact),
        entry("num_states", model.mrp.num_states(), Exact),
        entry("feature_dim", model.features.dim(), Exact),
        entry("gamma", mc.gamma, Exact),
        entry("r_max", mc.r_max, Exact),
        entry("alpha", real(tc.alpha), Exact),
        entry("lambda2_W", real(mc.lambda2_w), ErratumFlagged),
        entry("slem_W", real(mc.slem_w), Exact),
        entry("lambda2_is_contraction", mc.lambda2_is_contraction(), Exact),
        entry("lambda_max_H", real(mc.lambda_max_h), Exact),
        entry("lambda_min_H", real(mc.lambda_min_h), Exact),
        entry("beta", real(mc.beta), ErratumFlagged),
        entry("theta_star_norm", real(mc.theta_star_norm), Exact),
        entry("mean_dynamics_residual", real(model.mean.residual()), Exact),
        entry("nu0", real(mc.mixing.nu0), Estimated),
        entry("rho", real(mc.mixing.rho), Estimated),
        entry("alpha_max_consensus", real(mc.alpha_max_consensus()), Exact),
        entry("alpha_max_iid", real(tc.iid.alpha_max), Exact),
        entry("c1", real(tc.iid.c1), Exact),
        entry("c2", real(tc.iid.c2), Exact),
        entry("alpha_max_iid_local", real(tc.iid_local.alpha_max), Exact),
        entry("c3", real(tc.iid_local.c3), Exact),
        entry("c4", real(tc.iid_local.c4), ErratumFlagged),
    ];
    match &tc.markov {
        Ok(m) => {
            let (gamma1, gamma2) = gamma_functions(m.step.alpha_max, m.k_g, mc);
            out.extend([
                entry("sigma_K_G", real(mc.sigma(0, m.k_g).1), Estimated),
                entry("K_G", m.k_g, Estimated),
                entry("alpha0", real(m.step.alpha0), ErratumFlagged),
                entry("alpha0_residual", real(m.step.residual), Estimated),
                entry("alpha_max_markov", real(m.step.alpha_max), Estimated),
                entry("gamma1_at_alpha_max", real(gamma1), ErratumFlagged),
                entry("gamma2_at_alpha_max", real(gamma2), ErratumFlagged),
                entry("c5", m.c5, ErratumFlagged),
                entry("c6", m.c6, ErratumFlagged),
                entry("c7", real(m.c7.value()), Estimated),
                entry("c7_gap", LogReal::from_ln(m.c7.ln_gap()), Estimated),
                entry("c8", real(m.c8), Estimated),
                entry("c8_prime", real(m.c8_prime), Estimated),
                entry("c9", real(m.c9.value()), Estimated),
                entry("c9_gap", LogReal::from_ln(m.c9.ln_gap()), Estimated),
                entry("k_alpha", m.k_alpha, Estimated),
            ]);
        }
        Err(e) => out.push(entry("markov_constants", format!("unavailable ({e})"), Estimated)),
    }
    out
}

/// Aligned table with a provenance column.
pub fn render_text(entries: &[Entry]) -> String {
    let width = entries.iter().map(|e| e.key.len()).max().unwrap_or(0);
    let vwidth = entries.iter().map(|e| e.value.len()).max().unwrap_or(0);
    let mut out = String::new();
    for e in entries {
        writeln!(out, "{:<width$}  {:<vwidth$}  [{}]", e.key, e.value, e.provenance.label()).unwrap();
    }
    out
}

/// `key=value` lines, then `provenance.key=label` lines.
pub fn render_kv(entries: &[Entry]) -> String {
    let mut out = String::new();
    for e in entries {
        writeln!(out, "{}={}", e.key, e.value).unwrap();
    }
    for e in entries {
        writeln!(out, "provenance.{}={}", e.key, e.provenance.label()).unwrap();
    }
    out
}
