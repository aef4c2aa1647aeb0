//! Hungarian-matched detection objective.
//!
//! Each reference line is assigned to exactly one candidate by minimising
//! the total matching cost
//!
//! ```text
//! C[n][m] = alpha_match * |l_n - t_m|^2 - log(c_n) + log(1 - c_n)
//! ```
//!
//! and the training loss is then evaluated with a (smaller) `alpha_grad`:
//!
//! ```text
//! L = sum_matched (alpha_grad * |l_n - t_m|^2 - log c_n) + sum_unmatched -log(1 - c_n)
//! ```
//!
//! Each unmatched candidate is penalised once. The `+log(1 - c_n)` term in
//! the matching cost puts "match n" and "leave n unmatched" on the same
//! footing, so the chosen assignment minimises `L` at `alpha_match`.

use crate::detect::TripletCandidate;
use crate::error::{Error, Result};

/// Confidences are clamped to `[EPS_C, 1 - EPS_C]` before taking logs.
pub const EPS_C: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchLossConfig {
    pub alpha_match: f64,
    pub alpha_grad: f64,
}

impl Default for MatchLossConfig {
    fn default() -> Self {
        Self {
            alpha_match: 1000.0,
            alpha_grad: 100.0,
        }
    }
}

impl MatchLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_match > 0.0 && self.alpha_grad > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("alpha values must be positive".into()))
        }
    }
}

/// One-to-one candidate/reference matching covering every reference.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    /// `(candidate, reference)` pairs ordered by reference.
    pub pairs: Vec<(usize, usize)>,
    /// Reference matched to each candidate, if any.
    pub matched: Vec<Option<usize>>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn is_matched(&self, n: usize) -> bool {
        self.matched[n].is_some()
    }
}

/// Minimum-cost assignment of all `M` columns to distinct rows of an
/// `N x M` cost matrix (`N >= M`). Shortest augmenting path with
/// potentials, `O(M^2 N)`.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Config("ragged cost matrix".into()));
    }
    if n < m {
        return Err(Error::TooFewCandidates {
            candidates: n,
            references: m,
        });
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost"));
    }
    let mut matched = vec![None; n];
    if m == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            matched,
            total_cost: 0.0,
        });
    }

    // Rows of the working problem are references (1-based), columns are
    // candidates (1-based); index 0 is the virtual source.
    let at = |r: usize, c: usize| cost[c - 1][r - 1];
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for r in 1..=m {
        owner[0] = r;
        let mut c0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[c0] = true;
            let r0 = owner[c0];
            let mut delta = f64::INFINITY;
            let mut c1 = 0;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let reduced = at(r0, c) - u[r0] - v[c];
                if reduced < minv[c] {
                    minv[c] = reduced;
                    way[c] = c0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    c1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            c0 = c1;
            if owner[c0] == 0 {
                break;
            }
        }
        loop {
            let c1 = way[c0];
            owner[c0] = owner[c1];
            c0 = c1;
            if c0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&c| owner[c] != 0)
        .map(|c| (c - 1, owner[c] - 1))
        .collect();
    pairs.sort_by_key(|&(_, r)| r);
    let mut total_cost = 0.0;
    for &(cand, r) in &pairs {
        matched[cand] = Some(r);
        total_cost += cost[cand][r];
    }
    Ok(Assignment {
        pairs,
        matched,
        total_cost,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchLoss {
    pub loss: f64,
    /// `dL/dl_n`, one `K`-vector per candidate.
    pub grad_coords: Vec<Vec<f64>>,
    /// `dL/dc_n`.
    pub grad_confidence: Vec<f64>,
    pub assignment: Assignment,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Matching cost matrix `[N][M]` at a given localisation weight.
pub fn matching_costs(candidates: &[TripletCandidate], refs: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    candidates
        .iter()
        .map(|c| {
            let conf = c.confidence.clamp(EPS_C, 1.0 - EPS_C);
            let offset = -conf.ln() + (1.0 - conf).ln();
            refs.iter()
                .map(|t| alpha * squared_distance(&c.coords, t) + offset)
                .collect()
        })
        .collect()
}

pub fn match_and_loss(
    candidates: &[TripletCandidate],
    refs: &[Vec<f64>],
    config: &MatchLossConfig,
) -> Result<MatchLoss> {
    config.validate()?;
    if let Some(k) = candidates.first().map(|c| c.coords.len()) {
        if let Some(bad) = candidates.iter().find(|c| c.coords.len() != k) {
            return Err(Error::dim("candidate coordinates", k, bad.coords.len()));
        }
        if let Some(bad) = refs.iter().find(|t| t.len() != k) {
            return Err(Error::dim("reference coordinates", k, bad.len()));
        }
    }
    let assignment = hungarian_assign(&matching_costs(candidates, refs, config.alpha_match))?;

    let mut loss = 0.0;
    let mut grad_coords = Vec::with_capacity(candidates.len());
    let mut grad_confidence = Vec::with_capacity(candidates.len());
    for (c, m) in candidates.iter().zip(&assignment.matched) {
        let conf = c.confidence.clamp(EPS_C, 1.0 - EPS_C);
        match *m {
            Some(m) => {
                let t = &refs[m];
                loss += config.alpha_grad * squared_distance(&c.coords, t) - conf.ln();
                grad_coords.push(
                    c.coords
                        .iter()
                        .zip(t)
                        .map(|(l, t)| 2.0 * config.alpha_grad * (l - t))
                        .collect(),
                );
                grad_confidence.push(-1.0 / conf);
            }
            None => {
                loss -= (1.0 - conf).ln();
                grad_coords.push(vec![0.0; c.coords.len()]);
                grad_confidence.push(1.0 / (1.0 - conf));
            }
        }
    }
    Ok(MatchLoss {
        loss,
        grad_coords,
        grad_confidence,
        assignment,
    })
}
