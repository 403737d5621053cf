//! Exact information-theoretic audits on enumerable micro-worlds.
//!
//! A [`TinyWorld`] is a fully tabulated environment: a handful of prompts
//! `x`, every trace `z` up to a tiny length over a tiny alphabet, and a
//! small answer set `y`, together with the exact conditionals
//! `pi(z | x)` and `pi(y | x, z)`. Because everything is enumerable, mutual
//! information and conditional entropies can be computed as exact finite
//! sums (with the `0 ln 0 = 0` convention), and the variational bounds the
//! trainer relies on can be verified against ground truth:
//!
//! * minimality (upper bound): `I(X;Z) <= E[-ln Q(Z)] - H(Z|X)` for any
//!   normalized reference `Q` over the trace space; the gap is exactly
//!   `KL(P_Z || Q)`.
//! * sufficiency (lower bound): `I(Y;Z|X) >= H(Y|X) + E[ln d(y|x,z)]` for
//!   any decoder `d`; the gap is the expected KL between the true answer
//!   conditional and the decoder.
//!
//! All quantities are in nats.

use thiserror::Error;

use crate::prior::{PriorError, PriorModel};
use crate::vocab::TokenSeq;

/// Hard caps keeping every sum exactly enumerable.
pub const MAX_PROMPTS: usize = 8;
pub const MAX_TRACE_VOCAB: usize = 4;
pub const MAX_TRACE_LEN: usize = 4;
pub const MAX_ANSWERS: usize = 32;

const DIST_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum InfoError {
    #[error("invalid distribution: {0}")]
    BadDistribution(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("world too large to enumerate: {0}")]
    TooLarge(String),
    #[error("reference prior puts zero mass on trace {index} which the policy visits")]
    ZeroPriorMass { index: usize },
    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// Every trace of length `0..=max_len` over `{0, .., vocab_size-1}`, in
/// length-then-lexicographic order (the empty trace first).
pub fn enumerate_traces(vocab_size: usize, max_len: usize) -> Result<Vec<TokenSeq>, InfoError> {
    if vocab_size == 0 || vocab_size > MAX_TRACE_VOCAB {
        return Err(InfoError::TooLarge(format!(
            "trace vocab {vocab_size} outside 1..={MAX_TRACE_VOCAB}"
        )));
    }
    if max_len > MAX_TRACE_LEN {
        return Err(InfoError::TooLarge(format!("max_len {max_len} > {MAX_TRACE_LEN}")));
    }
    let mut out: Vec<TokenSeq> = vec![Vec::new()];
    let mut frontier: Vec<TokenSeq> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for base in &frontier {
            for t in 0..vocab_size {
                let mut z = base.clone();
                z.push(t as u32);
                next.push(z);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(out)
}

fn check_distribution(p: &[f64], what: &str) -> Result<(), InfoError> {
    if p.is_empty() {
        return Err(InfoError::BadDistribution(format!("{what} is empty")));
    }
    let mut sum = 0.0;
    for &v in p {
        if !(v >= 0.0) {
            return Err(InfoError::BadDistribution(format!("{what} has entry {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(InfoError::BadDistribution(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// A fully tabulated prompt/trace/answer environment.
#[derive(Debug, Clone)]
pub struct TinyWorld {
    /// Prompt marginal `P(x)`.
    pub p_x: Vec<f64>,
    /// Trace policy `pi(z | x)`, indexed `[x][z]`.
    pub policy_z: Vec<Vec<f64>>,
    /// Answer policy `pi(y | x, z)`, indexed `[x][z][y]`.
    pub policy_y: Vec<Vec<Vec<f64>>>,
    /// The actual token sequences behind each `z` index.
    pub traces: Vec<TokenSeq>,
}

impl TinyWorld {
    pub fn new(
        p_x: Vec<f64>,
        policy_z: Vec<Vec<f64>>,
        policy_y: Vec<Vec<Vec<f64>>>,
        traces: Vec<TokenSeq>,
    ) -> Result<Self, InfoError> {
        let nx = p_x.len();
        let nz = traces.len();
        if nx > MAX_PROMPTS {
            return Err(InfoError::TooLarge(format!("{nx} prompts > {MAX_PROMPTS}")));
        }
        check_distribution(&p_x, "P(x)")?;
        if policy_z.len() != nx || policy_y.len() != nx {
            return Err(InfoError::DimensionMismatch(format!(
                "policies cover {} / {} prompts, world has {nx}",
                policy_z.len(),
                policy_y.len()
            )));
        }
        let ny = policy_y
            .first()
            .and_then(|rows| rows.first())
            .map(|row| row.len())
            .unwrap_or(0);
        if ny == 0 || ny > MAX_ANSWERS {
            return Err(InfoError::TooLarge(format!("{ny} answers outside 1..={MAX_ANSWERS}")));
        }
        for (x, row) in policy_z.iter().enumerate() {
            if row.len() != nz {
                return Err(InfoError::DimensionMismatch(format!(
                    "pi(z|x={x}) covers {} traces, world has {nz}",
                    row.len()
                )));
            }
            check_distribution(row, &format!("pi(z|x={x})"))?;
        }
        for (x, rows) in policy_y.iter().enumerate() {
            if rows.len() != nz {
                return Err(InfoError::DimensionMismatch(format!(
                    "pi(y|x={x},z) covers {} traces, world has {nz}",
                    rows.len()
                )));
            }
            for (z, row) in rows.iter().enumerate() {
                if row.len() != ny {
                    return Err(InfoError::DimensionMismatch(format!(
                        "pi(y|x={x},z={z}) has {} answers, world has {ny}",
                        row.len()
                    )));
                }
                check_distribution(row, &format!("pi(y|x={x},z={z})"))?;
            }
        }
        Ok(TinyWorld { p_x, policy_z, policy_y, traces })
    }

    pub fn n_prompts(&self) -> usize {
        self.p_x.len()
    }

    pub fn n_traces(&self) -> usize {
        self.traces.len()
    }

    pub fn n_answers(&self) -> usize {
        self.policy_y[0][0].len()
    }

    /// Joint `P(x, z) = P(x) pi(z|x)`.
    pub fn joint_xz(&self) -> Vec<Vec<f64>> {
        self.p_x
            .iter()
            .zip(&self.policy_z)
            .map(|(&px, row)| row.iter().map(|&pz| px * pz).collect())
            .collect()
    }

    /// Trace marginal `P(z) = sum_x P(x) pi(z|x)`.
    pub fn marginal_z(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_traces()];
        for (x, row) in self.policy_z.iter().enumerate() {
            for (z, &pz) in row.iter().enumerate() {
                out[z] += self.p_x[x] * pz;
            }
        }
        out
    }

    /// Policy-induced answer conditional `P(y|x) = sum_z pi(z|x) pi(y|x,z)`.
    pub fn answer_given_prompt(&self) -> Vec<Vec<f64>> {
        let ny = self.n_answers();
        (0..self.n_prompts())
            .map(|x| {
                let mut row = vec![0.0; ny];
                for z in 0..self.n_traces() {
                    let pz = self.policy_z[x][z];
                    if pz == 0.0 {
                        continue;
                    }
                    for y in 0..ny {
                        row[y] += pz * self.policy_y[x][z][y];
                    }
                }
                row
            })
            .collect()
    }
}

/// Shannon entropy `-sum p ln p` in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// `KL(p || q)` in nats. Errors where `p` has mass and `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, InfoError> {
    if p.len() != q.len() {
        return Err(InfoError::DimensionMismatch(format!(
            "KL over {} vs {} outcomes",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(InfoError::ZeroPriorMass { index: i });
        }
        kl += pi * (pi.ln() - qi.ln());
    }
    Ok(kl)
}

/// Exact `I(X;Z) = sum_{x,z} P(x,z) ln( pi(z|x) / P(z) )`.
pub fn exact_mi_xz(world: &TinyWorld) -> f64 {
    let marginal = world.marginal_z();
    let mut mi = 0.0;
    for (x, row) in world.policy_z.iter().enumerate() {
        let px = world.p_x[x];
        if px == 0.0 {
            continue;
        }
        for (z, &pz) in row.iter().enumerate() {
            if pz > 0.0 {
                mi += px * pz * (pz.ln() - marginal[z].ln());
            }
        }
    }
    mi
}

/// `H(Y|X)` under the policy-induced `P(y|x)`.
pub fn cond_entropy_y_given_x(world: &TinyWorld) -> f64 {
    world
        .answer_given_prompt()
        .iter()
        .zip(&world.p_x)
        .map(|(row, &px)| px * entropy(row))
        .sum()
}

/// `H(Y|X,Z)` under the joint `P(x) pi(z|x) pi(y|x,z)`.
pub fn cond_entropy_y_given_xz(world: &TinyWorld) -> f64 {
    let mut h = 0.0;
    for x in 0..world.n_prompts() {
        let px = world.p_x[x];
        if px == 0.0 {
            continue;
        }
        for z in 0..world.n_traces() {
            let pz = world.policy_z[x][z];
            if pz == 0.0 {
                continue;
            }
            h += px * pz * entropy(&world.policy_y[x][z]);
        }
    }
    h
}

/// `H(Z|X)` under the joint `P(x) pi(z|x)`.
pub fn cond_entropy_z_given_x(world: &TinyWorld) -> f64 {
    world.policy_z.iter().zip(&world.p_x).map(|(row, &px)| px * entropy(row)).sum()
}

/// Exact `I(Y;Z|X)` via the chain rule `H(Y|X) - H(Y|X,Z)`.
pub fn exact_cmi_yz_given_x(world: &TinyWorld) -> f64 {
    cond_entropy_y_given_x(world) - cond_entropy_y_given_xz(world)
}

/// Outcome of checking one variational bound against its exact value.
#[derive(Debug, Clone, Copy)]
pub struct BoundReport {
    /// The exact information quantity.
    pub exact: f64,
    /// The variational estimate (upper bound for minimality, lower bound
    /// for sufficiency).
    pub bound: f64,
    /// Bound minus exact for upper bounds, exact minus bound for lower
    /// bounds; non-negative whenever the bound holds.
    pub slack: f64,
    pub holds: bool,
}

/// Verify `I(X;Z) <= E[-ln q(Z)] - H(Z|X)` for a normalized reference `q`
/// over the world's trace index space. The slack equals `KL(P_Z || q)` up
/// to rounding.
pub fn check_minimality_bound(world: &TinyWorld, q: &[f64]) -> Result<BoundReport, InfoError> {
    if q.len() != world.n_traces() {
        return Err(InfoError::DimensionMismatch(format!(
            "reference covers {} traces, world has {}",
            q.len(),
            world.n_traces()
        )));
    }
    check_distribution(q, "reference q(z)")?;
    let marginal = world.marginal_z();
    let mut cross = 0.0; // E[-ln q(Z)]
    for (z, (&pz, &qz)) in marginal.iter().zip(q).enumerate() {
        if pz == 0.0 {
            continue;
        }
        if qz == 0.0 {
            return Err(InfoError::ZeroPriorMass { index: z });
        }
        cross -= pz * qz.ln();
    }
    let exact = exact_mi_xz(world);
    let bound = cross - cond_entropy_z_given_x(world);
    let slack = bound - exact;
    Ok(BoundReport { exact, bound, slack, holds: exact <= bound + 1e-12 })
}

/// Verify `I(Y;Z|X) >= H(Y|X) + E[ln d(y|x,z)]` for a decoder `d` indexed
/// `[x][z][y]`. A decoder that zeroes an answer the policy can produce
/// drives the bound to `-inf`; that is reported, not an error.
pub fn check_sufficiency_bound_with(
    world: &TinyWorld,
    decoder: &[Vec<Vec<f64>>],
) -> Result<BoundReport, InfoError> {
    let (nx, nz, ny) = (world.n_prompts(), world.n_traces(), world.n_answers());
    if decoder.len() != nx
        || decoder.iter().any(|rows| rows.len() != nz)
        || decoder.iter().any(|rows| rows.iter().any(|row| row.len() != ny))
    {
        return Err(InfoError::DimensionMismatch("decoder shape != [x][z][y]".into()));
    }
    for (x, rows) in decoder.iter().enumerate() {
        for (z, row) in rows.iter().enumerate() {
            check_distribution(row, &format!("d(y|x={x},z={z})"))?;
        }
    }
    // E[ln d(y|x,z)] over P(x) pi(z|x) pi(y|x,z).
    let mut expected_log = 0.0;
    for x in 0..nx {
        let px = world.p_x[x];
        if px == 0.0 {
            continue;
        }
        for z in 0..nz {
            let pz = world.policy_z[x][z];
            if pz == 0.0 {
                continue;
            }
            for y in 0..ny {
                let py = world.policy_y[x][z][y];
                if py == 0.0 {
                    continue;
                }
                expected_log += px * pz * py * decoder[x][z][y].ln();
            }
        }
    }
    let exact = exact_cmi_yz_given_x(world);
    let bound = cond_entropy_y_given_x(world) + expected_log;
    let slack = exact - bound;
    Ok(BoundReport { exact, bound, slack, holds: bound <= exact + 1e-12 })
}

/// [`check_sufficiency_bound_with`] using the world's own answer policy as
/// the decoder (the bound is then tight).
pub fn check_sufficiency_bound(world: &TinyWorld) -> Result<BoundReport, InfoError> {
    check_sufficiency_bound_with(world, &world.policy_y)
}

/// Restrict a trace prior to an enumerated trace space and renormalize, so
/// it can serve as the reference `q` in [`check_minimality_bound`].
pub fn prior_over_traces(
    prior: &dyn PriorModel,
    traces: &[TokenSeq],
) -> Result<Vec<f64>, InfoError> {
    let mut q: Vec<f64> = Vec::with_capacity(traces.len());
    for z in traces {
        q.push(prior.seq_logprob(z)?.exp());
    }
    let sum: f64 = q.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(InfoError::BadDistribution(format!(
            "prior mass {sum} over the enumerated traces"
        )));
    }
    for v in &mut q {
        *v /= sum;
    }
    Ok(q)
}

fn random_distribution(rng: &mut crate::rng::StreamRng, n: usize) -> Vec<f64> {
    // Dense positive rows: offset keeps every outcome supported.
    let mut row: Vec<f64> = (0..n).map(|_| rng.next_f64() + 0.05).collect();
    let sum: f64 = row.iter().sum();
    for v in &mut row {
        *v /= sum;
    }
    row
}

/// A dense random world for audits; fully determined by the RNG stream.
pub fn random_world(
    rng: &mut crate::rng::StreamRng,
    n_prompts: usize,
    trace_vocab: usize,
    max_trace_len: usize,
    n_answers: usize,
) -> Result<TinyWorld, InfoError> {
    let traces = enumerate_traces(trace_vocab, max_trace_len)?;
    let nz = traces.len();
    let p_x = random_distribution(rng, n_prompts);
    let policy_z: Vec<Vec<f64>> = (0..n_prompts).map(|_| random_distribution(rng, nz)).collect();
    let policy_y: Vec<Vec<Vec<f64>>> = (0..n_prompts)
        .map(|_| (0..nz).map(|_| random_distribution(rng, n_answers)).collect())
        .collect();
    TinyWorld::new(p_x, policy_z, policy_y, traces)
}
