//! End-to-end recovery from datasets, and the exact-moment variant that
//! starts from population mixing matrices.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cumulants::Moments;
use crate::error::{Error, Result};
use crate::model::{ColumnAlignment, SemIcaModel};
use crate::recovery::align::{align_columns, AlignOptions};
use crate::recovery::assemble::{assemble_ab, TriangularPolicy};
use crate::recovery::coupled::coupled_response;
use crate::recovery::order::{detect_affected_moments, EffectMatrix, DEFAULT_THRESHOLD_Z};
use crate::recovery::rank1::{rank1_differences, DEFAULT_G_FLOOR};
use crate::recovery::refine::{joint_refine, JointProblem, JointState, RefineOptions};
use crate::recovery::RecoveryResult;
use crate::simulator::Dataset;
use crate::tensor::{ica_from_moments, model_cumulant, IcaOptions};

/// How each response matrix `D_i` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseEstimator {
    /// Separate decomposition of each interventional cumulant, then
    /// alignment. Needs `m < n`.
    Independent,
    /// Fit `D_i = C - g c_i^T` to the interventional moments.
    Coupled,
    /// Independent when `m < n`, coupled otherwise.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Variables with an interventional dataset to use; all available when
    /// `None`.
    pub targets: Option<Vec<usize>>,
    pub threshold_z: f64,
    pub ica: IcaOptions,
    pub align: AlignOptions,
    pub response: ResponseEstimator,
    pub refine: RefineOptions,
    /// Known excess kurtosis of every latent; the decomposition's estimates
    /// are used when absent.
    pub kappa: Option<f64>,
    pub policy: TriangularPolicy,
    pub g_floor: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            seed: 0,
            targets: None,
            threshold_z: DEFAULT_THRESHOLD_Z,
            ica: IcaOptions::default(),
            align: AlignOptions::default(),
            response: ResponseEstimator::Auto,
            refine: RefineOptions::default(),
            kappa: None,
            policy: TriangularPolicy::noisy(),
            g_floor: DEFAULT_G_FLOOR,
        }
    }
}

fn splitmix(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Prepared {
    n: usize,
    m: usize,
    obs: Moments,
    targets: Vec<usize>,
    intv: Vec<Moments>,
    effects: EffectMatrix,
    order: Vec<usize>,
}

fn prepare(obs: &Dataset, intvs: &[Dataset], m: usize, opts: &RecoveryOptions) -> Result<Prepared> {
    let n = obs.n_vars();
    if obs.intervention.is_some() {
        return Err(Error::Config(
            "observational dataset carries an intervention tag".into(),
        ));
    }
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "cannot recover {m} latents from {n} variables"
        )));
    }
    let mut by_target: BTreeMap<usize, &Dataset> = BTreeMap::new();
    for d in intvs {
        let t = d.target().ok_or(Error::MissingIntervention)?;
        if d.n_vars() != n {
            return Err(Error::Dimension(format!(
                "dataset for target {t} has {} variables",
                d.n_vars()
            )));
        }
        if t >= n {
            return Err(Error::IndexOutOfRange { index: t, len: n });
        }
        if by_target.insert(t, d).is_some() {
            return Err(Error::DuplicateTarget(t));
        }
    }
    let targets: Vec<usize> = match &opts.targets {
        Some(list) => {
            let mut list = list.clone();
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::DuplicateTarget(w[0]));
            }
            if let Some(&t) = list.iter().find(|t| !by_target.contains_key(t)) {
                return Err(Error::Config(format!(
                    "no interventional dataset for target {t}"
                )));
            }
            list
        }
        None => by_target.keys().copied().collect(),
    };
    let obs_m = Moments::from_dataset(obs)?;
    let mut intv = Vec::with_capacity(targets.len());
    let mut effects = EffectMatrix::new(n);
    for &t in &targets {
        let mi = Moments::from_dataset(by_target[&t])?;
        effects.set_column(
            t,
            &detect_affected_moments(&obs_m, &mi, t, opts.threshold_z),
        );
        intv.push(mi);
    }
    let order = effects.order()?;
    Ok(Prepared {
        n,
        m,
        obs: obs_m,
        targets,
        intv,
        effects,
        order,
    })
}

fn use_coupled(estimator: ResponseEstimator, n: usize, m: usize) -> bool {
    match estimator {
        ResponseEstimator::Independent => false,
        ResponseEstimator::Coupled => true,
        ResponseEstimator::Auto => m >= n,
    }
}

fn run_restart(p: &Prepared, opts: &RecoveryOptions, restart: usize) -> Result<RecoveryResult> {
    let seed = splitmix(opts.seed, restart as u64);
    let est = ica_from_moments(&p.obs.cov, &p.obs.m4, p.m, &opts.ica, seed)?;
    let c_hat = est.mixing();
    let kappa = match opts.kappa {
        Some(k) => vec![k; p.m],
        None => est.weights.clone(),
    };
    let coupled = use_coupled(opts.response, p.n, p.m);

    let mut aligned = Vec::with_capacity(p.targets.len());
    let mut alignments = Vec::with_capacity(p.targets.len());
    for (k, &t) in p.targets.iter().enumerate() {
        if coupled {
            let free: Vec<usize> = (0..p.n).filter(|&r| p.effects.affected[r][t]).collect();
            let fit = coupled_response(
                &c_hat,
                &p.obs,
                &p.intv[k],
                t,
                &free,
                &kappa,
                Some(opts.threshold_z),
            )?;
            aligned.push(fit.d);
            alignments.push(ColumnAlignment::identity(p.m));
        } else {
            let mi = &p.intv[k];
            let d = ica_from_moments(
                &mi.cov,
                &mi.m4,
                p.m,
                &opts.ica,
                splitmix(seed, 1 + t as u64),
            )?
            .mixing();
            let al = align_columns(&c_hat, std::slice::from_ref(&d), &[t], &opts.align)?.remove(0);
            aligned.push(al.apply(&d)?);
            alignments.push(al);
        }
    }
    finish(
        p.n,
        &c_hat,
        aligned,
        alignments,
        &p.targets,
        &p.order,
        opts.policy,
        opts,
        Targets {
            obs: p.obs.m4.clone(),
            int: p.intv.iter().map(|mi| mi.m4.clone()).collect(),
            kappa,
        },
        restart,
    )
}

struct Targets {
    obs: crate::cumulants::CumulantTensor4,
    int: Vec<crate::cumulants::CumulantTensor4>,
    kappa: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn finish(
    n: usize,
    c_hat: &DMatrix<f64>,
    aligned: Vec<DMatrix<f64>>,
    alignments: Vec<ColumnAlignment>,
    targets: &[usize],
    order: &[usize],
    policy: TriangularPolicy,
    opts: &RecoveryOptions,
    moments: Targets,
    restart: usize,
) -> Result<RecoveryResult> {
    let factors = rank1_differences(c_hat, &aligned, targets, opts.g_floor)?;
    let mut g_cols: Vec<Option<Vec<f64>>> = vec![None; n];
    for f in &factors {
        g_cols[f.target] = Some(f.g.clone());
    }
    let asm = assemble_ab(&g_cols, c_hat, order, policy)?;
    let problem = JointProblem {
        targets: targets.to_vec(),
        m4_obs: moments.obs,
        m4_int: moments.int,
        kappa: moments.kappa,
    };
    let init = JointState {
        a: asm.a_hat,
        b: asm.b_hat,
        c: c_hat.clone(),
        d: aligned,
    };
    let out = joint_refine(init, &problem, order, &opts.refine)?;
    Ok(RecoveryResult {
        a_hat: out.state.a,
        b_hat: out.state.b,
        causal_order: order.to_vec(),
        targets: targets.to_vec(),
        alignments,
        rank1_ratios: factors.iter().map(|f| f.ratio).collect(),
        objective_trace: out.trace,
        unidentified: asm.unidentified,
        triangular_flags: asm.zeroed,
        restart,
        metrics: None,
    })
}

/// Runs every restart and keeps the lowest final objective. Fails only if
/// every restart fails, with the first error.
pub fn recover_pipeline(
    obs: &Dataset,
    intvs: &[Dataset],
    m: usize,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    let prepared = prepare(obs, intvs, m, opts)?;
    let mut best: Option<RecoveryResult> = None;
    let mut first_err = None;
    for r in 0..opts.restarts.max(1) {
        match run_restart(&prepared, opts, r) {
            Ok(res) => {
                if best
                    .as_ref()
                    .is_none_or(|b| res.objective_final() < b.objective_final())
                {
                    best = Some(res);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one restart ran"))
}

/// Recovery from population matrices. `C` and every `D_i` receive a common
/// positive scale per latent, and each an independent random column
/// permutation and sign pattern, which the recovery has to undo.
pub fn recover_exact(
    model: &SemIcaModel,
    opts: &RecoveryOptions,
    seed: u64,
) -> Result<RecoveryResult> {
    let (n, m) = (model.n(), model.m());
    let c = model.reduced_mixing()?;
    let targets: Vec<usize> = match &opts.targets {
        Some(t) => {
            let mut t = t.clone();
            t.sort_unstable();
            t.dedup();
            if let Some(&bad) = t.iter().find(|&&x| x >= n) {
                return Err(Error::IndexOutOfRange { index: bad, len: n });
            }
            t
        }
        None => (0..n).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
    let scramble = |rng: &mut ChaCha8Rng, mat: &DMatrix<f64>| -> (DMatrix<f64>, Vec<usize>) {
        let mut perm: Vec<usize> = (0..m).collect();
        for k in (1..m).rev() {
            perm.swap(k, rng.random_range(0..=k));
        }
        let mut out = DMatrix::zeros(n, m);
        for (p, &src) in perm.iter().enumerate() {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            out.set_column(p, &(mat.column(src) * (sign * scales[src])));
        }
        (out, perm)
    };
    let (c_hat, c_perm) = scramble(&mut rng, &c);
    let kappa_of = |perm: &[usize]| -> Vec<f64> {
        perm.iter()
            .map(|&src| model.latent.kappa() / scales[src].powi(4))
            .collect()
    };
    let kappa = kappa_of(&c_perm);

    let mut d_hats = Vec::with_capacity(targets.len());
    let mut m4_int = Vec::with_capacity(targets.len());
    let mut effects = EffectMatrix::new(n);
    let scale_c = c.amax().max(f64::MIN_POSITIVE);
    for &t in &targets {
        let d = model.response_matrix(t)?;
        let diff = &c - &d;
        let flags: Vec<bool> = (0..n)
            .map(|r| diff.row(r).amax() > 1e-9 * scale_c)
            .collect();
        effects.set_column(t, &flags);
        let (scrambled, perm) = scramble(&mut rng, &d);
        m4_int.push(model_cumulant(&scrambled, &kappa_of(&perm))?);
        d_hats.push(scrambled);
    }
    let order = effects.order()?;
    let alignments = align_columns(&c_hat, &d_hats, &targets, &opts.align)?;
    let aligned = d_hats
        .iter()
        .zip(&alignments)
        .map(|(d, al)| al.apply(d))
        .collect::<Result<Vec<_>>>()?;

    let m4_obs = model_cumulant(&c_hat, &kappa)?;
    let policy = match opts.policy {
        TriangularPolicy::Exact(t) => TriangularPolicy::Exact(t),
        TriangularPolicy::Noisy(_) => TriangularPolicy::exact(),
    };
    finish(
        n,
        &c_hat,
        aligned,
        alignments,
        &targets,
        &order,
        policy,
        opts,
        Targets {
            obs: m4_obs,
            int: m4_int,
            kappa,
        },
        0,
    )
}
