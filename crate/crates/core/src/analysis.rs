//! Latent-space diagnostics: dumps of interface latents for plotting,
//! distances between the latents of different networks on shared states,
//! and a regression probe that asks how much a policy's last hidden layer
//! still knows about the scene.
//!
//! Everything here is pure over frozen policy snapshots; rollout
//! collection is seeded and deterministic.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::env::{forward_kinematics, PlanarEnv, TaskKind};
use crate::error::{Error, Result};
use crate::nn::{AdamHyper, AdamState, Mlp};
use crate::policy::Actor;
use crate::util::mix_seed;

/// Prediction counts as a hit when it lands within this distance of the
/// true position, in workspace units.
pub const EPS_REG: f64 = 0.05;

const PROBE_HIDDEN: usize = 64;
const PROBE_EPOCHS: usize = 500;
const PROBE_LR: f64 = 1e-2;

/// One recorded environment visit: the state the policy saw and the arm
/// tip position it never did.
struct Visit {
    task: Vec<f64>,
    robot: Vec<f64>,
    ee: (f64, f64),
}

/// Roll the policy out (sampled actions, seeded per episode) until
/// exactly `n_states` post-step states are recorded.
fn collect_visits(
    policy: &Actor,
    env: &PlanarEnv,
    n_states: usize,
    seed: u64,
) -> Result<Vec<Visit>> {
    if n_states == 0 {
        return Err(Error::usage("state collection needs at least one state"));
    }
    if policy.task_dim() != env.task_dim() || policy.robot_dim() != env.robot_dim() {
        return Err(Error::shape(format!(
            "policy expects {}+{} dims, environment provides {}+{}",
            policy.task_dim(),
            policy.robot_dim(),
            env.task_dim(),
            env.robot_dim()
        )));
    }
    let cache = policy.anchor_cache()?;
    let mut env = env.clone();
    let mut visits = Vec::with_capacity(n_states);
    let mut ep = 0u64;
    while visits.len() < n_states {
        let ep_seed = mix_seed(seed, ep);
        ep += 1;
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(ep_seed, 1));
        let mut state = env.reset(ep_seed);
        loop {
            let sample = policy.act_sample1(cache.as_ref(), &state.task, &state.robot, &mut rng)?;
            let out = env.step(&sample.action)?;
            let ee = forward_kinematics(&env.robot().link_lengths, env.angles());
            visits.push(Visit {
                task: out.state.task.clone(),
                robot: out.state.robot.clone(),
                ee,
            });
            state = out.state;
            if visits.len() == n_states || out.done {
                break;
            }
        }
    }
    Ok(visits)
}

/// Quadrant of the goal direction, counterclockwise from +x/+y.
fn goal_quadrant(task_state: &[f64]) -> u8 {
    let g = &task_state[task_state.len() - 2..];
    match (g[0] >= 0.0, g[1] >= 0.0) {
        (true, true) => 0,
        (false, true) => 1,
        (false, false) => 2,
        (true, false) => 3,
    }
}

/// Interface latents over visited task states, grouped by where the goal
/// points. Group labels follow goal-direction quadrants so plots of the
/// same environment are comparable across networks.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDump {
    pub env_id: String,
    pub task_states: Vec<Vec<f64>>,
    /// One latent per row, aligned with `task_states`.
    pub latents: Array2<f64>,
    /// Goal quadrant per row, 0..=3.
    pub groups: Vec<u8>,
}

impl LatentDump {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Comma-separated table: task state columns, latent columns, group.
    pub fn to_csv(&self) -> String {
        let d = self.task_states.first().map_or(0, |s| s.len());
        let l = self.latents.ncols();
        let mut out = String::new();
        for j in 0..d {
            let _ = write!(out, "s_t_{j},");
        }
        for j in 0..l {
            let _ = write!(out, "z_{j},");
        }
        out.push_str("group\n");
        for i in 0..self.len() {
            for v in &self.task_states[i] {
                let _ = write!(out, "{v},");
            }
            for j in 0..l {
                let _ = write!(out, "{},", self.latents[[i, j]]);
            }
            let _ = writeln!(out, "{}", self.groups[i]);
        }
        out
    }
}

/// Record the policy's interface latent at `n_states` visited states.
pub fn collect_latents(
    policy: &Actor,
    env: &PlanarEnv,
    n_states: usize,
    seed: u64,
) -> Result<LatentDump> {
    let visits = collect_visits(policy, env, n_states, seed)?;
    let d = env.task_dim();
    let mut flat = Vec::with_capacity(n_states * d);
    for v in &visits {
        flat.extend_from_slice(&v.task);
    }
    let states = Array2::from_shape_vec((n_states, d), flat).expect("uniform task dims");
    let latents = policy.interface_latent(states.view())?;
    let groups = visits.iter().map(|v| goal_quadrant(&v.task)).collect();
    Ok(LatentDump {
        env_id: env.id().to_string(),
        task_states: visits.into_iter().map(|v| v.task).collect(),
        latents,
        groups,
    })
}

/// A principal-component projection with its loadings.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// Projected data, n x out_dims.
    pub y: Array2<f64>,
    /// Principal axes as rows, out_dims x d, in the original feature space.
    pub axes: Array2<f64>,
    /// Fraction of total variance per kept component. `None` when the
    /// input had no variance at all, in which case `y` is zero.
    pub explained: Option<Vec<f64>>,
}

/// Center `x` and project it onto its leading principal axes.
///
/// Axis signs are fixed by making each axis's largest-magnitude component
/// positive, so repeated runs produce identical dumps.
pub fn pca_project(x: ArrayView2<f64>, out_dims: usize) -> Result<PcaProjection> {
    let (n, d) = x.dim();
    if out_dims == 0 || out_dims > d {
        return Err(Error::config(format!(
            "cannot keep {out_dims} of {d} dimensions"
        )));
    }
    if n <= out_dims {
        return Err(Error::usage(format!(
            "projection needs more than {out_dims} rows, got {n}"
        )));
    }
    let mut centered = x.to_owned();
    for j in 0..d {
        let mean = centered.column(j).sum() / n as f64;
        centered.column_mut(j).mapv_inplace(|v| v - mean);
    }
    let total_var: f64 = centered.iter().map(|v| v * v).sum();
    if total_var == 0.0 {
        return Ok(PcaProjection {
            y: Array2::zeros((n, out_dims)),
            axes: Array2::zeros((out_dims, d)),
            explained: None,
        });
    }

    let m = DMatrix::from_row_iterator(n, d, centered.iter().copied());
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let sigma = svd.singular_values;

    let mut axes = Array2::zeros((out_dims, d));
    for k in 0..out_dims {
        let mut axis: Vec<f64> = (0..d).map(|j| vt[(k, j)]).collect();
        let lead = axis
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        if axis[lead] < 0.0 {
            for v in &mut axis {
                *v = -*v;
            }
        }
        for j in 0..d {
            axes[[k, j]] = axis[j];
        }
    }
    let y = centered.dot(&axes.t());
    let sum_sq: f64 = sigma.iter().map(|s| s * s).sum();
    let explained = (0..out_dims).map(|k| sigma[k] * sigma[k] / sum_sq).collect();
    Ok(PcaProjection {
        y,
        axes,
        explained: Some(explained),
    })
}

/// Mean distances between two latent maps evaluated on the same states.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    /// Mean of 1 - cosine similarity; 0 for identical directions, 2 for
    /// opposite ones.
    pub d_cos: f64,
    /// Mean euclidean distance.
    pub d_l2: f64,
    pub n_states: usize,
}

impl fmt::Display for DistanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "latent distance over {} states", self.n_states)?;
        writeln!(f, "  cosine  {:.6}", self.d_cos)?;
        write!(f, "  l2      {:.6}", self.d_l2)
    }
}

/// Distances between two latent matrices, row for row.
pub fn latent_distances(za: ArrayView2<f64>, zb: ArrayView2<f64>) -> Result<DistanceReport> {
    if za.dim() != zb.dim() {
        return Err(Error::shape(format!(
            "latent shapes differ: {:?} vs {:?}",
            za.dim(),
            zb.dim()
        )));
    }
    let n = za.nrows();
    if n == 0 {
        return Err(Error::usage("distance needs at least one state"));
    }
    let mut sum_cos = 0.0;
    let mut sum_l2 = 0.0;
    for i in 0..n {
        let a = za.row(i);
        let b = zb.row(i);
        let na = a.dot(&a).sqrt();
        let nb = b.dot(&b).sqrt();
        let sim = if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            a.dot(&b) / (na * nb)
        };
        sum_cos += 1.0 - sim;
        let mut d2 = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            d2 += (x - y) * (x - y);
        }
        sum_l2 += d2.sqrt();
    }
    Ok(DistanceReport {
        d_cos: sum_cos / n as f64,
        d_l2: sum_l2 / n as f64,
        n_states: n,
    })
}

/// Distances between two policies' interface latents on shared states.
pub fn pairwise_distances(
    a: &Actor,
    b: &Actor,
    states: ArrayView2<f64>,
) -> Result<DistanceReport> {
    let za = a.interface_latent(states)?;
    let zb = b.interface_latent(states)?;
    latent_distances(za.view(), zb.view())
}

/// Symmetric distance matrices over several policies, zero on the
/// diagonal.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    pub cos: Array2<f64>,
    pub l2: Array2<f64>,
    pub n_states: usize,
}

pub fn distance_matrix(policies: &[&Actor], states: ArrayView2<f64>) -> Result<DistanceMatrix> {
    if policies.len() < 2 {
        return Err(Error::usage("matrix needs at least two policies"));
    }
    let k = policies.len();
    let latents: Vec<Array2<f64>> = policies
        .iter()
        .map(|p| p.interface_latent(states))
        .collect::<Result<_>>()?;
    let mut cos = Array2::zeros((k, k));
    let mut l2 = Array2::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let r = latent_distances(latents[i].view(), latents[j].view())?;
            cos[[i, j]] = r.d_cos;
            cos[[j, i]] = r.d_cos;
            l2[[i, j]] = r.d_l2;
            l2[[j, i]] = r.d_l2;
        }
    }
    Ok(DistanceMatrix {
        cos,
        l2,
        n_states: states.nrows(),
    })
}

/// Fit quality of one probed quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetReport {
    pub target: String,
    pub r2: f64,
    /// Fraction of test predictions within `eps` of the label.
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionReport {
    pub targets: Vec<TargetReport>,
    pub n_train: usize,
    pub n_test: usize,
    pub eps: f64,
}

impl fmt::Display for RegressionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "regression probe: {} train / {} test, hit radius {}",
            self.n_train, self.n_test, self.eps
        )?;
        for t in &self.targets {
            writeln!(
                f,
                "  {:<8} r2 {:+.4}  within-eps {:.3}",
                t.target, t.r2, t.success_rate
            )?;
        }
        Ok(())
    }
}

/// Train a small position regressor on an 80/20 split and score it on
/// the held-out fifth.
pub fn fit_position_probe(
    features: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    eps: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = features.nrows();
    if n < 10 {
        return Err(Error::usage(format!(
            "probe needs at least 10 points, got {n}"
        )));
    }
    if labels.nrows() != n {
        return Err(Error::shape("features and labels disagree on row count"));
    }
    let d = features.ncols();
    let out = labels.ncols();

    let mut idx: Vec<usize> = (0..n).collect();
    let mut split_rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0xA));
    idx.shuffle(&mut split_rng);
    let n_train = n * 4 / 5;
    let gather = |rows: &[usize], src: ArrayView2<f64>| {
        let mut m = Array2::zeros((rows.len(), src.ncols()));
        for (r, &i) in rows.iter().enumerate() {
            m.row_mut(r).assign(&src.row(i));
        }
        m
    };
    let x_train = gather(&idx[..n_train], features);
    let t_train = gather(&idx[..n_train], labels);
    let x_test = gather(&idx[n_train..], features);
    let t_test = gather(&idx[n_train..], labels);

    let mut net_rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0xB));
    let mut net = Mlp::feedforward(d, &[PROBE_HIDDEN, PROBE_HIDDEN], out, &mut net_rng)?;
    let mut opt = AdamState::new(net.n_params(), AdamHyper::with_lr(PROBE_LR));
    for epoch in 0..PROBE_EPOCHS {
        // cosine-annealed rate: fast early progress, fine late convergence
        let frac = epoch as f64 / PROBE_EPOCHS as f64;
        opt.hyper.lr = PROBE_LR * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        let (pred, tape) = net.forward_tape(x_train.view())?;
        let dy = (&pred - &t_train) * (2.0 / n_train as f64);
        let (grads, _) = net.backward(tape, dy.view())?;
        net.adam_update(&grads, &mut opt)?;
    }

    let pred = net.forward(x_test.view())?;
    let n_test = n - n_train;
    let mut ss_res = 0.0;
    let mut hits = 0usize;
    for i in 0..n_test {
        let mut e2 = 0.0;
        for j in 0..out {
            let e = pred[[i, j]] - t_test[[i, j]];
            e2 += e * e;
        }
        ss_res += e2;
        if e2.sqrt() <= eps {
            hits += 1;
        }
    }
    let mut ss_tot = 0.0;
    for j in 0..out {
        let mean = t_test.column(j).sum() / n_test as f64;
        for i in 0..n_test {
            let e = t_test[[i, j]] - mean;
            ss_tot += e * e;
        }
    }
    if ss_tot == 0.0 {
        return Err(Error::usage("test labels carry no variance to explain"));
    }
    Ok((1.0 - ss_res / ss_tot, hits as f64 / n_test as f64))
}

/// Roll the policy out, read its last hidden layer at every visited
/// state, and regress scene positions from it. The end-effector label
/// comes from the arm geometry and is never part of any policy input;
/// the object label only exists on push tasks.
pub fn regression_probe(
    policy: &Actor,
    env: &PlanarEnv,
    n_points: usize,
    seed: u64,
) -> Result<RegressionReport> {
    let visits = collect_visits(policy, env, n_points, mix_seed(seed, 0xC))?;
    let mut feat = Vec::new();
    for v in &visits {
        feat.extend_from_slice(&policy.probe_latent1(&v.task, &v.robot)?);
    }
    let width = feat.len() / n_points;
    let features = Array2::from_shape_vec((n_points, width), feat).expect("uniform latent width");

    let pick = |f: &dyn Fn(&Visit) -> [f64; 2]| {
        let mut m = Array2::zeros((n_points, 2));
        for (i, v) in visits.iter().enumerate() {
            let row = f(v);
            m[[i, 0]] = row[0];
            m[[i, 1]] = row[1];
        }
        m
    };
    let mut jobs: Vec<(&str, Array2<f64>)> = Vec::new();
    if env.kind() == TaskKind::Push {
        jobs.push(("object", pick(&|v: &Visit| [v.task[0], v.task[1]])));
    }
    jobs.push((
        "goal",
        pick(&|v: &Visit| {
            let g = &v.task[v.task.len() - 2..];
            [g[0], g[1]]
        }),
    ));
    jobs.push(("ee", pick(&|v: &Visit| [v.ee.0, v.ee.1])));

    let n_train = n_points * 4 / 5;
    let mut targets = Vec::with_capacity(jobs.len());
    for (i, (name, labels)) in jobs.iter().enumerate() {
        let (r2, success_rate) =
            fit_position_probe(features.view(), labels.view(), EPS_REG, mix_seed(seed, i as u64))?;
        targets.push(TargetReport {
            target: name.to_string(),
            r2,
            success_rate,
        });
    }
    Ok(RegressionReport {
        targets,
        n_train,
        n_test: n_points - n_train,
        eps: EPS_REG,
    })
}
