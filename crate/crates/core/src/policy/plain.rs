//! Plain baseline: one undivided network over the concatenated task and
//! robot state. A declared split layer marks where the net is cut when its
//! halves are exchanged with another plain policy; the layer index counts
//! whole affine layers from the input.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads, Tape};
use crate::policy::actor::{concat_cols2, concat_cols3, join_head_grads, split_heads};
use crate::policy::sample::{LOG_STD_MAX, LOG_STD_MIN};

/// Split point for a net with `n_hidden` hidden layers: after hidden layer
/// ceil(n_hidden / 2), counted in affine layers from the input.
pub fn default_split(n_hidden: usize) -> usize {
    n_hidden.div_ceil(2)
}

fn check_split(split: usize, n_layers: usize) -> Result<()> {
    if split == 0 || split >= n_layers {
        return Err(Error::config(format!(
            "split layer {split} is not strictly inside a {n_layers}-layer net"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PlainActor {
    pub net: Mlp,
    pub split: usize,
    task_dim: usize,
    robot_dim: usize,
    n_action: usize,
}

#[derive(Debug)]
pub struct PlainActorPass {
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
    clamp_mask: Array2<f64>,
    tape: Tape,
}

impl PlainActor {
    pub fn new<R: Rng>(
        task_dim: usize,
        robot_dim: usize,
        n_action: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::config("plain net needs at least one hidden layer"));
        }
        let net = Mlp::feedforward(task_dim + robot_dim, hidden, 2 * n_action, rng)?;
        let split = default_split(hidden.len());
        check_split(split, hidden.len() + 1)?;
        Ok(Self {
            net,
            split,
            task_dim,
            robot_dim,
            n_action,
        })
    }

    pub fn from_parts(
        net: Mlp,
        split: usize,
        task_dim: usize,
        robot_dim: usize,
        n_action: usize,
    ) -> Result<Self> {
        if net.in_dim() != task_dim + robot_dim {
            return Err(Error::shape("net input width mismatch"));
        }
        if net.out_dim() != 2 * n_action {
            return Err(Error::shape("net must emit mean and log_std"));
        }
        check_split(split, net.n_layers())?;
        Ok(Self {
            net,
            split,
            task_dim,
            robot_dim,
            n_action,
        })
    }

    pub fn task_dim(&self) -> usize {
        self.task_dim
    }

    pub fn robot_dim(&self) -> usize {
        self.robot_dim
    }

    pub fn n_action(&self) -> usize {
        self.n_action
    }

    fn concat_batch(&self, s_t: ArrayView2<f64>, s_r: ArrayView2<f64>) -> Result<Array2<f64>> {
        if s_t.ncols() != self.task_dim || s_r.ncols() != self.robot_dim {
            return Err(Error::shape("state dims do not match the plain net"));
        }
        if s_t.nrows() != s_r.nrows() {
            return Err(Error::shape("task and robot batches differ in length"));
        }
        Ok(concat_cols2(s_t, s_r))
    }

    pub fn forward_train(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
    ) -> Result<PlainActorPass> {
        let x = self.concat_batch(s_t, s_r)?;
        let (out, tape) = self.net.forward_tape(x.view())?;
        let (mean, log_std, clamp_mask) = split_heads(&out, self.n_action);
        Ok(PlainActorPass {
            mean,
            log_std,
            clamp_mask,
            tape,
        })
    }

    pub fn backward(
        &self,
        pass: PlainActorPass,
        d_mean: ArrayView2<f64>,
        d_log_std: ArrayView2<f64>,
    ) -> Result<MlpGrads> {
        let d_out = join_head_grads(d_mean, d_log_std, &pass.clamp_mask)?;
        let (grads, _) = self.net.backward(pass.tape, d_out.view())?;
        Ok(grads)
    }

    pub fn heads(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let x = self.concat_batch(s_t, s_r)?;
        let out = self.net.forward(x.view())?;
        let (mean, log_std, _) = split_heads(&out, self.n_action);
        Ok((mean, log_std))
    }

    pub fn heads1(&self, s_t: &[f64], s_r: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if s_t.len() != self.task_dim || s_r.len() != self.robot_dim {
            return Err(Error::shape("state dims do not match the plain net"));
        }
        let mut x = s_t.to_vec();
        x.extend_from_slice(s_r);
        let out = self.net.forward1(&x)?;
        let mean = out[..self.n_action].to_vec();
        let log_std: Vec<f64> = out[self.n_action..]
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok((mean, log_std))
    }

    pub fn probe_latent1(&self, s_t: &[f64], s_r: &[f64]) -> Result<Vec<f64>> {
        let mut x = s_t.to_vec();
        x.extend_from_slice(s_r);
        let (_, hidden) = self.net.forward1_hidden(&x)?;
        Ok(hidden)
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.net.params_flat()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params_flat(params)
    }
}

#[derive(Debug, Clone)]
pub struct PlainCritic {
    pub net: Mlp,
    pub split: usize,
    task_dim: usize,
    robot_dim: usize,
    n_action: usize,
}

#[derive(Debug)]
pub struct PlainCriticPass {
    pub q: Array1<f64>,
    tape: Tape,
}

impl PlainCritic {
    pub fn new<R: Rng>(
        task_dim: usize,
        robot_dim: usize,
        n_action: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::config("plain net needs at least one hidden layer"));
        }
        let net = Mlp::feedforward(task_dim + robot_dim + n_action, hidden, 1, rng)?;
        let split = default_split(hidden.len());
        check_split(split, hidden.len() + 1)?;
        Ok(Self {
            net,
            split,
            task_dim,
            robot_dim,
            n_action,
        })
    }

    pub fn from_parts(
        net: Mlp,
        split: usize,
        task_dim: usize,
        robot_dim: usize,
        n_action: usize,
    ) -> Result<Self> {
        if net.in_dim() != task_dim + robot_dim + n_action {
            return Err(Error::shape("net input width mismatch"));
        }
        if net.out_dim() != 1 {
            return Err(Error::shape("critic net must emit a scalar"));
        }
        check_split(split, net.n_layers())?;
        Ok(Self {
            net,
            split,
            task_dim,
            robot_dim,
            n_action,
        })
    }

    pub fn task_dim(&self) -> usize {
        self.task_dim
    }

    pub fn robot_dim(&self) -> usize {
        self.robot_dim
    }

    pub fn n_action(&self) -> usize {
        self.n_action
    }

    fn concat_batch(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
        a: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if s_t.ncols() != self.task_dim
            || s_r.ncols() != self.robot_dim
            || a.ncols() != self.n_action
        {
            return Err(Error::shape("critic input widths do not match"));
        }
        if s_t.nrows() != s_r.nrows() || s_t.nrows() != a.nrows() {
            return Err(Error::shape("critic batch lengths differ"));
        }
        Ok(concat_cols3(s_t, s_r, a))
    }

    pub fn forward_train(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
        a: ArrayView2<f64>,
    ) -> Result<PlainCriticPass> {
        let x = self.concat_batch(s_t, s_r, a)?;
        let (out, tape) = self.net.forward_tape(x.view())?;
        Ok(PlainCriticPass {
            q: out.column(0).to_owned(),
            tape,
        })
    }

    pub fn backward(
        &self,
        pass: PlainCriticPass,
        d_q: &Array1<f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        if d_q.len() != pass.q.len() {
            return Err(Error::shape("value gradient length mismatch"));
        }
        let d_out = d_q.view().insert_axis(Axis(1)).to_owned();
        let (grads, d_x) = self.net.backward(pass.tape, d_out.view())?;
        let d_action = d_x
            .slice(s![.., self.task_dim + self.robot_dim..])
            .to_owned();
        Ok((grads, d_action))
    }

    pub fn q_values(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
        a: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let x = self.concat_batch(s_t, s_r, a)?;
        let out = self.net.forward(x.view())?;
        Ok(out.column(0).to_owned())
    }

    pub fn polyak_from(&mut self, online: &Self, tau: f64) -> Result<()> {
        self.net.polyak_from(&online.net, tau)
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.net.params_flat()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params_flat(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn forward_is_the_bare_net_on_the_concatenation() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let actor = PlainActor::new(2, 3, 2, &[8, 8], &mut rng).unwrap();
        let s_t = array![[0.3, -0.6]];
        let s_r = array![[0.1, 0.5, -0.2]];
        let (mean, _) = actor.heads(s_t.view(), s_r.view()).unwrap();
        let direct = actor
            .net
            .forward(array![[0.3, -0.6, 0.1, 0.5, -0.2]].view())
            .unwrap();
        assert_eq!(mean[(0, 0)], direct[(0, 0)]);
        assert_eq!(mean[(0, 1)], direct[(0, 1)]);
    }

    #[test]
    fn split_sits_in_the_middle_by_default() {
        let mut rng = ChaCha12Rng::seed_from_u64(32);
        assert_eq!(PlainActor::new(2, 2, 1, &[8], &mut rng).unwrap().split, 1);
        assert_eq!(PlainActor::new(2, 2, 1, &[8, 8], &mut rng).unwrap().split, 1);
        assert_eq!(
            PlainActor::new(2, 2, 1, &[8, 8, 8], &mut rng).unwrap().split,
            2
        );
        assert_eq!(
            PlainActor::new(2, 2, 1, &[8, 8, 8, 8], &mut rng).unwrap().split,
            2
        );
    }

    #[test]
    fn interior_split_is_enforced() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let actor = PlainActor::new(2, 2, 1, &[8, 8], &mut rng).unwrap();
        assert!(PlainActor::from_parts(actor.net.clone(), 0, 2, 2, 1).is_err());
        assert!(PlainActor::from_parts(actor.net.clone(), 3, 2, 2, 1).is_err());
        assert!(PlainActor::from_parts(actor.net.clone(), 1, 2, 2, 1).is_ok());
        assert!(PlainActor::new(2, 2, 1, &[], &mut rng).is_err());
    }

    #[test]
    fn actor_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(34);
        let mut actor = PlainActor::new(2, 2, 1, &[6], &mut rng).unwrap();
        let s_t = array![[0.3, -0.6], [0.9, 0.2]];
        let s_r = array![[0.1, 0.5], [-0.4, 0.7]];
        let w_mean = array![[0.7], [-0.3]];
        let w_std = array![[0.4], [0.9]];
        let loss = |a: &PlainActor| {
            let (mean, log_std) = a.heads(s_t.view(), s_r.view()).unwrap();
            (&mean * &w_mean).sum() + (&log_std * &w_std).sum()
        };
        let pass = actor.forward_train(s_t.view(), s_r.view()).unwrap();
        let grads = actor.backward(pass, w_mean.view(), w_std.view()).unwrap();
        let flat = grads.flat();
        let params = actor.params_flat();
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            actor.set_params_flat(&p).unwrap();
            let up = loss(&actor);
            p[i] -= 2.0 * h;
            actor.set_params_flat(&p).unwrap();
            let down = loss(&actor);
            let fd = (up - down) / (2.0 * h);
            let denom = flat[i].abs().max(fd.abs()).max(1e-5);
            assert!((flat[i] - fd).abs() / denom < 1e-4, "param {i}");
        }
    }

    #[test]
    fn critic_action_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(35);
        let critic = PlainCritic::new(2, 2, 2, &[6], &mut rng).unwrap();
        let s_t = array![[0.3, -0.6]];
        let s_r = array![[0.1, 0.5]];
        let a = array![[0.2, -0.9]];
        let w = Array1::from(vec![1.0]);
        let pass = critic
            .forward_train(s_t.view(), s_r.view(), a.view())
            .unwrap();
        let (_, d_action) = critic.backward(pass, &w).unwrap();
        let h = 1e-6;
        for c in 0..2 {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[(0, c)] += h;
            am[(0, c)] -= h;
            let up = critic.q_values(s_t.view(), s_r.view(), ap.view()).unwrap()[0];
            let down = critic.q_values(s_t.view(), s_r.view(), am.view()).unwrap()[0];
            let fd = (up - down) / (2.0 * h);
            let an = d_action[(0, c)];
            let denom = an.abs().max(fd.abs()).max(1e-5);
            assert!((an - fd).abs() / denom < 1e-4, "action[{c}]");
        }
    }
}
