//! Anchor selection: roll out trained policies to gather task states,
//! cluster them with k-means, and keep the corpus state nearest each
//! centroid. The resulting [`AnchorSet`] is what relative interfaces score
//! against, so everything here is deterministic per seed.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::env::PlanarEnv;
use crate::error::{Error, Result};
use crate::policy::Actor;
use crate::util::mix_seed;

/// Task states gathered from rollouts, each remembering which source
/// produced it.
#[derive(Debug, Clone)]
pub struct StateCorpus {
    states: Vec<Vec<f64>>,
    tags: Vec<String>,
    dim: usize,
}

impl StateCorpus {
    pub fn from_states(states: Vec<Vec<f64>>, tag: &str) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::config("state corpus cannot be empty"));
        }
        let dim = states[0].len();
        if states.iter().any(|s| s.len() != dim) {
            return Err(Error::shape("corpus states differ in dimension"));
        }
        let tags = vec![tag.to_string(); states.len()];
        Ok(Self { states, tags, dim })
    }

    /// Append another corpus, keeping both orderings and their tags.
    pub fn merge(mut self, other: StateCorpus) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::shape(format!(
                "cannot merge {}-dim corpus into {}-dim corpus",
                other.dim, self.dim
            )));
        }
        self.states.extend(other.states);
        self.tags.extend(other.tags);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn tag(&self, i: usize) -> &str {
        &self.tags[i]
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        let flat: Vec<f64> = self.states.iter().flatten().copied().collect();
        Array2::from_shape_vec((self.len(), self.dim), flat).unwrap()
    }

    /// Subsample every tag group down to the smallest group's size so no
    /// source dominates the clustering. Kept states preserve their order.
    pub fn balanced_by_tag(&self, seed: u64) -> StateCorpus {
        use std::collections::BTreeMap;
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, t) in self.tags.iter().enumerate() {
            groups.entry(t).or_default().push(i);
        }
        let target = groups.values().map(|v| v.len()).min().unwrap_or(0);
        let mut keep: Vec<usize> = Vec::new();
        for (gi, idxs) in groups.values().enumerate() {
            let mut idxs = idxs.clone();
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, gi as u64));
            // partial Fisher-Yates: the first `target` entries are a
            // uniform sample without replacement
            for i in 0..target.min(idxs.len().saturating_sub(1)) {
                let j = rng.gen_range(i..idxs.len());
                idxs.swap(i, j);
            }
            keep.extend(idxs.into_iter().take(target));
        }
        keep.sort_unstable();
        StateCorpus {
            states: keep.iter().map(|&i| self.states[i].clone()).collect(),
            tags: keep.iter().map(|&i| self.tags[i].clone()).collect(),
            dim: self.dim,
        }
    }
}

/// Roll out a policy and record the task state after every step. Actions
/// are sampled from the policy head; per-episode seeds derive from `seed`.
pub fn collect_states(
    policy: &Actor,
    env: &PlanarEnv,
    n_episodes: usize,
    seed: u64,
) -> Result<StateCorpus> {
    if n_episodes == 0 {
        return Err(Error::config("state collection needs at least one episode"));
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
    let mut states = Vec::new();
    let mut env = env.clone();
    for ep in 0..n_episodes {
        let ep_seed = mix_seed(seed, ep as u64);
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(ep_seed, 1));
        let mut state = env.reset(ep_seed);
        loop {
            let sample =
                policy.act_sample1(cache.as_ref(), &state.task, &state.robot, &mut rng)?;
            let outcome = env.step(&sample.action)?;
            states.push(outcome.state.task.clone());
            state = outcome.state;
            if outcome.done {
                break;
            }
        }
    }
    StateCorpus::from_states(states, env.id())
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITERS: usize = 300;

/// Lloyd's algorithm with k-means++ seeding, best of ten restarts. Empty
/// clusters are reseeded to the point farthest from its current centroid.
pub fn kmeans(
    points: ArrayView2<f64>,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::config("k must be positive"));
    }
    let distinct = count_distinct(points);
    if k > distinct {
        return Err(Error::config(format!(
            "k={k} exceeds the {distinct} distinct points"
        )));
    }
    let mut best: Option<KMeansResult> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, restart as u64));
        let mut centroids = plus_plus_init(points, k, &mut rng);
        let mut assignments = vec![0usize; n];
        for _ in 0..max_iters {
            let (next, _) = assign(points, centroids.view());
            update_centroids(points, &next, &mut centroids);
            repair_empty_clusters(points, &next, &mut centroids);
            let done = next == assignments;
            assignments = next;
            if done {
                break;
            }
        }
        // final consistency pass so the result is at a fixpoint
        let (assignments, inertia) = assign(points, centroids.view());
        if best.as_ref().map_or(true, |b| inertia < b.inertia) {
            best = Some(KMeansResult {
                centroids: centroids.clone(),
                assignments,
                inertia,
            });
        }
    }
    Ok(best.unwrap())
}

fn count_distinct(points: ArrayView2<f64>) -> usize {
    let mut seen: Vec<Vec<f64>> = Vec::new();
    for row in points.rows() {
        let v = row.to_vec();
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    seen.len()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
    let n = points.nrows();
    let d = points.ncols();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut dist2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i).as_slice().unwrap(), centroids.row(0).as_slice().unwrap()))
        .collect();
    for c in 1..k {
        let total: f64 = dist2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in dist2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(chosen));
        for i in 0..n {
            let nd = sq_dist(
                points.row(i).as_slice().unwrap(),
                centroids.row(c).as_slice().unwrap(),
            );
            if nd < dist2[i] {
                dist2[i] = nd;
            }
        }
    }
    centroids
}

fn assign(points: ArrayView2<f64>, centroids: ArrayView2<f64>) -> (Vec<usize>, f64) {
    let mut assignments = Vec::with_capacity(points.nrows());
    let mut inertia = 0.0;
    for row in points.rows() {
        let p = row.as_slice().unwrap();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, crow) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(p, crow.as_slice().unwrap());
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignments.push(best);
        inertia += best_d;
    }
    (assignments, inertia)
}

fn update_centroids(points: ArrayView2<f64>, assignments: &[usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let d = centroids.ncols();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for j in 0..d {
            sums[(a, j)] += points[(i, j)];
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..d {
                centroids[(c, j)] = sums[(c, j)] / counts[c] as f64;
            }
        }
    }
}

fn repair_empty_clusters(
    points: ArrayView2<f64>,
    assignments: &[usize],
    centroids: &mut Array2<f64>,
) {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    for &a in assignments {
        counts[a] += 1;
    }
    for c in 0..k {
        if counts[c] == 0 {
            // reseed to the point currently worst served by its centroid
            let mut worst = 0;
            let mut worst_d = -1.0;
            for (i, &a) in assignments.iter().enumerate() {
                let d = sq_dist(
                    points.row(i).as_slice().unwrap(),
                    centroids.row(a).as_slice().unwrap(),
                );
                if d > worst_d {
                    worst_d = d;
                    worst = i;
                }
            }
            centroids.row_mut(c).assign(&points.row(worst));
        }
    }
}

use crate::policy::AnchorSet;

/// For each centroid pick the corpus state nearest to it; a state already
/// taken (by value) falls through to the next nearest. Ties break toward
/// the lower corpus index.
pub fn select_anchors(corpus: &StateCorpus, centroids: ArrayView2<f64>) -> Result<AnchorSet> {
    if centroids.ncols() != corpus.dim() {
        return Err(Error::shape("centroid dimension differs from the corpus"));
    }
    let k = centroids.nrows();
    let distinct = {
        let m = corpus.to_matrix();
        count_distinct(m.view())
    };
    if distinct < k {
        return Err(Error::config(format!(
            "{k} centroids but only {distinct} distinct corpus states"
        )));
    }
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(k);
    for crow in centroids.rows() {
        let c = crow.as_slice().unwrap();
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.sort_by(|&a, &b| {
            sq_dist(corpus.state(a), c)
                .partial_cmp(&sq_dist(corpus.state(b), c))
                .unwrap()
                .then(a.cmp(&b))
        });
        let next = order
            .into_iter()
            .map(|i| corpus.state(i).to_vec())
            .find(|s| !chosen.contains(s))
            .expect("distinct count was checked");
        chosen.push(next);
    }
    AnchorSet::new(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::make_env;
    use crate::policy::{ArchDesc, Alignment, ModuleDims};
    use ndarray::array;

    fn untrained_policy(env: &PlanarEnv) -> Actor {
        let dims = ModuleDims {
            task_dim: env.task_dim(),
            robot_dim: env.robot_dim(),
            n_action: env.action_dim(),
            latent: 3,
            task_hidden: vec![8],
            robot_hidden: vec![8],
        };
        let desc = ArchDesc::modular(&dims, Alignment::None, 0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        desc.build_actor(None, &mut rng).unwrap()
    }

    #[test]
    fn collection_counts_steps_not_resets() {
        let env = make_env("reach-r2").unwrap();
        let policy = untrained_policy(&env);
        let corpus = collect_states(&policy, &env, 2, 11).unwrap();
        // an untrained policy essentially never reaches the goal, so both
        // episodes run the full length
        assert_eq!(corpus.len(), 2 * env.episode_length());
        assert_eq!(corpus.dim(), env.task_dim());
        assert_eq!(corpus.tag(0), "reach-r2");
    }

    #[test]
    fn collection_is_deterministic_per_seed() {
        let env = make_env("reach-r2").unwrap();
        let policy = untrained_policy(&env);
        let a = collect_states(&policy, &env, 2, 5).unwrap();
        let b = collect_states(&policy, &env, 2, 5).unwrap();
        assert_eq!(a.to_matrix(), b.to_matrix());
        let c = collect_states(&policy, &env, 2, 6).unwrap();
        assert_ne!(a.to_matrix(), c.to_matrix());
    }

    #[test]
    fn merge_preserves_order_and_tags() {
        let a = StateCorpus::from_states(vec![vec![1.0, 0.0], vec![2.0, 0.0]], "one").unwrap();
        let b = StateCorpus::from_states(vec![vec![3.0, 0.0]], "two").unwrap();
        let m = a.merge(b).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.state(1), &[2.0, 0.0]);
        assert_eq!(m.tag(2), "two");
        let bad = StateCorpus::from_states(vec![vec![1.0, 2.0, 3.0]], "three").unwrap();
        assert!(m.merge(bad).is_err());
    }

    #[test]
    fn balancing_subsamples_the_larger_source() {
        let a = StateCorpus::from_states(
            (0..10).map(|i| vec![i as f64, 0.0]).collect(),
            "big",
        )
        .unwrap();
        let b = StateCorpus::from_states(
            (0..4).map(|i| vec![0.0, i as f64]).collect(),
            "small",
        )
        .unwrap();
        let merged = a.merge(b).unwrap();
        let bal = merged.balanced_by_tag(3);
        assert_eq!(bal.len(), 8);
        let big = (0..bal.len()).filter(|&i| bal.tag(i) == "big").count();
        assert_eq!(big, 4);
        // determinism
        let again = merged.balanced_by_tag(3);
        assert_eq!(bal.to_matrix(), again.to_matrix());
    }

    #[test]
    fn one_cluster_centroid_is_the_mean() {
        let pts = array![[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]];
        let r = kmeans(pts.view(), 1, 0, KMEANS_MAX_ITERS).unwrap();
        assert!((r.centroids[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((r.centroids[(0, 1)] - 2.0).abs() < 1e-12);
        assert_eq!(r.assignments, vec![0, 0, 0]);
    }

    #[test]
    fn cluster_per_distinct_point_reaches_zero_inertia() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let r = kmeans(pts.view(), 3, 1, KMEANS_MAX_ITERS).unwrap();
        assert!(r.inertia < 1e-18, "inertia {}", r.inertia);
        assert!(kmeans(pts.view(), 4, 1, KMEANS_MAX_ITERS).is_err());
    }

    /// Exhaustive assignment search; feasible for tiny instances only.
    fn brute_force_inertia(points: ArrayView2<f64>, k: usize) -> f64 {
        let n = points.nrows();
        let d = points.ncols();
        let mut best = f64::INFINITY;
        let mut assign = vec![0usize; n];
        loop {
            let mut sums = vec![vec![0.0; d]; k];
            let mut counts = vec![0usize; k];
            for (i, &a) in assign.iter().enumerate() {
                counts[a] += 1;
                for j in 0..d {
                    sums[a][j] += points[(i, j)];
                }
            }
            let mut inertia = 0.0;
            for (i, &a) in assign.iter().enumerate() {
                for j in 0..d {
                    let c = sums[a][j] / counts[a] as f64;
                    inertia += (points[(i, j)] - c) * (points[(i, j)] - c);
                }
            }
            best = best.min(inertia);
            // next assignment in base-k
            let mut pos = 0;
            loop {
                if pos == n {
                    return best;
                }
                assign[pos] += 1;
                if assign[pos] < k {
                    break;
                }
                assign[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn unit_square_corners_split_optimally() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let r = kmeans(pts.view(), 2, 9, KMEANS_MAX_ITERS).unwrap();
        let oracle = brute_force_inertia(pts.view(), 2);
        assert!((r.inertia - oracle).abs() < 1e-12, "{} vs {oracle}", r.inertia);
        // optimal value: two side-pairings, each cluster variance 2 * 0.25
        assert!((oracle - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_random_instances_match_the_exhaustive_optimum() {
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for case in 0..20 {
            let n = 4 + (case % 5);
            let k = 2 + (case % 2);
            let mut flat = Vec::with_capacity(n * 2);
            for _ in 0..n * 2 {
                flat.push(rng.gen_range(-1.0..1.0));
            }
            let pts = Array2::from_shape_vec((n, 2), flat).unwrap();
            let r = kmeans(pts.view(), k, case as u64, KMEANS_MAX_ITERS).unwrap();
            let oracle = brute_force_inertia(pts.view(), k);
            assert!(
                r.inertia <= oracle + 1e-9,
                "case {case}: {} vs {oracle}",
                r.inertia
            );
            assert!(
                (r.inertia - oracle).abs() < 1e-9,
                "case {case}: {} vs {oracle}",
                r.inertia
            );
        }
    }

    #[test]
    fn anchors_are_corpus_members_nearest_their_centroids() {
        let corpus = StateCorpus::from_states(
            vec![
                vec![0.0, 0.0],
                vec![1.0, 1.0],
                vec![4.0, 4.0],
                vec![5.0, 5.0],
            ],
            "t",
        )
        .unwrap();
        let centroids = array![[0.4, 0.4], [4.6, 4.6]];
        let set = select_anchors(&corpus, centroids.view()).unwrap();
        assert_eq!(set.states().row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(set.states().row(1).to_vec(), vec![5.0, 5.0]);
    }

    #[test]
    fn centroids_inside_the_corpus_select_themselves() {
        let corpus = StateCorpus::from_states(
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![4.0, 4.0]],
            "t",
        )
        .unwrap();
        let centroids = array![[1.0, 1.0], [4.0, 4.0]];
        let set = select_anchors(&corpus, centroids.view()).unwrap();
        assert_eq!(set.states().row(0).to_vec(), vec![1.0, 1.0]);
        assert_eq!(set.states().row(1).to_vec(), vec![4.0, 4.0]);
    }

    #[test]
    fn equidistant_tie_goes_to_the_lower_index() {
        let corpus = StateCorpus::from_states(
            vec![vec![2.0, 0.0], vec![-2.0, 0.0], vec![9.0, 9.0]],
            "t",
        )
        .unwrap();
        let centroids = array![[0.0, 0.0]];
        let set = select_anchors(&corpus, centroids.view()).unwrap();
        assert_eq!(set.states().row(0).to_vec(), vec![2.0, 0.0]);
    }

    #[test]
    fn taken_states_fall_through_to_the_next_nearest() {
        let corpus = StateCorpus::from_states(
            vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 0.0]],
            "t",
        )
        .unwrap();
        // both centroids closest to the duplicated origin state
        let centroids = array![[0.1, 0.0], [0.0, 0.1]];
        let set = select_anchors(&corpus, centroids.view()).unwrap();
        assert_eq!(set.states().row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(set.states().row(1).to_vec(), vec![3.0, 0.0]);
    }

    #[test]
    fn too_few_distinct_states_is_an_error() {
        let corpus =
            StateCorpus::from_states(vec![vec![0.0, 0.0], vec![0.0, 0.0]], "t").unwrap();
        let centroids = array![[0.0, 0.0], [1.0, 1.0]];
        assert!(select_anchors(&corpus, centroids.view()).is_err());
    }

    #[test]
    fn pipeline_is_deterministic_end_to_end() {
        let env = make_env("reach-r2").unwrap();
        let policy = untrained_policy(&env);
        let run = || {
            let corpus = collect_states(&policy, &env, 6, 31).unwrap().balanced_by_tag(31);
            let km = kmeans(corpus.to_matrix().view(), 3, 31, KMEANS_MAX_ITERS).unwrap();
            select_anchors(&corpus, km.centroids.view()).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.content_hash(), b.content_hash());
    }
}
