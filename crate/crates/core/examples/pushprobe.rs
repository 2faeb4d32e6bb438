// Throwaway feasibility probe for push task configurations. Not part of the
// library surface; run with `cargo run --release --example pushprobe`.

use stitchkit_core::env::{make_env, PlanarEnv};

fn cumang(angles: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(angles.len());
    let mut s = 0.0;
    for a in angles {
        s += a;
        c.push(s);
    }
    c
}

/// Jacobian-transpose action driving the end effector toward `target`.
fn jt_action(env: &PlanarEnv, target: [f64; 2]) -> Vec<f64> {
    let ee = env.ee_position();
    let err = [target[0] - ee[0], target[1] - ee[1]];
    let links = &env.robot().link_lengths;
    let c = cumang(env.angles());
    let n = links.len();
    let mut act = vec![0.0; n];
    let mut jx = vec![[0.0; 2]; n];
    for j in 0..n {
        let mut dx = 0.0;
        let mut dy = 0.0;
        for k in j..n {
            dx += links[k] * (-c[k].sin());
            dy += links[k] * c[k].cos();
        }
        jx[j] = [dx, dy];
        act[j] = dx * err[0] + dy * err[1];
    }
    // scale so the predicted ee displacement is min(|err|, 0.08)
    let maxvel = env.robot().max_joint_velocity;
    let mut v = [0.0; 2];
    for j in 0..n {
        v[0] += jx[j][0] * act[j];
        v[1] += jx[j][1] * act[j];
    }
    let vn = norm(v) * maxvel;
    if vn > 1e-9 {
        let step = (0.7 * norm(err)).clamp(0.03, 0.28);
        let scale = step / vn;
        for a in &mut act {
            *a = (*a * scale).clamp(-1.0, 1.0);
        }
    }
    act
}

fn seg_point_dist(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let denom = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if denom > 1e-12 { ((ap[0] * ab[0] + ap[1] * ab[1]) / denom).clamp(0.0, 1.0) } else { 0.0 };
    norm([p[0] - (a[0] + t * ab[0]), p[1] - (a[1] + t * ab[1])])
}

fn norm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Scripted pusher: line up behind the object, then drive through it
/// toward the goal.
/// Pick the point to drive the end effector toward for one control step.
fn expert_target(obj: [f64; 2], goal: [f64; 2], ee: [f64; 2], radius: f64) -> [f64; 2] {
    let d = [goal[0] - obj[0], goal[1] - obj[1]];
    let dn = norm(d);
    let u = [d[0] / dn, d[1] / dn];
    let behind = [obj[0] - u[0] * (radius + 0.03), obj[1] - u[1] * (radius + 0.03)];
    let to_obj = [obj[0] - ee[0], obj[1] - ee[1]];
    let aligned = to_obj[0] * u[0] + to_obj[1] * u[1] > 0.75 * norm(to_obj);
    let near_behind = norm([ee[0] - behind[0], ee[1] - behind[1]]) < 0.05;
    if near_behind || (aligned && norm(to_obj) < radius + 0.08) {
        // push through the object toward the goal
        return [obj[0] + u[0] * radius, obj[1] + u[1] * radius];
    }
    // in contact but misaligned: back straight off before maneuvering
    if norm(to_obj) < radius + 0.02 {
        let n = norm(to_obj).max(1e-9);
        return [obj[0] - to_obj[0] / n * (radius + 0.14), obj[1] - to_obj[1] / n * (radius + 0.14)];
    }
    // travel to the behind point; arc around the object if the straight
    // segment would plow through it
    if seg_point_dist(ee, behind, obj) < radius + 0.05 && norm(to_obj) < radius + 0.45 {
        let cur = (ee[1] - obj[1]).atan2(ee[0] - obj[0]);
        let want = (-u[1]).atan2(-u[0]);
        let mut delta = want - cur;
        while delta > std::f64::consts::PI {
            delta -= 2.0 * std::f64::consts::PI;
        }
        while delta < -std::f64::consts::PI {
            delta += 2.0 * std::f64::consts::PI;
        }
        let ang = cur + delta.clamp(-0.45, 0.45);
        return [obj[0] + (radius + 0.10) * ang.cos(), obj[1] + (radius + 0.10) * ang.sin()];
    }
    behind
}

fn expert_episode(env: &mut PlanarEnv, seed: u64) -> (bool, bool, usize) {
    let mut state = env.reset(seed);
    let radius = env.task().object_radius;
    let goal = env.goal();
    let mut touched = false;
    let mut prev_ee = env.ee_position();
    let mut stuck = 0u32;
    for step in 0..env.episode_length() {
        let obj = [state.task[0], state.task[1]];
        let ee = env.ee_position();
        let target = expert_target(obj, goal, ee, radius);
        let mut act = jt_action(env, target);
        // escape joint-limit deadlocks with a deterministic wiggle
        if norm([ee[0] - prev_ee[0], ee[1] - prev_ee[1]]) < 0.004 && norm([target[0] - ee[0], target[1] - ee[1]]) > 0.05 {
            stuck += 1;
        } else {
            stuck = 0;
        }
        if stuck >= 3 {
            let sign = if (step / 4) % 2 == 0 { 1.0 } else { -1.0 };
            for (j, a) in act.iter_mut().enumerate() {
                *a = sign * if j % 2 == 0 { 0.9 } else { -0.6 };
            }
        }
        prev_ee = ee;
        let out = env.step(&act).expect("step");
        touched |= out.info.touched;
        if out.reward == 0.0 {
            return (true, touched, step + 1);
        }
        if out.done {
            break;
        }
        state = out.state;
    }
    (false, touched, env.episode_length())
}

fn random_touch_rate(env: &mut PlanarEnv, episodes: u64) -> f64 {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
    let mut touched_eps = 0;
    for e in 0..episodes {
        env.reset(1_000_000 + e);
        let mut touched = false;
        for _ in 0..env.episode_length() {
            let act: Vec<f64> = (0..env.action_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = env.step(&act).expect("step");
            touched |= out.info.touched;
            if out.done {
                break;
            }
        }
        if touched {
            touched_eps += 1;
        }
    }
    touched_eps as f64 / episodes as f64
}

fn probe(label: &str, mut env: PlanarEnv, episodes: u64) {
    let rt = random_touch_rate(&mut env.clone(), episodes);
    let mut succ = 0;
    let mut touch = 0;
    let mut steps_sum = 0;
    for e in 0..episodes {
        let (s, t, steps) = expert_episode(&mut env, e);
        if s {
            succ += 1;
            steps_sum += steps;
        }
        if t {
            touch += 1;
        }
    }
    let sr = succ as f64 / episodes as f64;
    let tr = touch as f64 / episodes as f64;
    let ms = if succ > 0 { steps_sum as f64 / succ as f64 } else { f64::NAN };
    println!(
        "{label:28} expert_success {sr:.3}  expert_touch {tr:.3}  mean_steps {ms:5.1}  random_touch {rt:.3}"
    );
}

fn trace_episode(env: &mut PlanarEnv, seed: u64) {
    let mut state = env.reset(seed);
    let radius = env.task().object_radius;
    let goal = env.goal();
    println!("goal ({:.3},{:.3})", goal[0], goal[1]);
    for step in 0..env.episode_length() {
        let obj = [state.task[0], state.task[1]];
        let ee = env.ee_position();
        let dn = norm([goal[0] - obj[0], goal[1] - obj[1]]);
        let target = expert_target(obj, goal, ee, radius);
        let act = jt_action(env, target);
        let out = env.step(&act).expect("step");
        println!(
            "step {step:2} ee ({:6.3},{:6.3}) obj ({:6.3},{:6.3}) obj->goal {dn:.3} tgt ({:6.3},{:6.3}) touch {}",
            ee[0], ee[1], obj[0], obj[1], target[0], target[1], out.info.touched
        );
        if out.done {
            println!("done reward {}", out.reward);
            break;
        }
        state = out.state;
    }
}

fn main() {
    if std::env::args().any(|a| a == "trace") {
        let mut env = make_env("push3-r3").expect("preset");
        for seed in [0, 1, 2] {
            println!("== seed {seed}");
            trace_episode(&mut env, seed);
        }
        return;
    }
    let episodes = 500;
    for id in ["push1-r3", "push2-r3", "push3-r3", "push4-r3", "push3-r3-lock1", "push4-r3-lock1"] {
        let env = make_env(id).expect("preset");
        probe(id, env, episodes);
    }
    // object radius / tolerance / length sweep
    for id in ["push3-r3", "push3-r3-lock1"] {
        for (radius, eps, len) in [
            (0.15, 0.20, 75),
            (0.22, 0.20, 75),
            (0.22, 0.25, 75),
            (0.22, 0.25, 100),
            (0.30, 0.20, 75),
            (0.30, 0.25, 100),
        ] {
            let base = make_env(id).expect("preset");
            let mut task = base.task().clone();
            task.object_radius = radius;
            task.eps_goal = eps;
            task.episode_length = len;
            let env = PlanarEnv::new(base.robot().clone(), task).expect("env");
            probe(&format!("{id}+r{radius}+e{eps}+l{len}"), env, episodes);
        }
    }
}
