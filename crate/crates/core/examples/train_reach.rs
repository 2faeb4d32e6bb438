//! Train a plain SAC+HER policy on 2-link reach and print the learning
//! curve. Usage: train_reach [epochs] [seed]

use stitchkit_core::env::make_env;
use stitchkit_core::policy::ArchDesc;
use stitchkit_core::rl::{train_policy, TrainParams};

fn main() {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(50);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let env = make_env("reach-r2").expect("preset");
    let desc = ArchDesc::plain(
        env.task_dim(),
        env.robot_dim(),
        env.robot_dim(),
        vec![64, 64, 64, 64],
    );
    let params = TrainParams {
        epochs,
        seed,
        ..TrainParams::default()
    };
    let started = std::time::Instant::now();
    let out = train_policy(&env, &desc, None, &params).expect("training");
    for r in &out.records {
        println!(
            "epoch {:3}  steps {:6}  success {:.2}  touch {:.2}  critic {:.3}  alpha {:.3}",
            r.epoch,
            r.env_steps,
            r.success_rate,
            r.touching_rate,
            r.critic1_loss.unwrap_or(f64::NAN),
            r.alpha
        );
    }
    eprintln!(
        "trained {} epochs in {:.1}s",
        epochs,
        started.elapsed().as_secs_f64()
    );
}
