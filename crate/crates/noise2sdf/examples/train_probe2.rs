use noise2sdf::field::*;
use noise2sdf::geom::*;
use noise2sdf::kdtree::KdTree;
use noise2sdf::metrics::l2_chamfer;
use noise2sdf::trainer::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20000);
    let n_obs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(64);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let sigma: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let seed: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(5);

    let clean = synthetic_sphere(2000, 21);
    let obs = make_observation_set(&clean, n_obs, sigma, 22 + seed).unwrap();
    let noisy = obs.observations[0].clone();
    let noisy_cd = l2_chamfer(&noisy, &clean).unwrap();
    let cfg = TrainConfig {
        batch_size: batch,
        iterations: iters,
        learning_rate: lr,
        mode: if n_obs == 1 { TrainMode::SingleObservation } else { TrainMode::MultiObservation },
        hidden_layers: 4, hidden_width: 64, seed,
        ..TrainConfig::default()
    };
    let state = train(&obs, &cfg, &mut |_, _| {}).unwrap();
    let den = denoise(&state.network, &noisy, 1);
    let cd = l2_chamfer(&den, &clean).unwrap();
    let radial: f64 = den.points.iter().map(|p| (p.norm()-1.0).abs()).sum::<f64>() / den.len() as f64;
    let t = KdTree::build(&den.points);
    let self_nn: f64 = den.points.iter().enumerate().map(|(i, &p)| t.nearest_excluding(p, Some(i)).dist2.sqrt()).sum::<f64>() / den.len() as f64;
    println!("iters {iters} N {n_obs} B {batch} lr {lr} sigma {sigma} seed {seed}: denCD {cd:.3e} / noisy {noisy_cd:.3e} = {:.2}  radial {radial:.4} selfNN {self_nn:.4}", cd / noisy_cd);
}
