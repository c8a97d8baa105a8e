use noise2sdf::field::*;
use noise2sdf::geom::*;
use noise2sdf::metrics::{l2_chamfer, normal_consistency};
use noise2sdf::mesher::marching_cubes;
use noise2sdf::trainer::*;
use std::time::Instant;

fn run(cfg: &TrainConfig, obs: &ObservationSet) -> noise2sdf::net::SdfNetwork {
    train(obs, cfg, &mut |_, _| {}).unwrap().network
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20000);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let mode: String = args.get(3).cloned().unwrap_or_else(|| "main".into());

    let clean = synthetic_sphere(2000, 21);
    let obs = make_observation_set(&clean, 1, 0.02, 22).unwrap();
    let noisy = obs.observations[0].clone();
    let noisy_cd = l2_chamfer(&noisy, &clean).unwrap();
    let base = TrainConfig {
        batch_size: 64,
        iterations: iters,
        learning_rate: lr,
        mode: TrainMode::SingleObservation,
        hidden_layers: 4,
        hidden_width: 64,
        seed: 5,
        ..TrainConfig::default()
    };

    let t0 = Instant::now();
    match mode.as_str() {
        "main" => {
            let net = run(&base, &obs);
            for passes in [1usize, 2, 3] {
                let den = denoise(&net, &noisy, passes);
                let cd = l2_chamfer(&den, &clean).unwrap();
                println!("passes {passes}: denCD {cd:.3e} vs noisy {noisy_cd:.3e} (ratio {:.2})", cd / noisy_cd);
            }
            let grid = evaluate_grid(&net, 64, (Point3::new(-1.1,-1.1,-1.1), Point3::new(1.1,1.1,1.1))).unwrap();
            let mesh = marching_cubes(&grid, 0.0).unwrap();
            let radial: f64 = mesh.vertices.iter().map(|v| (v.norm()-1.0).abs()).sum::<f64>() / mesh.vertices.len() as f64;
            let mesh_cloud = PointCloud::from_points_normals(mesh.vertices.clone(), mesh.vertex_normals.clone());
            let analytic = synthetic_sphere(5000, 99);
            let nc = normal_consistency(&mesh_cloud, &analytic).unwrap();
            println!("mesh: verts {} watertight {} radial {radial:.4} NC {nc:.4}", mesh.vertices.len(), mesh.is_watertight());
            // upsample check
            let sparse = PointCloud::from_points(clean.points[..500].to_vec());
            let up = upsample(&net, &sparse, 4, 0.01, 44).unwrap();
            let s_cd = l2_chamfer(&sparse, &clean).unwrap();
            let u_cd = l2_chamfer(&up, &clean).unwrap();
            println!("upsample: sparseCD {s_cd:.3e} upCD {u_cd:.3e}");
        }
        "cd" => {
            let cfg = TrainConfig { metric: LossMetric::Chamfer, ..base };
            let net = run(&cfg, &obs);
            let den = denoise(&net, &noisy, 1);
            println!("CD-trained: denCD {:.3e} vs noisy {noisy_cd:.3e}", l2_chamfer(&den, &clean).unwrap());
        }
        "lam0" => {
            let cfg = TrainConfig { lambda: 0.0, ..base };
            let net = run(&cfg, &obs);
            let den = denoise(&net, &noisy, 1);
            println!("lam0: denCD {:.3e}", l2_chamfer(&den, &clean).unwrap());
            let grid = evaluate_grid(&net, 64, (Point3::new(-1.1,-1.1,-1.1), Point3::new(1.1,1.1,1.1))).unwrap();
            let mesh = marching_cubes(&grid, 0.0).unwrap();
            if mesh.is_empty() { println!("lam0 recon: EMPTY mesh"); }
            else {
                let mc = sample_recon(&mesh);
                println!("lam0 recon: verts {} reconCD {:.3e}", mesh.vertices.len(), l2_chamfer(&mc, &clean).unwrap());
            }
        }
        _ => panic!("unknown mode"),
    }
    eprintln!("[{:.0}s]", t0.elapsed().as_secs_f64());
}

fn sample_recon(mesh: &noise2sdf::mesher::TriangleMesh) -> PointCloud {
    let c = noise2sdf::mesher::sample_mesh_surface(mesh, 10000, 7).unwrap();
    PointCloud::from_points(c.points)
}
