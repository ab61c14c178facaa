//! Scratch calibration probe: score a stage-1 checkpoint by per-frame Dice
//! on freshly simulated native episodes.

use foci_core::eval::dice;
use foci_core::forward::{add_observation_noise, build_forward_operator, observe};
use foci_core::io::load_native_checkpoint;
use foci_core::sim::{generate_dataset, DatasetKind, FhnParams, GeneratorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = std::path::Path::new(&args[1]);
    let count: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(20);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(777);

    let (model, step) = load_native_checkpoint(ckpt).unwrap();
    let n = model.arch.grid_size;
    let params = FhnParams::for_grid(n);
    let gen = GeneratorConfig::for_grid(n, 60);
    let ds = generate_dataset(DatasetKind::Native, count, &gen, &params, seed).unwrap();
    let op = build_forward_operator(n, 8, 8, 20.0).unwrap();

    let mut total = 0.0;
    for (i, (x, meta)) in ds.episodes.iter().zip(&ds.metas).enumerate() {
        let mut y = observe(&op, x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(meta.seed ^ 0xB0B5_5EED);
        add_observation_noise(&mut y, 0.04, &mut rng);
        let (x_hat, z) = model.reconstruct(&y, 60).unwrap();
        let d = dice(&x_hat, x).unwrap();
        total += d;
        if i < 5 {
            println!("episode {i}: dice {d:.4}");
        }
        if i == 0 && std::env::var("CALIB_PROBE").is_ok() {
            for t in [0usize, 1, 5, 10, 20, 30, 45, 59] {
                let fr = x_hat.index_axis(ndarray::Axis(0), t);
                let truth = x.index_axis(ndarray::Axis(0), t);
                let on = fr.iter().filter(|&&p| p >= 0.5).count();
                let truth_on = truth.iter().filter(|&&p| p >= 0.5).count();
                let mean = fr.mean().unwrap();
                let max = fr.iter().cloned().fold(f64::MIN, f64::max);
                let znorm = z.row(t).mapv(|v| v * v).sum().sqrt();
                println!(
                    "  t={t:2}  pred mean {mean:.3} max {max:.3} on {on:4}  truth on {truth_on:4}  |z| {znorm:.3}"
                );
            }
        }
    }
    println!("checkpoint step {step}: mean dice over {count} = {:.4}", total / count as f64);
}
