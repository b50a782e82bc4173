use mocodiff::diffusion::{build_schedule, train_step};
use mocodiff::motionsim::phantom;
use mocodiff::neural::{build_unet, AdamState, UNetConfig};
use mocodiff::numerics::{ImageTensor, Rng};
use std::time::Instant;

fn main() {
    let mut model = build_unet(UNetConfig { seed: 1, ..UNetConfig::default() }).unwrap();
    println!("params: {}", model.param_count());
    let sched = build_schedule(500, 1e-4, 0.02).unwrap();
    let mut rng = Rng::new(0);
    let batch: Vec<ImageTensor> =
        (0..6).map(|i| phantom(&mut Rng::new(i), 64, 64).unwrap()).collect();
    let mut opt = AdamState::new(model.param_count(), 2e-4);
    // warmup
    for _ in 0..3 {
        train_step(&mut model, &batch, &sched, &mut rng, &mut opt).unwrap();
    }
    let t0 = Instant::now();
    let n = 20;
    for _ in 0..n {
        train_step(&mut model, &batch, &sched, &mut rng, &mut opt).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / n as f64;
    println!("train step (batch 6, 64x64, base16 depth2): {:.3} s", dt);

    // forward-only (reverse-step cost)
    let x = phantom(&mut Rng::new(99), 64, 64).unwrap();
    let x3 = x.clone().reshape(vec![1, 64, 64]).unwrap();
    let t0 = Instant::now();
    let n = 50;
    for i in 0..n {
        let _ = model.forward(&x3, i % 500).unwrap();
    }
    println!("forward (1x64x64): {:.4} s", t0.elapsed().as_secs_f64() / n as f64);
    println!("cores: {}", std::thread::available_parallelism().unwrap());
}
