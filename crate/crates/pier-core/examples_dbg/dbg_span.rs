// temp debug: inspect span probe training loss
use pier_core::evaluation::probes::*;
use pier_core::rng::Rng;

fn main() {
    let mut rng = Rng::new(5);
    let d = 16;
    let data: Vec<(Vec<f32>, bool)> = (0..300).map(|i| {
        let positive = i % 2 == 0;
        let center = if positive { 1.0 } else { -1.0 };
        let emb: Vec<f32> = (0..d).map(|j| {
            let base = if j == 0 { center } else { 0.0 };
            (base + rng.normal() * 0.1) as f32
        }).collect();
        (emb, positive)
    }).collect();
    for epochs in [1, 5, 15, 30, 60] {
        let cfg = ProbeConfig { epochs, batch_size: 16, lr: 5e-3, seed: 2 };
        let probe = train_span_probe(&data, &cfg).unwrap();
        let mut correct = 0;
        for (e, l) in &data {
            let m = pier_core::numerics::tensor::Tensor::from_vec(vec![1, d], e.clone()).unwrap();
            let p = probe.predict(&m);
            if p[0] == *l { correct += 1; }
        }
        println!("epochs {epochs}: acc {}", correct as f64 / data.len() as f64);
    }
}
