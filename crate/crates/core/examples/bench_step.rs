use std::time::Instant;

use ftn_core::lstm_pool::PoolSharingMode;
use ftn_core::nn::{loss_xent, Mode, Model, NetworkSpec, PoolChoice};
use ftn_core::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let b = 100;
    for pool in [PoolChoice::Max, PoolChoice::Lstm { sharing: PoolSharingMode::PerLayer, psi: None }] {
        let mut model = Model::<f32>::build(&NetworkSpec::conv_n(8, pool), 0).unwrap();
        let x = Tensor::new(vec![b, 3, 32, 32], (0..b * 3072).map(|i| ((i * 7919) % 1000) as f32 / 500.0 - 1.0).collect()).unwrap();
        let labels: Vec<usize> = (0..b).map(|i| i % 10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10;
        let (mut tf, mut tb) = (0.0, 0.0);
        for _ in 0..n {
            let s = Instant::now();
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let (y, _) = model.forward(&mut tape, xv, Mode::Train(&mut rng)).unwrap();
            let l = loss_xent(&mut tape, y, &labels).unwrap();
            tf += s.elapsed().as_secs_f64();
            let s = Instant::now();
            let g = tape.backward(l).unwrap();
            drop(g);
            drop(tape);
            tb += s.elapsed().as_secs_f64();
        }
        println!("{pool:?}: fwd {:.1} ms, bwd {:.1} ms", tf * 1e3 / n as f64, tb * 1e3 / n as f64);
    }
}
