use std::time::Instant;

use ftn_core::autodiff::Primitive;
use ftn_core::{Tape, Tensor};

fn t(shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).collect()).unwrap()
}

fn time<F: FnMut()>(name: &str, mut f: F) {
    f();
    let n = 10;
    let s = Instant::now();
    for _ in 0..n {
        f();
    }
    println!("{name}: {:.2} ms", s.elapsed().as_secs_f64() * 1000.0 / n as f64);
}

fn main() {
    let b = 100;
    let x = t(&[b, 8, 32, 32]);
    let w = t(&[8, 8, 3, 3]);
    let bias = t(&[8]);
    time("conv fwd", || {
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(w.clone());
        let bv = tape.param(bias.clone());
        tape.conv2d(xv, wv, Some(bv), 1, 1).unwrap();
    });
    time("conv fwd+bwd", || {
        let mut tape = Tape::<f32>::new();
        let xv = tape.param(x.clone());
        let wv = tape.param(w.clone());
        let bv = tape.param(bias.clone());
        let y = tape.conv2d(xv, wv, Some(bv), 1, 1).unwrap();
        let m = tape.mean(y).unwrap();
        tape.backward(m).unwrap();
    });
    let g = t(&[8]);
    time("bn fwd+bwd", || {
        let mut tape = Tape::<f32>::new();
        let xv = tape.param(x.clone());
        let gv = tape.param(g.clone());
        let bv = tape.param(bias.clone());
        let (y, _) = tape.batch_norm_train(xv, gv, bv, 1e-5).unwrap();
        let m = tape.mean(y).unwrap();
        tape.backward(m).unwrap();
    });
    time("leaky fwd+bwd", || {
        let mut tape = Tape::<f32>::new();
        let xv = tape.param(x.clone());
        let y = tape.leaky_relu(xv, 0.3).unwrap();
        let m = tape.mean(y).unwrap();
        tape.backward(m).unwrap();
    });
    time("maxpool fwd+bwd", || {
        let mut tape = Tape::<f32>::new();
        let xv = tape.param(x.clone());
        let y = tape.apply(Primitive::MaxPool2d { k: 4, stride: 4 }, &[xv]).unwrap();
        let m = tape.mean(y).unwrap();
        tape.backward(m).unwrap();
    });
    let p = t(&[12]);
    time("lstmpool fwd+bwd", || {
        let mut tape = Tape::<f32>::new();
        let xv = tape.param(x.clone());
        let pv = tape.param(p.clone());
        let y = tape.lstm_pool(xv, pv, 4, 4, ftn_core::lstm_pool::ModulationActivation::Relu).unwrap();
        let m = tape.mean(y).unwrap();
        tape.backward(m).unwrap();
    });
}
