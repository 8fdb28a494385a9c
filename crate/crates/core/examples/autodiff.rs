//! Builds a tiny conv → relu → pool → dense → sigmoid graph, runs backward
//! and compares one kernel gradient with a central difference.
//!
//! cargo run --release --example autodiff

use cxrb::tensor::{Exec, Graph, Tensor};

fn loss_and_grad(kernel: &Tensor, with_grad: bool) -> (f32, Option<Vec<f32>>) {
    let x = Tensor::new(vec![1, 1, 4, 4], (0..16).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
    let bias = Tensor::new(vec![2], vec![0.1, -0.05]).unwrap();
    let w = Tensor::new(vec![8, 1], (0..8).map(|i| 0.1 * i as f32 - 0.3).collect()).unwrap();
    let mut g = Graph::new(Exec::single());
    let xv = g.constant(x).unwrap();
    let k = g
        .leaf(if with_grad {
            kernel.clone().with_grad()
        } else {
            kernel.clone()
        })
        .unwrap();
    let b = g.constant(bias).unwrap();
    let h = g.conv2d(xv, k, b, 1, 1).unwrap();
    let h = g.relu(h).unwrap();
    let h = g.maxpool2d(h, 2).unwrap();
    let h = g.flatten(h).unwrap();
    let wv = g.constant(w).unwrap();
    let zero = g.constant(Tensor::zeros(&[1])).unwrap();
    let logit = g.dense(h, wv, zero).unwrap();
    let p = g.sigmoid(logit).unwrap();
    let target = g.constant(Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
    let loss = g.bce_loss(p, target).unwrap();
    let value = g.value(loss).data()[0];
    let grad = with_grad.then(|| g.backward(loss).unwrap().get(k).unwrap().to_vec());
    (value, grad)
}

fn main() {
    let kernel = Tensor::new(
        vec![2, 1, 3, 3],
        (0..18).map(|i| ((i * 7 % 11) as f32 - 5.0) / 10.0).collect(),
    )
    .unwrap();
    let (loss, grad) = loss_and_grad(&kernel, true);
    let grad = grad.unwrap();
    println!("loss {loss:.6}");
    let h = 1e-2;
    for idx in [4, 10, 13] {
        let mut plus = kernel.clone();
        plus.data_mut()[idx] += h;
        let mut minus = kernel.clone();
        minus.data_mut()[idx] -= h;
        let fd = (loss_and_grad(&plus, false).0 - loss_and_grad(&minus, false).0) / (2.0 * h);
        println!("kernel[{idx}]: analytic {:+.5}  finite difference {fd:+.5}", grad[idx]);
    }
}
