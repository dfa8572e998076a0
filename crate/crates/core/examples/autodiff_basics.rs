//! Builds a tiny conv -> relu -> pool -> linear program on a tape and prints
//! the gradients reverse mode produces for it.

use dagger_core::autodiff::Tape;
use dagger_core::tensor::Tensor;
use dagger_core::Result;

fn main() -> Result<()> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect())?);
    let k = tape.leaf(Tensor::new(vec![2, 1, 2, 2], vec![1.0, 0.0, 0.0, -1.0, 0.5, 0.5, 0.5, 0.5])?, true);
    let w = tape.leaf(Tensor::new(vec![3, 2], vec![0.1, -0.1, 0.05, 0.05, -0.1, 0.2])?, true);

    let y = tape.conv2d(x, k, 1, 0, 1)?;
    let y = tape.relu(y);
    let y = tape.global_avgpool(y)?;
    let y = tape.reshape(y, &[1, 2])?;
    let logits = tape.linear(y, w, None)?;
    let loss = tape.softmax_cross_entropy(logits, &[2])?;

    println!("logits {:?}", tape.value(logits).data());
    println!("loss   {:.6}", tape.value(loss).data()[0]);
    let grads = tape.backward(loss)?;
    println!("dL/dkernel {:?}", grads.get(k).unwrap_or_default());
    println!("dL/dw      {:?}", grads.get(w).unwrap_or_default());
    Ok(())
}
