//! Batch, group and instance normalization on a toy batch: what each layer
//! normalizes over and how train- and eval-mode batch norm differ.
//!
//! `cargo run --release --example norm_layers`

use bnalign::norm::{estimate_channel_stats, group_norm_forward, instance_norm_forward, BatchNorm};
use bnalign::Tensor;

fn main() -> bnalign::Result<()> {
    // 4 examples, 2 channels, 2×2 positions; channel 1 is offset and scaled
    let x = Tensor::from_fn(&[4, 2, 2, 2], |i| {
        let channel = (i / 4) % 2;
        let v = (i % 7) as f64;
        if channel == 1 {
            3.0 * v + 10.0
        } else {
            v
        }
    });
    let stats = estimate_channel_stats(std::slice::from_ref(&x))?;
    println!("pooled channel stats: mean {:?}, var {:?}", stats.mean, stats.var);

    let mut bn = BatchNorm::new(2, 1e-5, 0.1)?;
    let (train_out, _) = bn.forward_train(&x)?;
    let eval_before = bn.forward_eval(&x)?;
    bn.set_target(stats)?;
    let eval_aligned = bn.forward_eval(&x)?;
    println!("train-mode output, example 0: {:.3?}", train_out.example(0));
    println!("eval with source stats (mean 0, var 1): {:.3?}", eval_before.example(0));
    println!("eval with re-estimated stats:           {:.3?}", eval_aligned.example(0));
    println!("re-estimated eval equals train mode: {:.1e}", eval_aligned.max_abs_diff(&train_out));

    let gn = group_norm_forward(&x, 1, &[1.0, 1.0], &[0.0, 0.0], 1e-5)?;
    let inn = instance_norm_forward(&x, None, None, 1e-5)?;
    let doubled = instance_norm_forward(&x.map(|v| 2.0 * v - 1.0), None, None, 1e-5)?;
    println!("group norm (1 group), example 0: {:.3?}", gn.example(0));
    println!("instance norm, example 0:        {:.3?}", inn.example(0));
    println!("instance norm change under x -> 2x - 1 (nonzero only through epsilon): {:.1e}", inn.max_abs_diff(&doubled));
    Ok(())
}
