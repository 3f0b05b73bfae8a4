//! Generates the default desk-scale model, runs its evaluation batch through
//! the hybrid and exact paths, and prints per-layer deviation statistics plus
//! the argmax agreement.

use pacsim_core::inference::generator::{eval_input_codes, generate_network, GenConfig};
use pacsim_core::inference::RunOptions;

fn main() {
    let cfg = GenConfig::default();
    let net = generate_network(&cfg).expect("generate model");
    let opts = RunOptions {
        compare_exact: true,
        ..RunOptions::default()
    };

    let mut agree = 0u64;
    let mut dev: Vec<(u128, u64)> = vec![(0, 0); net.layers().len()];
    for i in 0..cfg.eval_count {
        let input = net.input_tensor(eval_input_codes(&cfg, i)).expect("input");
        let out = net.run(&input, &opts).expect("forward");
        if Some(out.argmax) == out.exact_argmax {
            agree += 1;
        }
        for (d, s) in dev.iter_mut().zip(&out.layer_stats) {
            d.0 += s.dev_sum_sq;
            d.1 += s.dev_count;
        }
    }

    println!(
        "argmax agreement: {agree}/{} ({:.1}%)",
        cfg.eval_count,
        100.0 * agree as f64 / cfg.eval_count as f64
    );
    for (i, layer) in net.layers().iter().enumerate() {
        let (sum_sq, count) = dev[i];
        if count == 0 {
            println!("layer {i} ({}): exact, no deviation", layer.name());
            continue;
        }
        let rmse = (sum_sq as f64 / count as f64).sqrt();
        let range = layer.reduction_len() as f64 * 255.0 * 255.0;
        println!(
            "layer {i} ({}): n={}, deviation rmse {:.1} codes = {:.4}% of accumulator range",
            layer.name(),
            layer.reduction_len(),
            rmse,
            100.0 * rmse / range
        );
    }
}
