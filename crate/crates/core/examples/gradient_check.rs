// Compares tape gradients of the segmentation loss with central finite
// differences on a small random network.

use mtda::segnet::{init, loss_and_grads, SegNetConfig};
use mtda::tensor::{LabelMap, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> mtda::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = SegNetConfig::with_classes(&[4], 3);
    let mut params = init(&config)?;
    let (h, w) = (5, 6);
    let image = Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..1.0));
    let target = LabelMap::new(h, w, (0..h * w).map(|_| rng.gen_range(0..3)).collect())?;

    let (loss, grads) = loss_and_grads(&params, &image, &target, None)?;
    println!("loss {loss:.6}");
    let step = 1e-4;
    let mut worst: f64 = 0.0;
    for (pi, g) in grads.iter().enumerate() {
        // A few coordinates of every tensor.
        for k in (0..g.len()).step_by(g.len().div_ceil(4)) {
            let mut shifted = |delta: f64| -> mtda::Result<f64> {
                let p = params.iter_mut().nth(pi).expect("index in range");
                p.value_mut().data_mut()[k] += delta;
                let l = loss_and_grads(&params, &image, &target, None)?.0;
                params.iter_mut().nth(pi).expect("index in range").value_mut().data_mut()[k] -= delta;
                Ok(l)
            };
            let numeric = (shifted(step)? - shifted(-step)?) / (2.0 * step);
            let rel = (g[k] - numeric).abs() / g[k].abs().max(numeric.abs()).max(1e-10);
            worst = worst.max(rel);
            let name = params.get(pi).expect("index in range").name().to_string();
            println!("{name:>12}[{k:>3}]  analytic {:>12.8}  numeric {numeric:>12.8}  rel {rel:.1e}", g[k]);
        }
    }
    println!("worst relative error {worst:.2e}");
    Ok(worst)
}

fn main() {
    run_example().expect("gradient check failed");
}
