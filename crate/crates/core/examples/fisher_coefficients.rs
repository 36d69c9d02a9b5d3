// Trains a small network briefly on the source domain, estimates the
// teacher's Fisher information on a target split, turns it into per-weight
// EMA coefficients and applies one Fisher-weighted teacher update.

use mtda::af_ema::{af_ema_update, load_fisher, save_fisher, FisherCoefficients, NormScope};
use mtda::mean_teacher::{supervised_loss_grad, TeacherStudent};
use mtda::scenegen::{build_benchmark, GeneratorConfig};
use mtda::segnet::{init, SegNetConfig};
use mtda::tensor::OptimState;

pub fn run_example() -> mtda::Result<FisherCoefficients> {
    let mut gen = GeneratorConfig::street(1);
    gen.height = 24;
    gen.width = 24;
    gen.train_size = 8;
    gen.val_size = 2;
    let bench = build_benchmark(&gen)?;
    let source = &bench.source.train;

    let mut pair = TeacherStudent::new(init(&SegNetConfig::with_classes(&[6], 7))?, 0.9)?;
    let mut optim = OptimState::new(0.05, 0.9, 5e-4, 0.9, 40)?;
    for it in 0..40 {
        let i = it % source.len();
        let lg = supervised_loss_grad(pair.student(), source.image(i), source.label(i).expect("labelled"))?;
        pair.set_student_grads(&lg.grads)?;
        let lr = mtda::tensor::poly_lr(it, &optim);
        pair.sgd_step(&mut optim, lr)?;
        pair.ema_update()?;
    }

    let target = &bench.targets[0].train;
    let fisher = FisherCoefficients::compute(pair.teacher(), target, Some(4), 0.99, 0.9999, NormScope::Tensor)?;
    println!("Fisher over {} samples of {}", fisher.samples, fisher.computed_on);
    for (p, (raw, adj)) in pair.teacher().iter().zip(fisher.raw.iter().zip(&fisher.adjusted)) {
        let max = raw.iter().cloned().fold(0.0, f64::max);
        let mean_adj = adj.iter().sum::<f64>() / adj.len() as f64;
        println!("{:>12}: raw max {max:.3e}, mean coefficient {mean_adj:.5}", p.name());
    }
    let (lo, hi, mid) = fisher.saturation();
    println!("at lambda1 {lo:.3}, at lambda2 {hi:.3}, in between {mid:.3}");
    // Target labels exist for evaluation only and were never touched.
    assert_eq!(target.label_reads(), 0);

    let before = pair.teacher().flatten();
    af_ema_update(&mut pair, &fisher.adjusted)?;
    let moved = before.iter().zip(pair.teacher().flatten()).filter(|(a, b)| *a != b).count();
    println!("Fisher-weighted update moved {moved} of {} teacher weights", before.len());

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("fisher.odbf");
    save_fisher(&path, &fisher, pair.teacher())?;
    let (back, names) = load_fisher(&path)?;
    assert_eq!(back, fisher);
    println!("snapshot round trip ok ({} tensors)", names.len());
    Ok(fisher)
}

fn main() {
    run_example().expect("Fisher example failed");
}
