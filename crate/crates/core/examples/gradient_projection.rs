//! Per-row projection of main gradients away from adversarial gradients.

use kspace::autodiff::Tensor2;
use kspace::trainer::project_gradients;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let main = Tensor2::from_vec(4, 2, vec![1.0, 1.0, 1.0, 1.0, 0.5, -2.0, 3.0, 0.0]);
    let adv = Tensor2::from_vec(4, 2, vec![2.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    let (refined, report) = project_gradients(&main, &adv)?;
    for (i, r) in report.rows.iter().enumerate() {
        println!(
            "row {i}: main {:?} adv {:?} -> {:?} (fired {}, alpha {:.3})",
            main.row(i),
            adv.row(i),
            refined.row(i),
            r.fired,
            r.alpha
        );
    }
    println!("fire rate {:.2}, mean cosine {:.3}", report.fire_rate(), report.mean_cosine());
    Ok(())
}
