//! Orthogonality and separation losses on hand-built factors, and plain
//! gradient descent on the orthogonality loss.

use sslora::linalg::{gaussian_matrix, qr, seeded_rng};
use sslora::losses::{orth_loss, ss_loss};

fn main() -> sslora::Result<()> {
    let mut rng = seeded_rng(3);
    let r = 4;
    let q = qr(&gaussian_matrix(&mut rng, 16, 2 * r, 1.0))?.0;
    let (b1, b2) = (q.columns(0, r), q.columns(r, 2 * r));
    println!("orthonormal factors: L_orth = {:.2e}", orth_loss(&[&b1, &b2])?.0);
    println!(
        "disjoint orthonormal pair: L_ss = {:.6} (−√r = {:.6})",
        ss_loss(&[&b1, &b2])?.value,
        -(r as f64).sqrt()
    );
    let same = ss_loss(&[&b1, &b1])?;
    println!("identical pair: L_ss = {}, skipped pairs = {}", same.value, same.degenerate_pairs);

    let mut bs: Vec<_> = (0..3).map(|_| gaussian_matrix(&mut rng, 32, 8, 0.2)).collect();
    for step in 0..=3000 {
        let refs: Vec<_> = bs.iter().collect();
        let (value, grads) = orth_loss(&refs)?;
        if step % 500 == 0 {
            println!("step {step:>4}: L_orth = {value:.3e}");
        }
        for (b, g) in bs.iter_mut().zip(&grads) {
            b.axpy(-0.01, g)?;
        }
    }
    Ok(())
}
