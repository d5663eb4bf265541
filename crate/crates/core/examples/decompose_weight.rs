//! Split a frozen weight into its column space and left null space at
//! several truncation thresholds.

use sslora::linalg::{gaussian_matrix, matmul, seeded_rng, Matrix};
use sslora::subspace::decompose;

fn main() -> sslora::Result<()> {
    let mut rng = seeded_rng(0);
    let w = gaussian_matrix(&mut rng, 64, 64, 1.0);
    println!("{:>9} {:>4} {:>4} {:>9} {:>12}", "threshold", "k", "s", "energy", "‖P_m P_n‖");
    for tau in [0.5, 0.8, 0.9, 0.95, 0.99] {
        let dec = decompose(&w, tau)?;
        let cross = matmul(&dec.p_m, &dec.p_n)?.frobenius_norm();
        println!(
            "{tau:>9} {:>4} {:>4} {:>9.4} {cross:>12.2e}",
            dec.k,
            dec.s,
            dec.retained_energy()
        );
    }

    // A rank-deficient weight keeps only its nonzero directions.
    let low = matmul(&gaussian_matrix(&mut rng, 16, 3, 1.0), &gaussian_matrix(&mut rng, 3, 16, 1.0))?;
    let dec = decompose(&low, 0.999_999)?;
    println!("rank-3 16×16 weight: k = {}, s = {}", dec.k, dec.s);
    let complete = dec.p_m.add(&dec.p_n)?.max_abs_diff(&Matrix::identity(16));
    println!("max |P_m + P_n − I| = {complete:.2e}");
    Ok(())
}
