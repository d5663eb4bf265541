//! One constrained layer: forward pass, merged weights, and the confinement
//! of the adapter factors to their subspaces.

use sslora::linalg::{gaussian_matrix, matmul, seeded_rng};
use sslora::lora::{init_projected, ConstrainedLinearLayer, Constraint, InitScheme, LayerMode};
use sslora::subspace::decompose;

fn main() -> sslora::Result<()> {
    let mut rng = seeded_rng(1);
    let (d, d_in, rank, domains) = (32, 24, 4, 3);
    let w = gaussian_matrix(&mut rng, d, d_in, 1.0);
    let dec = decompose(&w, 0.9)?;
    println!("k = {}, s = {}", dec.k, dec.s);
    let (shared, specific) =
        init_projected(&mut rng, d_in, rank, &dec, InitScheme::Gaussian { std: 0.1 }, domains)?;
    let layer = ConstrainedLinearLayer::new(w, dec, shared, specific, LayerMode::Both, Constraint::Subspace)?;

    let x = gaussian_matrix(&mut rng, d_in, 5, 1.0);
    for domain in 0..domains {
        let h = layer.forward(&x, Some(domain))?;
        let merged = matmul(&layer.merge(domain)?, &x)?;
        println!("domain {domain}: max |forward − merged| = {:.2e}", h.max_abs_diff(&merged));
    }
    let (shared_off, specific_off) = layer.confinement_residuals();
    let specific_off: Vec<String> = specific_off.iter().map(|r| format!("{r:.2e}")).collect();
    println!("‖(I − P_m) B‖ = {shared_off:.2e}, ‖(I − P_n) B_i‖ = [{}]", specific_off.join(", "));
    Ok(())
}
