//! The margin losses on a toy batch of cosines, including the blend.

use cdfscil::loss::{cross_entropy_loss, loss_la, loss_ld, total_loss, LossConfig};

fn main() -> cdfscil::Result<()> {
    // four classes: 0 and 1 in domain 0, 2 and 3 in domain 1
    let domains = [0, 0, 1, 1];
    let cos = vec![vec![0.8, 0.1, 0.3, -0.2], vec![0.2, 0.1, 0.7, 0.6], vec![-0.1, 0.4, 0.5, 0.0]];
    let labels = [0, 3, 1];
    let cfg = LossConfig::default();

    let scaled: Vec<Vec<f64>> = cos.iter().map(|r| r.iter().map(|c| cfg.r_a * c).collect()).collect();
    println!("cross-entropy on r*cos     {:.4}", cross_entropy_loss(&scaled, &labels)?.loss);
    println!("L_A (m = {})              {:.4}", cfg.m_a, loss_la(&cos, &labels, &cfg)?.loss);
    println!("L_D (within own domain)    {:.4}", loss_ld(&cos, &labels, &cfg, &domains)?.loss);
    for lambda in [0.0, 0.5, 0.8, 1.0] {
        let t = total_loss(&cos, &labels, &LossConfig { lambda, ..cfg }, &domains)?;
        println!("lambda {lambda:.1}: L = {:.4}  (L_A {:.4}, L_D {:.4})", t.value.loss, t.la, t.ld);
    }
    Ok(())
}
