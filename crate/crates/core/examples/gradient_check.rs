//! Analytic gradients of the Wiener estimate against central differences.

use wienerlab::gradients::{check_wiener_gradients, GradInstance, FD_STEP};

fn main() -> wienerlab::Result<()> {
    for (size, d, k) in [(12, 2, 3), (16, 8, 5)] {
        let inst = GradInstance::random(size, d, k, 42)?;
        let s = check_wiener_gradients(&inst, FD_STEP)?;
        println!("{size}x{size}, D={d}, K={k}:");
        for (name, err) in s.rows() {
            println!("  {name:<8} max relative error {err:.2e}");
        }
    }
    Ok(())
}
