//! Free wave evolution against the closed form.
//!
//! For u₀ = cos(kx), u₁ = 0 the solution is cos(kt)cos(kx); the spectral
//! propagator should reproduce it to roundoff at any time.

use std::f64::consts::PI;

use wiener_nlw::grid::{make_grid, Field, FieldPair};
use wiener_nlw::propagator::linear_propagate;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = make_grid(1, 256, 2.0 * PI, 3.0)?;
    let k = 5.0;
    let data = FieldPair::new(Field::from_fn(grid, |x| (k * x[0]).cos()), Field::zeros(grid))?;
    for t in [0.3, 1.0, 5.0, 100.0] {
        let u = linear_propagate(&data, t).position;
        let exact = Field::from_fn(grid, |x| (k * t).cos() * (k * x[0]).cos());
        let err = u
            .physical()
            .iter()
            .zip(exact.physical().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("t = {t:>6}: max pointwise error {err:.2e}");
    }
    Ok(())
}
