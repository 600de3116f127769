//! Dyadic frequency projections on a 2D grid.
//!
//! Splits a random field into Littlewood-Paley pieces, prints the L² mass of
//! each, and checks that the pieces add back up to the field.

use std::f64::consts::PI;

use wiener_nlw::grid::{littlewood_paley_project, make_grid, sobolev_norm, Dyadic, Field, LpMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = make_grid(2, 64, 2.0 * PI, 3.0)?;
    let field = Field::from_fn(grid, |x| (3.0 * x[0]).cos() + 0.5 * (11.0 * x[1]).sin() + (-x[0] * x[0]).exp());

    let mut sum = Field::zeros(grid);
    println!("{:>6} {:>14}", "N", "‖P_N u‖_L2");
    for n in Dyadic::covering(&grid) {
        let piece = littlewood_paley_project(&field, n, LpMode::ExactN);
        println!("{:>6} {:>14.6e}", n.get(), sobolev_norm(&piece, 0.0, false)?);
        sum = sum.plus(&piece)?;
    }
    println!("max spectral deviation of the sum: {:.2e}", sum.max_spectral_deviation(&field));

    let low = littlewood_paley_project(&field, Dyadic::new(4)?, LpMode::AtMostN);
    let high = littlewood_paley_project(&field, Dyadic::new(8)?, LpMode::AtLeastN);
    let split = low.plus(&high)?;
    println!("P_≤4 + P_≥8 deviation: {:.2e}", split.max_spectral_deviation(&field));
    Ok(())
}
