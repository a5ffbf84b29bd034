//! Brute-force estimates of `A0`, `L` and `M` for the first example, to set
//! against the declared constants.
//!
//! `cargo run --release --example derive_example1_constants`

use poisson_sde::presets::{example1, EXAMPLE1_CONSTANTS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = example1()?;
    let (t_max, dt) = (5000.0, 0.01);
    let ys: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.01).collect();
    let (mut a0, mut lip, mut growth) = (0.0f64, 0.0f64, 0.0f64);
    let mut f = [0.0];
    let mut prev = [0.0];
    let mut t = -t_max;
    while t <= t_max {
        for field in [&s.drift, &s.diffusion] {
            field.eval(t, &[0.0], &mut f);
            a0 = a0.max(f[0].abs());
            field.eval(t, &[ys[0]], &mut prev);
            for w in ys.windows(2) {
                field.eval(t, &[w[1]], &mut f);
                lip = lip.max((f[0] - prev[0]).abs() / (w[1] - w[0]));
                if w[1] != 0.0 {
                    growth = growth.max(f[0].abs() / w[1].abs());
                }
                prev = f;
            }
        }
        t += dt;
    }
    let c = EXAMPLE1_CONSTANTS;
    println!("sampled t in [-{t_max}, {t_max}] step {dt}, y in [-4, 4] step 0.01");
    println!("A0: sampled {a0:.6}, declared {}", c.a0);
    println!("L:  sampled {lip:.6}, declared {:.6}", c.lipschitz);
    println!("M:  sampled {growth:.6}, declared {:.6}", c.growth);
    Ok(())
}
