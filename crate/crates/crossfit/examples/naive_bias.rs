#![allow(clippy::needless_range_loop)]

//! The expected-score diagnostic: why naive logistic regression is
//! inconsistent under random effects, checked against Monte Carlo.
//!
//!     cargo run --release --example naive_bias

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crossfit::logistic::expected_score_bias;
use crossfit::schall::sigmoid;
use crossfit::simulate::{simulate_dataset, SimConfig};

fn main() -> crossfit::Result<()> {
    let mut config = SimConfig::preset_a(3_000.0, 3);
    config.beta_true = vec![-1.0, 0.4, -0.7];
    let sim = simulate_dataset(&config)?;
    let design = &sim.design;
    let beta = &config.beta_true;
    let sigma = 0.1;

    let analytic = expected_score_bias(design, beta, sigma * sigma);

    // Monte Carlo expected naive score over a ~ N(0, sigma^2), common
    // draws across observations
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = design.n_obs();
    let p = design.n_features();
    let eta: Vec<f64> = (0..n)
        .map(|i| design.x_row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect();
    let draws = 100_000;
    let mut mean = vec![0.0; p];
    let mut g = vec![0.0; p];
    for _ in 0..draws {
        let a = sigma * rng.sample::<f64, _>(StandardNormal);
        g.fill(0.0);
        for i in 0..n {
            let d = sigmoid(eta[i] + a) - sigmoid(eta[i]);
            for q in 0..p {
                g[q] += d * design.x_row(i)[q];
            }
        }
        for q in 0..p {
            mean[q] += g[q] / draws as f64;
        }
    }

    println!("expected naive score at the true coefficients (sigma = {sigma}):");
    println!("{:>10} {:>14} {:>14}", "coef", "analytic", "monte carlo");
    for q in 0..p {
        let name = if q == 0 { "intercept".to_string() } else { format!("x{q}") };
        println!("{:>10} {:>14.6} {:>14.6}", name, analytic[q], mean[q]);
    }
    println!(
        "\na nonzero expected score means the naive maximum likelihood\n\
         estimate cannot converge to the true coefficients; the intercept\n\
         column is all ones and cannot be centered away"
    );

    let zero = expected_score_bias(design, &vec![0.0; p], sigma * sigma);
    println!(
        "\nwith all-zero coefficients the curvature term vanishes identically: {:?}",
        zero
    );
    Ok(())
}
