//! Both first- and second-level generalization bounds across corpus sizes,
//! from a fixed set of measured constants.

use icl_lab::bounds::{bound_table, capacity_c, theorem2_bound, BoundInputs};

fn main() -> icl_lab::Result<()> {
    let base = BoundInputs {
        k: 20,
        k_prime: 2,
        n: 100,
        n_prime: 10,
        t: 256,
        t_p: 64,
        t_prime: 5000,
        beta: 1.0,
        s: 0.2,
        l: 1.5,
        sigma: 0.8,
        delta: 0.1,
        eps_opt: 0.0,
        n_param: 6000,
        kl_posterior_prior: Some(4.0),
        scaling: None,
    };
    println!("capacity C at T' = 0, 100, 5000: {:.4} {:.4} {:.4}", capacity_c(1.0, 0.2, 0.0)?, capacity_c(1.0, 0.2, 100.0)?, capacity_c(1.0, 0.2, 5000.0)?);

    println!("\nall terms at N = {}:", base.n);
    for (name, value) in bound_table(&theorem2_bound(&base)?) {
        println!("  {name:<26} {value}");
    }

    println!("\n{:>6}  {:>12}  {:>12}", "N", "t1_detailed", "t2_detailed");
    for n in [20, 50, 100, 500, 2000] {
        let b = theorem2_bound(&BoundInputs { n, ..base.clone() })?;
        println!("{n:>6}  {:>12.5}  {:>12.5}", b.first_level.detailed, b.detailed);
    }
    Ok(())
}
