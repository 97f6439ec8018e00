#[test]
fn debug_traj() {
    use tinyvlp::ot::ipot::*;
    use tinyvlp::tensor::Tensor;
    use rand::Rng;
    for lag in [5usize, 10, 15] {
        let mut ok = 0;
        for seed in 1000..1100u64 {
            let mut rng = tinyvlp::seeds::rng(seed);
            let c = Tensor::from_vec(&[6,6], (0..36).map(|_| rng.gen::<f64>()).collect());
            let a = uniform(6);
            let mut errs: Vec<f64> = Vec::new();
            ipot_with_callback(&c, &a, &uniform(6), 0.5, 60, 1, |_, plan| {
                let mut err = 0.0;
                for i in 0..6 { let row: f64 = plan.row(i).iter().sum(); err += (row - a[i]).abs(); }
                errs.push(err);
            }).unwrap();
            if (0..errs.len()-lag).all(|t| errs[t+lag] <= errs[t] + 1e-12) { ok += 1; }
        }
        println!("lag {lag}: {ok}/100 monotone");
    }
}
