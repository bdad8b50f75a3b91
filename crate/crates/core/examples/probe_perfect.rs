use expdesign::dp::*;
use expdesign::process::TrueProcessParams;
use std::sync::Arc;

fn main() {
    let spec = ProblemSpec::default();
    let grids = build_grids(&spec, &GridSpec::default()).unwrap();
    let model = TrueProcessModel { params: TrueProcessParams::default() };
    let table = Arc::new(MomentsTable::from_model(&model, &grids));
    let t0 = std::time::Instant::now();
    let sol = solve_lambda(&table, &spec, &grids, &DualOptions::default()).unwrap();
    println!("solve took {:?}", t0.elapsed());
    println!("lambda*={:.6} risk={:.6} E[T]={:.4} feasible={}", sol.lambda_star, sol.risk, sol.expected_time, sol.feasible);
    // Policy shape at t=0
    let vp = &sol.value_policy;
    for &(lo, hi) in &[(0.0, 0.55), (0.75, 0.80)] {
        let mut min_u = f64::INFINITY;
        let mut max_u = f64::NEG_INFINITY;
        for (i, &x) in grids.state_nodes().iter().enumerate() {
            if x >= lo && x <= hi {
                let u = vp.input_at(0, i, &grids);
                min_u = min_u.min(u);
                max_u = max_u.max(u);
            }
        }
        println!("policy t=0 on [{lo},{hi}]: u in [{min_u:.4}, {max_u:.4}]");
    }
    // lambda sweep monotonicity probe
    let mut last = f64::INFINITY;
    for k in 0..20 {
        let lam = if k == 0 { 0.0 } else { 1e4f64.powf(k as f64 / 19.0) * 1e-2 };
        let (_, risk) = solve_fixed_lambda(&table, lam, &spec, &grids);
        let mono = if risk <= last + 1e-8 { "ok" } else { "VIOLATION" };
        println!("lam={lam:10.4} risk={risk:.8} {mono}");
        last = risk;
    }
}
