use expdesign::dp::*;
use expdesign::process::TrueProcessParams;
use std::sync::Arc;

fn main() {
    let spec = ProblemSpec::default();
    let grids = build_grids(&spec, &GridSpec::default()).unwrap();
    let model = TrueProcessModel { params: TrueProcessParams::default() };
    let table = Arc::new(MomentsTable::from_model(&model, &grids));
    let sol = solve_lambda(&table, &spec, &grids, &DualOptions::default()).unwrap();
    let vp = &sol.value_policy;
    println!("lambda*={}", sol.lambda_star);
    for (i, &x) in grids.state_nodes().iter().enumerate() {
        if (0.70..=0.85).contains(&x) {
            let u = vp.input_at(0, i, &grids);
            let (m, v) = table.moments_at(i, vp.input_index_at(0, i));
            println!("x={x:.3}  pi0={u:+.3}  mean_next={m:.4} sd={:.4}  J0={:.4}", v.sqrt(), sol.value_policy.values_at(0)[i]);
        }
    }
}
