use saddle_scale_core::optim::Averaging;
use saddle_scale_core::problems::make_quadratic;
use saddle_scale_core::{Method, OptimizerConfig, PointPair, ScalingConfig};

fn main() -> saddle_scale_core::Result<()> {
    let problem = make_quadratic(10, 10, 0.5, 2.0, 7)?.with_noise(0.1)?;
    let config = OptimizerConfig::new(Method::ExtraGradient, 1e-3, ScalingConfig::oasis(), 5_000)
        .with_seed(1)
        .with_averaging(Averaging::Uniform);
    let traj = saddle_scale_core::run(&problem, &config, &PointPair::zeros(10, 10))?;
    let last = traj.records.last().expect("at least one record");
    println!(
        "t = {}  dist2 = {:.3e}  grad calls = {}",
        last.t, last.dist2, traj.grad_calls
    );
    Ok(())
}
