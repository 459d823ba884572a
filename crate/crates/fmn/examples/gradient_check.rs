//! Verify analytic gradients against central differences on a miniature
//! network, in both storage types.
//!
//! The f64 check differentiates the same graph it perturbs. The f32 check is
//! mixed-precision: the analytic gradient comes from the f32 graph, while the
//! numeric reference evaluates an exact f64 copy of the f32-quantized
//! parameters — pure f32 differencing would drown in rounding error long
//! before reaching the tolerance.
//!
//! ```sh
//! cargo run --example gradient_check
//! ```

use fmn::network::{MaskTap, NetworkConfig, NetworkParams};
use fmn::rng::Rng;
use fmn::tensor::Tensor;
use fmn::train::{
    check_parameter_gradient, check_single_precision_gradient, default_check_targets,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Small planes and few channels keep the numeric side fast; the op set
    // exercised is identical to the full-size network.
    let config = NetworkConfig {
        input_channels: 3,
        input_height: 16,
        input_width: 8,
        stem_stride: 1,
        channels: [4, 8, 8, 8],
        blocks_per_stage: 1,
        feature_dim: 8,
        num_classes: 4,
        mask_tap: MaskTap::Res4,
    };

    // Batch of four random images; batch size one would make the norm layers
    // degenerate (zero variance), which is not the case being verified.
    let mut rng = Rng::stream(0xC0FFEE, 7);
    let shape = [4, 3, 16, 8];
    let values: Vec<f64> = (0..shape.iter().product())
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();
    let labels = [0usize, 1, 2, 3];
    let margin = 0.2;

    let params64 = NetworkParams::<f64>::init(&config, &mut Rng::stream(7, 3))?;
    let images64 = Tensor::<f64>::from_f64(&shape, &values)?;
    println!("f64 analytic vs f64 central differences (eps 1e-5, tol 1e-5):");
    for name in default_check_targets(&params64) {
        let report = check_parameter_gradient(&params64, &name, &images64, &labels, margin, 1e-5, 6)?;
        status(&report.name, report.max_relative_error, 1e-5);
    }

    let params32: NetworkParams<f32> = params64.cast();
    let images32: Tensor<f32> = images64.cast();
    println!("\nf32 analytic vs f64 central differences at the f32 point (eps 1e-5, tol 1e-3):");
    for name in default_check_targets(&params32) {
        let report =
            check_single_precision_gradient(&params32, &name, &images32, &labels, margin, 1e-5, 6)?;
        status(&report.name, report.max_relative_error, 1e-3);
    }
    Ok(())
}

fn status(name: &str, err: f64, tol: f64) {
    let verdict = if err < tol { "ok" } else { "FAIL" };
    println!("  {name:34} max rel err {err:10.3e}  {verdict}");
}
