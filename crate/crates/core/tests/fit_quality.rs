use weightforge_core::inr::{fit, psnr, render_image, MlpArchitecture};
use weightforge_core::synth::{SignalKind, SignalSpec};
use weightforge_core::tensor::Tensor;

#[test]
fn blob_fit_reaches_thirty_db() {
    let spec = SignalSpec::new(SignalKind::Blobs2d, 0, 11);
    let signal = spec.sample(0, 16, 1).unwrap();
    let arch = MlpArchitecture::mnist();
    let outcome = fit(&signal, &arch, 2000, 3e-3, 0).unwrap();
    let quality = -10.0 * outcome.final_mse.log10();
    assert!(quality >= 30.0, "fit PSNR {quality:.2} dB");

    // rendering at training resolution reproduces the target grid
    let img = render_image(&outcome.weights, 16).unwrap();
    let target = Tensor::new(vec![16, 16, 1], signal.targets.data().to_vec()).unwrap();
    assert!(psnr(&img, &target) >= 30.0);
}
