use hyperem::nn::{dense_backward, dense_forward, DenseParams, Tensor};
use hyperem_testkit::contract::kernel_cases;
use hyperem_testkit::{check_tensors, oracle, random_tensor, GRAD_TOLERANCE};

#[test]
fn every_kernel_family_appears_and_passes() {
    let cases = kernel_cases(2, 99);
    for family in [
        "dense",
        "conv1x1",
        "conv3x3",
        "conv3x3/2",
        "conv7x7",
        "channel_norm",
        "upsample2x",
        "relu",
        "sigmoid",
        "reparameterize+kl",
    ] {
        assert_eq!(cases.iter().filter(|c| c.name.split(" #").next() == Some(family)).count(), 2, "{family}");
    }
    for c in &cases {
        assert!(c.report.passed(), "{}:\n{}", c.name, c.report);
        assert_eq!(c.report.threshold, GRAD_TOLERANCE);
    }
}

#[test]
fn checker_rejects_a_scaled_weight_gradient() {
    let x = random_tensor(1, &[3, 4], -1.0, 1.0);
    let p = DenseParams { weight: random_tensor(2, &[4, 2], -1.0, 1.0), bias: random_tensor(3, &[2], -1.0, 1.0) };
    let r = random_tensor(4, &[3, 2], -1.0, 1.0);
    let (_, dw, _) = dense_backward(&x, &p, &r).unwrap();
    let wrong: Vec<f64> = dw.data().iter().map(|g| g * 1.001).collect();
    let report = check_tensors(&["weight".to_string()], &[p.weight.data().to_vec()], &[wrong], |v| {
        let q = DenseParams { weight: Tensor::new(vec![4, 2], v[0].clone()).unwrap(), bias: p.bias.clone() };
        dense_forward(&x, &q).unwrap().dot(&r)
    });
    assert!(!report.passed());
    assert!((report.max_rel_error() - 1e-3).abs() < 1e-4, "{report}");
}

// a window covering the whole image with a very wide Gaussian weighs every
// pixel equally, which is the global-statistics formula
#[test]
fn windowed_ssim_oracle_reduces_to_global_statistics() {
    let x = random_tensor(5, &[49], 0.0, 1.0).into_data();
    let y = random_tensor(6, &[49], 0.0, 1.0).into_data();
    let windowed = oracle::ssim_windowed(&x, &y, 7, 7, 7, 1e6, 1.0);
    let global = oracle::ssim_global(&x, &y, 1.0);
    assert!((windowed - global).abs() < 1e-9, "{windowed} vs {global}");
}

#[test]
fn dense_oracle_matches_matmul_oracle() {
    let x = random_tensor(7, &[2, 3], -1.0, 1.0);
    let w = random_tensor(8, &[3, 4], -1.0, 1.0);
    let zero = Tensor::new(vec![4], vec![0.0; 4]).unwrap();
    let y = oracle::dense(&x, &w, &zero);
    assert_eq!(y.data(), oracle::matmul(x.data(), w.data(), 2, 3, 4).as_slice());
}
