use mfunc::charfn::EvalPoint;
use mfunc::measures::MeasureFamily;
use mfunc::sampling::Sampler;

#[test]
fn exponential_moment_is_finite_and_stable_under_doubling() {
    let s = EvalPoint::real(0.75).unwrap();
    let sampler = Sampler::with_p_max(&MeasureFamily::SatoTate, s, 300).unwrap();
    let n = 1_000_000;
    let xs = sampler.draw_many(17, 0, 2 * n);
    let mean = |v: &[num_complex::Complex64]| v.iter().map(|w| (4.0 * w.re.abs()).exp()).sum::<f64>() / v.len() as f64;
    let (half, full) = (mean(&xs[..n]), mean(&xs));
    assert!(half.is_finite() && full.is_finite());
    let ratio = full / half;
    assert!((0.8..=1.25).contains(&ratio), "{half} vs {full}");
}
