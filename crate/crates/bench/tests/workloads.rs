use mfp_bench::{fp4_probes, gptq_problem, weights};

#[test]
fn workloads_are_deterministic() {
    assert_eq!(weights(8, 64), weights(8, 64));
    let (w, h) = gptq_problem(4, 32);
    let (w2, h2) = gptq_problem(4, 32);
    assert_eq!(w, w2);
    assert_eq!(h.raw(), h2.raw());
    assert_eq!(h.dim(), 32);
    assert_eq!(h.sample_count(), 128);
}

#[test]
fn probes_cover_the_grid() {
    let p = fp4_probes(1000);
    assert_eq!(p.len(), 1000);
    assert!(p[0] < -6.0 && *p.last().unwrap() > 6.0);
    assert!(p.windows(2).all(|w| w[0] < w[1]));
}
