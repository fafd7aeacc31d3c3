use leakmeter::linalg::{svd, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[test]
fn probe_singular_values() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let base: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut rows = Vec::new();
    for r in &base {
        let mut row = r.clone();
        row.push(r[0]);
        rows.push(row);
    }
    let x = Mat::from_rows(rows);
    // center columns
    let n = x.rows();
    let mut means = vec![0.0; 4];
    for i in 0..n { for j in 0..4 { means[j] += x.get(i, j); } }
    for m in means.iter_mut() { *m /= n as f64; }
    let mut xc = x.clone();
    for i in 0..n { for j in 0..4 { xc.set(i, j, xc.get(i, j) - means[j]); } }
    let cov = xc.gram().scale(1.0 / (n as f64 - 1.0));
    let dec = svd(&cov).unwrap();
    println!("singular values: {:?}", dec.s);
    println!("ratios: {:?}", dec.s.iter().map(|s| s / dec.s[0]).collect::<Vec<_>>());
}
