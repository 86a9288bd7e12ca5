//! Second, independent implementation of the point-cloud metric suite,
//! written as plain nested loops over Vec<Vec<f64>> clouds, compared for
//! exact equality against the library.

use weightforge_core::metrics::{chamfer, mmd_cov_1nna};
use weightforge_core::rng::rng_stream;
use weightforge_core::tensor::Tensor;

type Cloud = Vec<Vec<f64>>;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

fn naive_chamfer(a: &Cloud, b: &Cloud) -> f64 {
    let mut ab = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = sq(p, q);
            if d < best {
                best = d;
            }
        }
        ab += best;
    }
    let mut ba = 0.0;
    for q in b {
        let mut best = f64::INFINITY;
        for p in a {
            let d = sq(q, p);
            if d < best {
                best = d;
            }
        }
        ba += best;
    }
    ab / a.len() as f64 + ba / b.len() as f64
}

fn naive_suite(gen: &[Cloud], rf: &[Cloud]) -> (f64, f64, f64) {
    // MMD: per reference, the closest generated set
    let mut mmd = 0.0;
    for r in rf {
        let mut best = f64::INFINITY;
        for g in gen {
            best = best.min(naive_chamfer(g, r));
        }
        mmd += best;
    }
    mmd /= rf.len() as f64;

    // COV: distinct references that are someone's nearest
    let mut hit = vec![false; rf.len()];
    for g in gen {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, r) in rf.iter().enumerate() {
            let d = naive_chamfer(g, r);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        hit[best] = true;
    }
    let cov = hit.iter().filter(|&&h| h).count() as f64 * 100.0 / rf.len() as f64;

    // 1-NNA, leave-one-out over the union, with the same duplicate and tie
    // conventions the library documents: positive-distance neighbors only,
    // fractional credit on exact ties.
    let all: Vec<(&Cloud, bool)> = gen
        .iter()
        .map(|c| (c, true))
        .chain(rf.iter().map(|c| (c, false)))
        .collect();
    let mut correct = 0.0;
    for (i, (ci, li)) in all.iter().enumerate() {
        let mut dmin = f64::INFINITY;
        for (j, (cj, _)) in all.iter().enumerate() {
            if i != j {
                let d = naive_chamfer(ci, cj);
                if d > 0.0 && d < dmin {
                    dmin = d;
                }
            }
        }
        if dmin == f64::INFINITY {
            correct += 0.5;
            continue;
        }
        let (mut same, mut diff) = (0.0, 0.0);
        for (j, (cj, lj)) in all.iter().enumerate() {
            if i != j && naive_chamfer(ci, cj) == dmin {
                if lj == li {
                    same += 1.0;
                } else {
                    diff += 1.0;
                }
            }
        }
        correct += same / (same + diff);
    }
    (mmd, cov, correct * 100.0 / all.len() as f64)
}

fn cloud_tensor(c: &Cloud) -> Tensor {
    Tensor::new(
        vec![c.len(), c[0].len()],
        c.iter().flatten().copied().collect(),
    )
    .unwrap()
}

fn random_cloud(n: usize, seed: u64) -> Cloud {
    let mut rng = rng_stream(seed, 0);
    let t = Tensor::rand_uniform(&[n, 3], -1.0, 1.0, &mut rng);
    t.data().chunks(3).map(|c| c.to_vec()).collect()
}

#[test]
fn suite_matches_naive_implementation_exactly() {
    for trial in 0..10u64 {
        let gen: Vec<Cloud> = (0..4).map(|i| random_cloud(5, 100 * trial + i)).collect();
        let rf: Vec<Cloud> = (0..4).map(|i| random_cloud(5, 100 * trial + 50 + i)).collect();
        let gen_t: Vec<Tensor> = gen.iter().map(cloud_tensor).collect();
        let rf_t: Vec<Tensor> = rf.iter().map(cloud_tensor).collect();

        for (g, gt) in gen.iter().zip(&gen_t) {
            for (r, rt) in rf.iter().zip(&rf_t) {
                assert_eq!(chamfer(gt, rt).unwrap(), naive_chamfer(g, r), "trial {trial}");
            }
        }
        let got = mmd_cov_1nna(&gen_t, &rf_t).unwrap();
        let want = naive_suite(&gen, &rf);
        assert_eq!(got, want, "trial {trial}");
    }
}

#[test]
fn suite_matches_naive_with_planted_duplicates() {
    // duplicates across the lists exercise the zero-distance exclusion
    let base: Vec<Cloud> = (0..3).map(|i| random_cloud(4, 900 + i)).collect();
    let gen = vec![base[0].clone(), base[1].clone(), base[2].clone()];
    let rf = vec![base[0].clone(), base[2].clone(), random_cloud(4, 990)];
    let gen_t: Vec<Tensor> = gen.iter().map(cloud_tensor).collect();
    let rf_t: Vec<Tensor> = rf.iter().map(cloud_tensor).collect();
    assert_eq!(mmd_cov_1nna(&gen_t, &rf_t).unwrap(), naive_suite(&gen, &rf));
}
