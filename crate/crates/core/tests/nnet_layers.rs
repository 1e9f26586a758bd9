use bnfake::nnet::{
    bidirectional_gru, conv1d_forward, dropout, gru_sequence, gru_step, lstm_sequence, lstm_step,
    pool, sigmoid, DropoutMode, GruParams, LstmParams, PoolMode, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn matvec(w: &Tensor<f64>, rows: std::ops::Range<usize>, v: &[f64]) -> Vec<f64> {
    rows.map(|r| w.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gru_params(rng: &mut ChaCha8Rng, d: usize, h: usize, scale: f64) -> GruParams<f64> {
    GruParams {
        w_input: rand_tensor(rng, &[3 * h, d], scale),
        w_hidden: rand_tensor(rng, &[3 * h, h], scale),
        bias: rand_tensor(rng, &[3 * h], scale),
    }
}

fn lstm_params(rng: &mut ChaCha8Rng, d: usize, h: usize, scale: f64) -> LstmParams<f64> {
    LstmParams {
        w_input: rand_tensor(rng, &[4 * h, d], scale),
        w_hidden: rand_tensor(rng, &[4 * h, h], scale),
        bias: rand_tensor(rng, &[4 * h], scale),
    }
}

/// Textbook GRU update, gate blocks ordered z, r, candidate.
fn gru_oracle(x: &[f64], hp: &[f64], p: &GruParams<f64>) -> Vec<f64> {
    let h = hp.len();
    let b = p.bias.data();
    let wx_z = matvec(&p.w_input, 0..h, x);
    let wx_r = matvec(&p.w_input, h..2 * h, x);
    let wx_c = matvec(&p.w_input, 2 * h..3 * h, x);
    let uh_z = matvec(&p.w_hidden, 0..h, hp);
    let uh_r = matvec(&p.w_hidden, h..2 * h, hp);
    let z: Vec<f64> = (0..h).map(|j| logistic(wx_z[j] + uh_z[j] + b[j])).collect();
    let r: Vec<f64> = (0..h)
        .map(|j| logistic(wx_r[j] + uh_r[j] + b[h + j]))
        .collect();
    let rh: Vec<f64> = (0..h).map(|j| r[j] * hp[j]).collect();
    let uh_c = matvec(&p.w_hidden, 2 * h..3 * h, &rh);
    (0..h)
        .map(|j| {
            let c = (wx_c[j] + uh_c[j] + b[2 * h + j]).tanh();
            (1.0 - z[j]) * hp[j] + z[j] * c
        })
        .collect()
}

/// Textbook LSTM update, gate blocks ordered i, f, g, o.
fn lstm_oracle(x: &[f64], hp: &[f64], cp: &[f64], p: &LstmParams<f64>) -> (Vec<f64>, Vec<f64>) {
    let h = hp.len();
    let a: Vec<f64> = (0..4 * h)
        .map(|r| {
            let wx: f64 = p.w_input.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
            let uh: f64 = p.w_hidden.row(r).iter().zip(hp).map(|(a, b)| a * b).sum();
            wx + uh + p.bias.data()[r]
        })
        .collect();
    let mut hs = vec![0.0; h];
    let mut cs = vec![0.0; h];
    for j in 0..h {
        let (i, f, g, o) = (
            logistic(a[j]),
            logistic(a[h + j]),
            a[2 * h + j].tanh(),
            logistic(a[3 * h + j]),
        );
        cs[j] = f * cp[j] + i * g;
        hs[j] = o * cs[j].tanh();
    }
    (hs, cs)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn gru_step_matches_textbook_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let p = gru_params(&mut rng, 5, 4, 1.0);
        let x = rand_tensor(&mut rng, &[5], 2.0);
        let hp = rand_tensor(&mut rng, &[4], 1.0);
        let got = gru_step(&x, &hp, &p).unwrap();
        assert!(max_abs_diff(got.data(), &gru_oracle(x.data(), hp.data(), &p)) < 1e-12);
    }
}

#[test]
fn lstm_step_matches_textbook_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let p = lstm_params(&mut rng, 3, 3, 1.0);
        let x = rand_tensor(&mut rng, &[3], 2.0);
        let hp = rand_tensor(&mut rng, &[3], 1.0);
        let cp = rand_tensor(&mut rng, &[3], 2.0);
        let (h, c) = lstm_step(&x, (&hp, &cp), &p).unwrap();
        let (oh, oc) = lstm_oracle(x.data(), hp.data(), cp.data(), &p);
        assert!(max_abs_diff(h.data(), &oh) < 1e-12);
        assert!(max_abs_diff(c.data(), &oc) < 1e-12);
    }
}

#[test]
fn sequences_chain_single_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = gru_params(&mut rng, 4, 3, 1.0);
    let lp = lstm_params(&mut rng, 4, 3, 1.0);
    let x = rand_tensor(&mut rng, &[6, 4], 1.0);
    let seq = gru_sequence(&x, None, &p, false).unwrap();
    let lseq = lstm_sequence(&x, &lp).unwrap();
    let mut h = vec![0.0; 3];
    let (mut lh, mut lc) = (vec![0.0; 3], vec![0.0; 3]);
    for t in 0..6 {
        h = gru_oracle(x.row(t), &h, &p);
        assert!(max_abs_diff(seq.row(t), &h) < 1e-12);
        (lh, lc) = lstm_oracle(x.row(t), &lh, &lc, &lp);
        assert!(max_abs_diff(lseq.row(t), &lh) < 1e-12);
    }
}

#[test]
fn reverse_direction_is_the_forward_scan_of_the_reversed_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fwd = gru_params(&mut rng, 3, 2, 1.0);
    let bwd = gru_params(&mut rng, 3, 2, 1.0);
    let x = rand_tensor(&mut rng, &[5, 3], 1.0);
    let both = bidirectional_gru(&x, &fwd, &bwd).unwrap();
    assert_eq!(both.shape(), &[5, 4]);
    let mut rev_rows: Vec<f64> = Vec::new();
    for t in (0..5).rev() {
        rev_rows.extend_from_slice(x.row(t));
    }
    let xr = Tensor::from_vec(&[5, 3], rev_rows).unwrap();
    let scan = gru_sequence(&xr, None, &bwd, false).unwrap();
    let f = gru_sequence(&x, None, &fwd, false).unwrap();
    for t in 0..5 {
        assert_eq!(&both.row(t)[..2], f.row(t));
        assert!(max_abs_diff(&both.row(t)[2..], scan.row(4 - t)) < 1e-12);
    }
}

#[test]
fn recurrent_states_stay_bounded_for_extreme_inputs() {
    // Gates in (0, 1) make the GRU state a convex mix of values in [-1, 1]
    // and bound the LSTM output by the tanh of the cell.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = gru_params(&mut rng, 4, 8, 5.0);
    let lp = lstm_params(&mut rng, 4, 8, 5.0);
    let x = rand_tensor(&mut rng, &[50, 4], 100.0);
    let h = gru_sequence(&x, None, &p, false).unwrap();
    assert!(h.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    let lh = lstm_sequence(&x, &lp).unwrap();
    assert!(lh.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    for v in [-800.0f64, -30.0, 0.0, 30.0, 800.0] {
        let s = sigmoid(v);
        assert!((0.0..=1.0).contains(&s) && s.is_finite());
    }
    assert!(sigmoid(-5.0f64) > 0.0 && sigmoid(5.0f64) < 1.0);
}

#[test]
fn conv1d_matches_naive_cross_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (l, d, k, f) = (9, 3, 4, 5);
    let x = rand_tensor(&mut rng, &[l, d], 1.0);
    let kernels = rand_tensor(&mut rng, &[f, k, d], 1.0);
    let bias = rand_tensor(&mut rng, &[f], 1.0);
    let y = conv1d_forward(&x, &kernels, &bias).unwrap();
    assert_eq!(y.shape(), &[l - k + 1, f]);
    let kd = kernels.data();
    for t in 0..l - k + 1 {
        for j in 0..f {
            let mut acc = bias.data()[j];
            for s in 0..k {
                for c in 0..d {
                    acc += kd[(j * k + s) * d + c] * x.row(t + s)[c];
                }
            }
            assert!((y.row(t)[j] - acc.max(0.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn shape_algebra_across_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = gru_params(&mut rng, 6, 4, 0.5);
    let lp = lstm_params(&mut rng, 6, 4, 0.5);
    let kernels = rand_tensor(&mut rng, &[8, 5, 6], 0.5);
    let bias = rand_tensor(&mut rng, &[8], 0.5);
    for l in [1usize, 7, 300] {
        let x = rand_tensor(&mut rng, &[l, 6], 1.0);
        assert_eq!(bidirectional_gru(&x, &p, &p).unwrap().shape(), &[l, 8]);
        assert_eq!(lstm_sequence(&x, &lp).unwrap().shape(), &[l, 4]);
        assert_eq!(pool(&x, PoolMode::GlobalAvg, None).unwrap().shape(), &[6]);
        assert_eq!(pool(&x, PoolMode::GlobalMax, None).unwrap().shape(), &[6]);
        if l >= 2 {
            assert_eq!(
                pool(&x, PoolMode::MaxWindow(2), None).unwrap().shape(),
                &[l / 2, 6]
            );
        } else {
            assert!(pool(&x, PoolMode::MaxWindow(2), None).is_err());
        }
        match conv1d_forward(&x, &kernels, &bias) {
            Ok(y) => assert_eq!(y.shape(), &[l - 4, 8]),
            Err(_) => assert!(l < 5),
        }
    }
}

#[test]
fn masked_average_equals_plain_average_of_the_prefix() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, &[10, 3], 1.0);
    let all = pool(&x, PoolMode::GlobalAvg, None).unwrap();
    assert_eq!(all, pool(&x, PoolMode::GlobalAvg, Some(10)).unwrap());
    for valid in 1..=10 {
        let masked = pool(&x, PoolMode::GlobalAvg, Some(valid)).unwrap();
        let prefix = Tensor::from_vec(&[valid, 3], x.data()[..valid * 3].to_vec()).unwrap();
        let plain = pool(&prefix, PoolMode::GlobalAvg, None).unwrap();
        assert!(max_abs_diff(masked.data(), plain.data()) < 1e-15);
    }
    // zero valid rows clamp to the first row
    let clamped = pool(&x, PoolMode::GlobalAvg, Some(0)).unwrap();
    assert_eq!(clamped.data(), x.row(0));
}

#[test]
fn forward_passes_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = gru_params(&mut rng, 5, 6, 1.0);
    let x = rand_tensor(&mut rng, &[40, 5], 1.0);
    let a = bidirectional_gru(&x, &p, &p).unwrap();
    let b = bidirectional_gru(&x, &p, &p).unwrap();
    let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn dropout_zeroes_at_the_requested_rate_and_rescales_survivors() {
    let x = Tensor::from_vec(&[10_000], vec![1.0f64; 10_000]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let y = dropout(&x, 0.3, DropoutMode::Train, &mut rng);
    let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 10_000.0;
    assert!((zeros - 0.3).abs() < 0.02, "zero fraction {zeros}");
    assert!(y
        .data()
        .iter()
        .all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12));
    assert_eq!(dropout(&x, 0.3, DropoutMode::Infer, &mut rng), x);
}
