use super::*;
use crate::netgraph::{conv_forward, forward, Act, BranchSpec, ConvDim, ConvWeights, Frame, FusionMode, Matrix, ModelParams, ModelSpec};
use crate::quantizer::{calibrate, quantize, storage_format, QuantConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn lane(n: u32, factor: f64) -> LaneConfig {
    let (mult, shift) = fxp::factor_to_mult_shift(factor, 15).unwrap();
    LaneConfig {
        requant: Requant { mult, shift },
        fmt: storage_format(n).unwrap(),
        acc_bits: 48,
    }
}

fn iact(t: usize, s: usize, c: usize, data: Vec<i64>) -> IAct {
    IAct { t, s, c, data }
}

#[test]
fn identity_tap_passes_relu_of_input() {
    let n = 8;
    let w = QConvWeights {
        kt: 1,
        ks: 1,
        cin: 1,
        cout: 1,
        data: vec![1 << n],
    };
    let x = iact(5, 1, 1, vec![-200, -1, 0, 3, 255]);
    let y = qconv_layer(&x, &w, lane(n, 1.0 / 256.0), Pool::default()).unwrap();
    assert_eq!(y.data, vec![0, 0, 0, 3, 255]);
}

#[test]
fn global_pool_of_constant_stream() {
    let w = QConvWeights {
        kt: 2,
        ks: 1,
        cin: 1,
        cout: 2,
        data: vec![64, 64, 64, 128],
    };
    let x = iact(6, 1, 1, vec![40; 6]);
    let y = qconv_layer(
        &x,
        &w,
        lane(7, 1.0 / 128.0),
        Pool {
            kernel: None,
            global: true,
        },
    )
    .unwrap();
    assert_eq!((y.t, y.s, y.c), (1, 1, 2));
    assert_eq!(y.data, vec![40, 60]);
}

#[test]
fn kernel_pool_drops_the_remainder() {
    let w = QConvWeights {
        kt: 1,
        ks: 1,
        cin: 1,
        cout: 1,
        data: vec![1],
    };
    let x = iact(7, 1, 1, vec![1, 5, 2, 2, 9, 0, 100]);
    let y = qconv_layer(
        &x,
        &w,
        lane(10, 1.0),
        Pool {
            kernel: Some(2),
            global: false,
        },
    )
    .unwrap();
    assert_eq!(y.data, vec![5, 2, 9]);
    let g = qconv_layer(
        &x,
        &w,
        lane(10, 1.0),
        Pool {
            kernel: Some(2),
            global: true,
        },
    )
    .unwrap();
    assert_eq!(g.data, vec![9]);
}

#[test]
fn undersized_accumulator_overflows() {
    let w = QConvWeights {
        kt: 3,
        ks: 1,
        cin: 1,
        cout: 1,
        data: vec![511; 3],
    };
    let x = iact(3, 1, 1, vec![511; 3]);
    let mut l = lane(9, 1.0 / 512.0);
    l.acc_bits = 18;
    assert!(matches!(
        qconv_layer(&x, &w, l, Pool::default()),
        Err(EngineError::Fx(FxError::AccumulatorOverflow { .. }))
    ));
    l.acc_bits = 21;
    qconv_layer(&x, &w, l, Pool::default()).unwrap();
}

fn rand_qconv(rng: &mut impl Rng, kt: usize, ks: usize, cin: usize, cout: usize, n: u32) -> QConvWeights {
    let top = (1i64 << n) - 1;
    QConvWeights {
        kt,
        ks,
        cin,
        cout,
        data: (0..kt * ks * cin * cout).map(|_| rng.random_range(-top..=top)).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_within_one_ulp_of_fp(seed in any::<u64>(), n in 4u32..14, d2 in any::<bool>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (kt, ks, cin) = if d2 { (2, 2, 1) } else { (3, 1, 3) };
        let (t, s) = (7, if d2 { 4 } else { 1 });
        let cout = 3;
        let top = (1i64 << n) - 1;
        let w = rand_qconv(&mut rng, kt, ks, cin, cout, n);
        let x = iact(t, s, cin, (0..t * s * cin).map(|_| rng.random_range(-top..=top)).collect());
        let (s_in, r) = (rng.random_range(0.2..1.5), rng.random_range(0.2..1.5));
        let two_n = (1i64 << n) as f64;
        let y = qconv_layer(&x, &w, lane(n, s_in / two_n), Pool::default()).unwrap();

        let fw = ConvWeights { kt, ks, cin, cout, data: w.data.iter().map(|&v| v as f64 / two_n * r).collect() };
        let fx = Act { t, s, c: cin, data: x.data.iter().map(|&v| v as f64 / two_n * s_in).collect() };
        let fy = conv_forward(&fx, &fw, true, None).unwrap();
        let ulp = r / two_n;
        for (&q, &f) in y.data.iter().zip(&fy.data) {
            let clipped = f.min(top as f64 * ulp);
            prop_assert!((q as f64 * ulp - clipped).abs() <= ulp, "q={q} f={f}");
        }
    }
}

#[test]
fn dense_examples() {
    let w = QDenseWeights {
        inputs: 3,
        outputs: 2,
        data: vec![5, -3, 7, 2, -1, 4],
    };
    let l = lane(8, 0.25);
    assert_eq!(qdense_layer(&[0, 0, 0], &w, l, true).unwrap(), vec![0, 0]);
    let one = QDenseWeights {
        inputs: 1,
        outputs: 1,
        data: vec![-37],
    };
    let acc = fxp::Accumulator::with_value(-37 * 11, 48).unwrap();
    assert_eq!(
        qdense_layer(&[11], &one, l, false).unwrap(),
        vec![fxp::requantize(acc, l.requant.mult, l.requant.shift, l.fmt, false)]
    );
    // brute force: x · W with the same rounding
    let x = [9, -4, 13];
    let raw = qdense_raw(&x, &w, 48).unwrap();
    assert_eq!(raw, vec![9 * 5 - 4 * 7 - 13, -9 * 3 - 4 * 2 + 13 * 4]);
    let got = qdense_layer(&x, &w, l, true).unwrap();
    assert_eq!(got, vec![1, 4]);
    assert!(qdense_layer(&[1, 2], &w, l, true).is_err());
}

fn spec(alpha: bool) -> ModelSpec {
    let mut a = BranchSpec::new_1d("a", 3, 14, 4, 3);
    a.layers[0].pool = Some(2);
    ModelSpec {
        branches: vec![a, BranchSpec::uniform("b", 6, 8, ConvDim::D2, 4, 2)],
        hidden: 7,
        classes: 4,
        fusion: FusionMode::FeatureFusion,
        alpha,
    }
}

fn frames(spec: &ModelSpec, seed: u64, n: usize) -> Vec<Frame> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Frame {
            inputs: spec
                .branches
                .iter()
                .map(|b| {
                    let d = (0..b.timesteps * b.channels).map(|_| rng.random_range(-1.0..=1.0)).collect();
                    Matrix::from_vec(b.timesteps, b.channels, d).unwrap()
                })
                .collect(),
        })
        .collect()
}

#[test]
fn schedules_agree_and_zero_frame_is_class_zero() {
    for alpha in [false, true] {
        let sp = spec(alpha);
        let mut p = ModelParams::init(&sp, 3).unwrap();
        if alpha {
            p.alpha = Some(vec![0.7, -0.1]);
        }
        let fs = frames(&sp, 4, 10);
        let st = calibrate(&sp, &p, &fs).unwrap();
        let q = quantize(&sp, &p, &st, &QuantConfig::bits(10)).unwrap();
        for f in &fs {
            let qf = q.quantize_frame(f).unwrap();
            let (a, ra) = qinfer(&q, &qf, Schedule::Serial).unwrap();
            let (b, rb) = qinfer(&q, &qf, Schedule::Parallel).unwrap();
            assert_eq!(a, b);
            assert!(ra.total_cycles >= rb.total_cycles);
        }
        let zero = q.quantize_frame(&Frame::zeros(&sp)).unwrap();
        let tr = qforward(&q, &zero).unwrap();
        assert!(tr.logits.iter().all(|&v| v == 0));
        assert_eq!(tr.class, 0);
    }
}

#[test]
fn agrees_with_fp_argmax_at_high_precision() {
    let sp = spec(true);
    let mut p = ModelParams::init(&sp, 21).unwrap();
    p.alpha = Some(vec![0.2, -0.3]);
    let fs = frames(&sp, 22, 400);
    let st = calibrate(&sp, &p, &fs).unwrap();
    for n in [14, 16] {
        let q = quantize(&sp, &p, &st, &QuantConfig::bits(n)).unwrap();
        let agree = fs
            .iter()
            .filter(|f| qforward(&q, &q.quantize_frame(f).unwrap()).unwrap().class == forward(&sp, &p, f).unwrap().1)
            .count();
        assert!(agree as f64 >= 0.99 * fs.len() as f64, "n={n}: {agree}/400");
    }
}

#[test]
fn cycle_cost_examples() {
    let conv = |c, p, k| LayerCost::Conv {
        in_channels: c,
        positions: p,
        kernel_size: k,
    };
    assert_eq!(cycle_cost(conv(2, 4, 3), 0), 24);
    assert_eq!(cycle_cost(conv(1, 17, 1), 0), 17);
    assert_eq!(cycle_cost(conv(6, 9, 5), 0), 2 * cycle_cost(conv(3, 9, 5), 0));
    assert_eq!(cycle_cost(conv(2, 4, 3), 5), 29);
    let dense = LayerCost::Dense {
        inputs: 10,
        outputs: 7,
        lanes: 4,
    };
    assert_eq!(cycle_cost(dense, 1), 19);
}

#[test]
fn schedule_latency_example() {
    let b = [1200, 800, 1500, 1000];
    let s = schedule_latency(&b, 300, Schedule::Serial, 100e6).unwrap();
    let p = schedule_latency(&b, 300, Schedule::Parallel, 100e6).unwrap();
    assert_eq!((s.total_cycles, p.total_cycles), (4800, 1800));
    assert!((s.latency_s - 48e-6).abs() < 1e-15);
    assert!((p.latency_s - 18e-6).abs() < 1e-15);
    assert!((p.throughput - 100e6 / 1800.0).abs() < 1e-6);
    let one = [777];
    assert_eq!(
        schedule_latency(&one, 5, Schedule::Serial, 1e6).unwrap().total_cycles,
        schedule_latency(&one, 5, Schedule::Parallel, 1e6).unwrap().total_cycles
    );
    assert!(matches!(schedule_latency(&[], 1, Schedule::Serial, 1.0), Err(EngineError::NoBranches)));
    assert!(schedule_latency(&one, 1, Schedule::Serial, 0.0).is_err());
}

#[test]
fn schedule_parses_and_prints() {
    for s in Schedule::ALL {
        assert_eq!(s.to_string().parse::<Schedule>().unwrap(), s);
    }
    assert!("both".parse::<Schedule>().is_err());
}

#[test]
fn resources_scale_with_width() {
    let sp = spec(false);
    let cost = CostModel::default();
    for sched in Schedule::ALL {
        let r9 = estimate_resources(&sp, sched, 9, &cost).unwrap();
        let r11 = estimate_resources(&sp, sched, 11, &cost).unwrap();
        assert_eq!(r11.multiplier_units, 2 * r9.multiplier_units);
        assert_eq!(r9.memory_bits * 11, r11.memory_bits * 9);
        assert_eq!(r9.memory_bits, (r9.weight_words + r9.buffer_words) as u64 * 9);
    }
    let ser = estimate_resources(&sp, Schedule::Serial, 9, &cost).unwrap();
    let par = estimate_resources(&sp, Schedule::Parallel, 9, &cost).unwrap();
    assert!(par.mac_lanes >= ser.mac_lanes && par.buffer_words >= ser.buffer_words);
    for w in 2..=40 {
        let r = estimate_resources(&sp, Schedule::Serial, w, &cost).unwrap();
        assert_eq!(r.multiplier_units, r.mac_lanes * (w as usize).div_ceil(9));
    }
    assert!(estimate_resources(&sp, Schedule::Serial, 1, &cost).is_err());
}

#[test]
fn table_has_one_row_per_pair() {
    let sp = spec(false);
    let rows = report_rows(&sp, &[9, 11], &Schedule::ALL, &CostModel::default()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[2].multiplier_units, 2 * rows[0].multiplier_units);
    let csv = table_csv(&rows);
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().nth(1).unwrap().starts_with("8,9,serial,"));
}

#[test]
fn model_cycles_compose_layers() {
    let sp = spec(false);
    let cost = CostModel {
        kappa: 0,
        ..CostModel::default()
    };
    let r = model_cycles(&sp, Schedule::Serial, &cost).unwrap();
    // branch a: 3 ch × 12 positions × 3 taps, pool to 6, then 4 × 4 × 3 and 4 × 2 × 3
    assert_eq!(r.layer_cycles[0], vec![108, 48, 24]);
    assert_eq!(r.branch_cycles.iter().sum::<u64>() + r.dense_cycles, r.total_cycles);
}
