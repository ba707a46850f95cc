//! Norm bounds, rotation distance and stability on small random networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sphcnn::conv::{conv, conv_bank, FilterBank, Kernel};
use sphcnn::ingest::{synth_signal, SynthKind};
use sphcnn::metrics::{
    equivariance_report, median, relative_rmse, rotation_distance, stability_report, Operator, StabilityOptions,
    DISTANCE_BUDGET,
};
use sphcnn::perturb::{make_smooth_diffeo, DiffeoField};
use sphcnn::scnn::{forward, random_filter, random_network, readout, Nonlinearity, RandomNetworkParams, Readout};
use sphcnn::{rotate_signal, EquiangularGrid, Rotation, So3Quadrature, SphericalSignal};

fn mixture(grid: EquiangularGrid, seed: u64) -> SphericalSignal {
    synth_signal(&SynthKind::GaussianMixture { n: 6, seed }, grid).unwrap()
}

#[test]
fn network_norm_obeys_the_cascade_bound() {
    let grid = EquiangularGrid::square(16);
    let q = So3Quadrature::for_grid(&grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let activations = [
        Nonlinearity::Relu,
        Nonlinearity::Abs,
        Nonlinearity::LeakyRelu { slope: -1.5 },
        Nonlinearity::ScaledTanh { gain: 0.7 },
    ];
    let mut worst = 0.0f64;
    for k in 0..50u64 {
        let f1 = rng.gen_range(1..4);
        let f2 = rng.gen_range(1..4);
        let mut params = RandomNetworkParams::new(vec![1, f1, f2], rng.gen_range(0.5..2.0));
        params.activation = activations[k as usize % activations.len()];
        let net = random_network(&params, k).unwrap();
        let x = mixture(grid, 100 + k);
        let y = forward(&net, &x, &q, Kernel::Zonal).unwrap();
        let l = net.depth() as i32;
        let bound = (net.c_sigma() * net.c_h()).powi(l) * (net.max_features() as f64).powi(l - 1) * x.norm();
        worst = worst.max(y.norm() / bound);
        assert!(y.norm() <= bound, "net {k}: {} > {bound}", y.norm());
    }
    assert!(worst > 0.0);
}

#[test]
fn bank_output_respects_the_per_feature_bound() {
    let grid = EquiangularGrid::square(16);
    let q = So3Quadrature::for_grid(&grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in 0..20u64 {
        let (f, g) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let filters = (0..f * g)
            .map(|_| random_filter(&mut rng, 1.0, (0.4, 1.2), 3).unwrap())
            .collect();
        let bank = FilterBank::new(f, g, filters).unwrap();
        let x = SphericalSignal::stack(&(0..f).map(|i| mixture(grid, 10 * k + i as u64)).collect::<Vec<_>>()).unwrap();
        let y = conv_bank(&bank, &x, &q, Kernel::Zonal).unwrap();
        assert!(y.norm() <= bank.norm_bound(&x).unwrap() * (1.0 + 1e-12));
    }
}

#[test]
fn readout_argmax_is_invariant_under_grid_rolls() {
    let grid = EquiangularGrid::square(16);
    let q = So3Quadrature::for_grid(&grid).unwrap();
    let net = random_network(&RandomNetworkParams::new(vec![1, 3, 4], 1.0), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = Readout::uniform((0..5).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect());
    for seed in 0..5 {
        let x = mixture(grid, seed);
        let s = readout(&forward(&net, &x, &q, Kernel::Zonal).unwrap(), &r).unwrap();
        for k in [1, 5, 11] {
            let sr = readout(&forward(&net, &x.roll_phi(k), &q, Kernel::Zonal).unwrap(), &r).unwrap();
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(argmax(&s), argmax(&sr));
            for (a, b) in s.iter().zip(&sr) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}

#[test]
fn relative_rmse_matches_constructed_noise() {
    let grid = EquiangularGrid::square(32);
    let a = mixture(grid, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let scale = 0.05 * rms(a.values()) / rms(&noise);
    let b = SphericalSignal::from_values(
        grid,
        1,
        a.values().iter().zip(&noise).map(|(x, n)| x + scale * n).collect(),
    )
    .unwrap();
    assert!((relative_rmse(&a, &b).unwrap() - 0.05).abs() < 2e-3);
}

#[test]
fn rotation_distance_floor_and_spread() {
    let grid = EquiangularGrid::square(32);
    let x = mixture(grid, 8);
    let floor = 3e-2 * x.norm();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut d = Vec::new();
    for _ in 0..10 {
        let r = Rotation::random(&mut rng);
        d.push(rotation_distance(&x, &rotate_signal(&x, &r), &DISTANCE_BUDGET).unwrap().distance);
    }
    let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    assert!(hi <= floor, "max distance {hi} above floor {floor}");
    assert!(hi - lo <= 2.0 * floor);
    let same = rotation_distance(&x, &x, &DISTANCE_BUDGET).unwrap();
    assert!(same.distance <= 1e-12);
    let roll = rotation_distance(&x, &x.roll_phi(7), &DISTANCE_BUDGET).unwrap();
    assert!(roll.distance <= 1e-10);
}

#[test]
fn rotated_inputs_give_rotation_close_outputs() {
    // When the inputs are a rotation apart, the outputs are within C_h times
    // the input distance plus the interpolation and search floor.
    let grid = EquiangularGrid::square(32);
    let q = So3Quadrature::for_grid(&grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let h = random_filter(&mut rng, 1.0, (0.6, 1.2), 3).unwrap();
    for seed in 0..3 {
        let x = mixture(grid, 40 + seed);
        let r = Rotation::random(&mut rng);
        let xr = rotate_signal(&x, &r);
        let d_in = rotation_distance(&x, &xr, &DISTANCE_BUDGET).unwrap().distance;
        let (y, yr) = (
            conv(&h, &x, &q, Kernel::Zonal).unwrap(),
            conv(&h, &xr, &q, Kernel::Zonal).unwrap(),
        );
        let d_out = rotation_distance(&y, &yr, &DISTANCE_BUDGET).unwrap().distance;
        let floor = 3e-2 * y.norm();
        assert!(d_out <= h.lipschitz_constant() * d_in + floor, "{d_out} vs {d_in}");
    }
}

#[test]
fn rotation_fields_sit_far_below_the_filter_bound() {
    let grid = EquiangularGrid::square(16);
    let q = So3Quadrature::for_grid(&grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let bank = FilterBank::single(random_filter(&mut rng, 1.0, (0.6, 1.2), 3).unwrap());
    let op = Operator::Filter {
        bank: &bank,
        quadrature: &q,
        kernel: Kernel::Zonal,
    };
    let x = mixture(grid, 2);
    let opts = StabilityOptions::default();
    let zero = stability_report(&op, &x, &DiffeoField::zero(grid), 0.1, &opts).unwrap();
    assert!(zero.measured_distance <= 1e-10 && zero.pass);
    // Tilts twist the shortest-arc frames near the poles, so the rotation
    // field with small raw sizes is an off-grid turn about z.
    let t = DiffeoField::azimuthal(grid, 0.05);
    let rep = stability_report(&op, &x, &t, 0.1, &opts).unwrap();
    assert!(rep.pass);
    assert!(rep.measured_distance <= 3e-2 * rep.norm_x);
    assert!(rep.slack_factor > 10.0);
}

#[test]
fn smooth_fields_pass_with_slack() {
    let grid = EquiangularGrid::square(32);
    let q = So3Quadrature::for_grid(&grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bank = FilterBank::single(random_filter(&mut rng, 1.0, (0.6, 1.2), 3).unwrap());
    let op = Operator::Filter {
        bank: &bank,
        quadrature: &q,
        kernel: Kernel::Zonal,
    };
    let opts = StabilityOptions::default();
    let slack: Vec<f64> = (0..20u64)
        .map(|seed| {
            let x = mixture(grid, seed);
            let t = make_smooth_diffeo(grid, 0.1, seed).unwrap();
            let rep = stability_report(&op, &x, &t, 0.1, &opts).unwrap();
            assert!(rep.pass, "seed {seed}: {rep:?}");
            rep.slack_factor
        })
        .collect();
    assert!(median(&slack) >= 3.0);
}

#[test]
fn network_equivariance_error_shrinks_with_resolution() {
    let net = random_network(&RandomNetworkParams::new(vec![1, 4, 4, 8], 1.0), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rotations: Vec<Rotation> = (0..5).map(|_| Rotation::random(&mut rng)).collect();
    let errors: Vec<f64> = [16, 32]
        .iter()
        .map(|&n| {
            let grid = EquiangularGrid::square(n);
            let q = So3Quadrature::for_grid(&grid).unwrap();
            let x = mixture(grid, 1);
            let op = Operator::Network {
                net: &net,
                quadrature: &q,
                kernel: Kernel::Zonal,
            };
            let e: Vec<f64> = rotations
                .iter()
                .map(|r| equivariance_report(&op, &x, r, None).unwrap().relative_rmse)
                .collect();
            median(&e)
        })
        .collect();
    assert!(errors[1] <= 5e-2);
    assert!(errors[1] < errors[0] / 2.0, "{errors:?}");
}
