use proptest::prelude::*;

use tgan_core::data::{self, Dataset, IdxImages, IdxLabels, RingSpec};
use tgan_core::eval::{self, inception_from_probs, loss_equilibrium, mode_coverage};
use tgan_core::gan::{self, GMode};
use tgan_core::gradcheck::check_gradients;
use tgan_core::latent::{self, AttentionNet, LatentConfig, LatentPipeline};
use tgan_core::nn::{bind, Module};
use tgan_core::tdist::{self, TDistParams, VerifyConfig};
use tgan_core::{Graph, Rng, Tensor, TensorError};

fn finite_vec(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_is_a_shift_invariant_probability_vector(xs in finite_vec(1..=12), shift in -100.0f64..100.0) {
        let mut g = Graph::new();
        let n = xs.len();
        let x = g.constant(Tensor::new([1, n], xs.clone()).unwrap()).unwrap();
        let s = g.softmax(x).unwrap();
        let shifted = g.constant(Tensor::new([1, n], xs.iter().map(|v| v + shift).collect()).unwrap()).unwrap();
        let s2 = g.softmax(shifted).unwrap();
        let p = g.value(s).data().to_vec();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for (a, b) in p.iter().zip(g.value(s2).data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_entries_are_strictly_inside_unit_interval(xs in prop::collection::vec(-5.0f64..5.0, 2..=8)) {
        let mut g = Graph::new();
        let n = xs.len();
        let x = g.constant(Tensor::new([1, n], xs).unwrap()).unwrap();
        let s = g.softmax(x).unwrap();
        prop_assert!(g.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn mean_over_rows_scales_single_row_gradient(row in prop::collection::vec(-2.0f64..2.0, 3), b in 1usize..6) {
        let w = Tensor::new([3, 2], vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7]).unwrap();
        let grad_for = |rows: usize| {
            let mut g = Graph::new();
            let wv = g.param(w.clone()).unwrap();
            let x = g.constant(Tensor::new([rows, 3], row.repeat(rows)).unwrap()).unwrap();
            let y = g.matmul(x, wv).unwrap();
            let y = g.tanh(y).unwrap();
            let m = g.mean(y).unwrap();
            g.backward(m).unwrap();
            g.grad(wv).unwrap().clone()
        };
        let one = grad_for(1);
        let many = grad_for(b);
        // mean over b·2 entries versus 2: identical rows give the same gradient
        for (a, c) in one.data().iter().zip(many.data()) {
            prop_assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_accumulates_without_reset(x0 in -3.0f64..3.0) {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(x0)).unwrap();
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        prop_assert!((g.grad(x).unwrap().item() - 4.0 * x0).abs() < 1e-12);
    }

    #[test]
    fn composite_gradients_match_finite_differences(xs in prop::collection::vec(-1.5f64..1.5, 6)) {
        let x = Tensor::new([2, 3], xs).unwrap();
        let w = Tensor::new([3, 2], vec![0.4, -0.3, 0.2, 0.9, -0.7, 0.1]).unwrap();
        let r = check_gradients(&[x, w], 1e-6, |g, v| -> Result<_, TensorError> {
            let h = g.matmul(v[0], v[1])?;
            let h = g.leaky_relu(h, 0.2)?;
            let s = g.softmax(h)?;
            let l = g.log(s)?;
            let e = g.sigmoid(l)?;
            g.mean(e)
        }).unwrap();
        prop_assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
    }

    #[test]
    fn standardize_round_trips(mu in finite_vec(1..=5), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let sigma: Vec<f64> = mu.iter().map(|_| 10f64.powf(rng.uniform_range(-1.0, 1.0))).collect();
        let p = TDistParams::new(mu.clone(), sigma, 5.0).unwrap();
        let x: Vec<f64> = mu.iter().map(|_| rng.uniform_range(-20.0, 20.0)).collect();
        let back = p.unstandardize(&p.standardize(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0) * 10.0);
        }
        let (dx, dy) = p.jacobian_dets();
        prop_assert!((dx * dy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn t_cdf_is_symmetric_and_monotone(x in 0.0f64..40.0, nu in 0.3f64..60.0) {
        let a = tdist::standard_t_cdf(x, nu);
        let b = tdist::standard_t_cdf(-x, nu);
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!(tdist::standard_t_cdf(x + 0.1, nu) >= a);
    }

    #[test]
    fn theorem_density_holds_for_random_parameters(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let params = tdist::random_params(&mut rng, 3);
        let grid = tdist::axis_grid(&params, 13, 3.0);
        let report = tdist::verify_transform_theorem(&params, &grid, &VerifyConfig::default(), &mut rng).unwrap();
        prop_assert!(report.density.max_discrepancy < 1e-9);
    }

    #[test]
    fn attention_rows_stay_on_simplex(seed in any::<u64>(), n in 1usize..8, p in 1usize..5, b in 1usize..5) {
        let mut rng = Rng::new(seed);
        let net = AttentionNet::new(n, p, 6, &mut rng);
        let mut g = Graph::new();
        let vars: Vec<_> = net.layers.iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .map(|t| g.param(t).unwrap())
            .collect();
        let comps = Tensor::new([b, n, p], (0..b * n * p).map(|_| 3.0 * rng.normal()).collect()).unwrap();
        let c = g.constant(comps).unwrap();
        let pi = latent::attention_weights(&mut g, &vars, c).unwrap();
        for row in g.value(pi).data().chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn one_hot_suffix_round_trips(labels in prop::collection::vec(0usize..10, 1..20)) {
        let mut g = Graph::new();
        let b = labels.len();
        let z = g.constant(Tensor::zeros([b, 3])).unwrap();
        let c = latent::concat_condition(&mut g, z, &labels, 10).unwrap();
        for (r, &l) in labels.iter().enumerate() {
            let row = &g.value(c).row(r)[3..];
            let arg = row.iter().position(|&v| v == 1.0).unwrap();
            prop_assert_eq!(arg, l);
            prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn pipeline_draws_are_on_simplex(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = Rng::new(seed);
        let pipe = LatentPipeline::new(LatentConfig::new(n, 4, 3), &mut rng).unwrap();
        let mut g = Graph::new();
        let vars = bind(&mut g, &pipe, true).unwrap();
        let d = pipe.draw(&mut g, &vars, 5, &mut rng).unwrap();
        for row in g.value(d.weights.unwrap()).data().chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!(pipe.components.sigma().data().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn d_loss_decomposes_exactly(s in prop::collection::vec(0.01f64..0.99, 8), alpha in 0.0f64..5.0) {
        let mut g = Graph::new();
        let sr = g.constant(Tensor::new([4, 1], s[..4].to_vec()).unwrap()).unwrap();
        let sf = g.constant(Tensor::new([4, 1], s[4..].to_vec()).unwrap()).unwrap();
        let p = g.constant(Tensor::new([4, 2], s.clone()).unwrap()).unwrap();
        let p = g.softmax(p).unwrap();
        let lc = gan::loss_classifier(&mut g, p, &[0, 1, 1, 0], p, &[1, 1, 0, 0]).unwrap();
        let (d0, _) = gan::loss_d(&mut g, sr, sf, Some(lc), 0.0).unwrap();
        let (da, _) = gan::loss_d(&mut g, sr, sf, Some(lc), alpha).unwrap();
        let expect = g.value(d0).item() + alpha * g.value(lc).item();
        prop_assert!((g.value(da).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn idx_blobs_round_trip(count in 0usize..6, rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let img = IdxImages { count, rows, cols, pixels: (0..count * rows * cols).map(|_| rng.below(256) as u8).collect() };
        let lab = IdxLabels { labels: (0..count).map(|_| rng.below(10) as u8).collect() };
        let ib = data::encode_idx_images(&img);
        let lb = data::encode_idx_labels(&lab);
        prop_assert_eq!(data::encode_idx_images(&data::decode_idx_images(&ib).unwrap()), ib.clone());
        prop_assert_eq!(data::encode_idx_labels(&data::decode_idx_labels(&lb).unwrap()), lb.clone());
        if count > 0 {
            let ds = data::dataset_from_idx(&ib, &lb).unwrap();
            prop_assert!(ds.samples().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn idx_decoders_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = data::decode_idx_images(&bytes);
        let _ = data::decode_idx_labels(&bytes);
    }

    #[test]
    fn balanced_subset_histogram_is_uniform(per in 1usize..6, extra in 0usize..5, classes in 1usize..6, seed in any::<u64>()) {
        let n = (per + extra) * classes;
        let samples = Tensor::new([n, 1], (0..n).map(|i| (i as f64 / n as f64) * 2.0 - 1.0).collect()).unwrap();
        let ds = Dataset::new(samples, (0..n).map(|i| i % classes).collect(), classes, "p").unwrap();
        let sub = data::balanced_subset(&ds, per, &mut Rng::new(seed)).unwrap();
        prop_assert!(sub.class_counts().iter().all(|&c| c == per));
    }

    #[test]
    fn ring_datasets_satisfy_invariants(modes in 1usize..10, std in 0.0f64..0.5, n in 0usize..300, seed in any::<u64>()) {
        let spec = RingSpec { modes, radius: 2.0, std, n, labeled: true };
        let ds = data::ring_of_gaussians(spec, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(ds.len(), n);
        prop_assert!(ds.samples().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!(ds.labels().iter().all(|&l| l < modes));
    }

    #[test]
    fn downsampled_values_stay_in_range(seed in any::<u64>(), from in 2usize..10, to in 1usize..5) {
        prop_assume!(to <= from);
        let mut rng = Rng::new(seed);
        let d = from * from;
        let samples = Tensor::new([2, d], (0..2 * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let ds = Dataset::new(samples, vec![0, 0], 1, "p").unwrap();
        let out = data::downsample(&ds, from, to).unwrap();
        prop_assert_eq!(out.data_dim(), to * to);
        prop_assert!(out.samples().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn inception_score_is_bounded_by_class_count(seed in any::<u64>(), c in 1usize..8, n in 1usize..40, splits in 1usize..5) {
        prop_assume!(splits <= n);
        let mut rng = Rng::new(seed);
        let mut data = Vec::new();
        for _ in 0..n {
            let mut row: Vec<f64> = (0..c).map(|_| rng.uniform().powi(4)).collect();
            let s: f64 = row.iter().sum::<f64>().max(1e-300);
            row.iter_mut().for_each(|v| *v /= s);
            data.extend(row);
        }
        let (m, _) = inception_from_probs(&Tensor::new([n, c], data).unwrap(), splits).unwrap();
        prop_assert!(m >= 1.0 && m <= c as f64 + 1e-9, "{m}");
    }

    #[test]
    fn mode_coverage_is_permutation_invariant(seed in any::<u64>(), k in 1usize..9, n in 1usize..200) {
        let mut rng = Rng::new(seed);
        let centers: Vec<[f64; 2]> = (0..k).map(|_| [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)]).collect();
        let pts: Vec<f64> = (0..n).flat_map(|_| {
            let c = centers[rng.below(k)];
            [c[0] + 0.05 * rng.normal(), c[1] + 0.05 * rng.normal()]
        }).collect();
        let base = mode_coverage(&Tensor::new([n, 2], pts.clone()).unwrap(), &centers, 0.05, 3.0);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let shuffled: Vec<f64> = order.iter().flat_map(|&i| [pts[2 * i], pts[2 * i + 1]]).collect();
        let mut cs = centers.clone();
        rng.shuffle(&mut cs);
        let other = mode_coverage(&Tensor::new([n, 2], shuffled).unwrap(), &cs, 0.05, 3.0);
        prop_assert_eq!(base, other);
    }

    #[test]
    fn full_tail_equilibrium_is_series_mean(xs in prop::collection::vec(-5.0f64..5.0, 10..100)) {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!((loss_equilibrium(&xs, 1.0).unwrap() - m).abs() < 1e-12);
    }
}

#[test]
fn saturating_and_equilibrium_values_at_half() {
    let mut g = Graph::new();
    let half = g.constant(Tensor::full([5, 1], 0.5)).unwrap();
    let (d, _) = gan::loss_d(&mut g, half, half, None, 0.0).unwrap();
    let s = gan::loss_g(&mut g, half, None, 0.0, GMode::Saturating).unwrap();
    assert!((g.value(d).item() - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert!((g.value(s).item() + 2f64.ln()).abs() < 1e-12);
}

#[test]
fn every_module_reports_parameters_in_a_stable_order() {
    let mut rng = Rng::new(1);
    let pipe = LatentPipeline::new(LatentConfig::new(5, 10, 3), &mut rng).unwrap();
    let names: Vec<String> = pipe.named_params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        [
            "latent.mu",
            "latent.sigma_raw",
            "latent.attention.0.weight",
            "latent.attention.0.bias",
            "latent.attention.1.weight",
            "latent.attention.1.bias"
        ]
    );
    assert_eq!(eval::DEFAULT_SPLITS, 10);
}
