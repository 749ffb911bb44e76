use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use subedge::edges::{
    compute_gradient, detect_edges, estimate_sigma_x2, gaussian_derivative_kernels,
    subpixel_offset, DetectParams,
};
use subedge::image::GrayImage;
use subedge::pipeline::{extract_observations, PipelineConfig};
use subedge::simdata::{NoiseSpec, SquareSpec};

/// Unit step along x with the edge at `edge`, area-integrated per pixel.
fn step(w: usize, h: usize, edge: f64) -> GrayImage {
    GrayImage::from_fn(w, h, |c, _| (c as f64 + 1.0 - edge).clamp(0.0, 1.0))
}

#[test]
fn gradient_is_linear_in_the_image() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let k = gaussian_derivative_kernels(1.0).unwrap();
    let mut noise = || {
        (0..24 * 20)
            .map(|_| rng.random::<f64>())
            .collect::<Vec<_>>()
    };
    let a = GrayImage::new(24, 20, noise()).unwrap();
    let b = GrayImage::new(24, 20, noise()).unwrap();
    let (alpha, beta) = (0.7, -1.3);
    let mix = a.combine(alpha, &b, beta).unwrap();
    let (ga, gb, gm) = (
        compute_gradient(&a, &k, 0.0).unwrap(),
        compute_gradient(&b, &k, 0.0).unwrap(),
        compute_gradient(&mix, &k, 0.0).unwrap(),
    );
    for r in 0..20 {
        for c in 0..24 {
            let (pa, pb, pm) = (ga.at(c, r), gb.at(c, r), gm.at(c, r));
            for i in 0..2 {
                assert!((alpha * pa[i] + beta * pb[i] - pm[i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn sigma_x_matches_monte_carlo_spread() {
    // unblurred step: the parabola vertex noise is close to the first-order
    // prediction; blurred edges widen it by roughly the curvature ratio
    let k = gaussian_derivative_kernels(1.0).unwrap();
    let sigma_b = 0.1;
    let clean = step(32, 32, 16.25);
    let (row, col) = (16, 16);
    let field = compute_gradient(&clean, &k, 0.0).unwrap();
    let predicted = estimate_sigma_x2(field.magnitude(col, row), sigma_b, &k)
        .unwrap()
        .sqrt();
    let mut offsets = Vec::new();
    for seed in 0..500u64 {
        let img = NoiseSpec::Gaussian { sigma: sigma_b }
            .apply(&clean, seed)
            .unwrap();
        let f = compute_gradient(&img, &k, sigma_b).unwrap();
        let g = |c| f.magnitude(c, row);
        if let Ok(d) = subpixel_offset(g(col - 1), g(col), g(col + 1)) {
            offsets.push(d);
        }
    }
    assert!(offsets.len() >= 450, "{} maxima kept", offsets.len());
    let n = offsets.len() as f64;
    let mean = offsets.iter().sum::<f64>() / n;
    let sd = (offsets.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let ratio = sd / predicted;
    assert!(
        (0.5..=2.0).contains(&ratio),
        "empirical {sd}, predicted {predicted}"
    );
    assert!((mean + 0.25).abs() < 0.05, "mean offset {mean}");
}

#[test]
fn gradient_directions_follow_the_true_normal() {
    let (img, truth) = SquareSpec::default().render().unwrap();
    let ex = extract_observations(&img, &PipelineConfig::default()).unwrap();
    let corners = truth.rect.corners();
    let mut checked = 0;
    for o in ex.observations.observations() {
        let p = [o.x_o, o.y_o];
        if corners
            .iter()
            .any(|c| (p[0] - c[0]).hypot(p[1] - c[1]) < 3.0)
        {
            continue;
        }
        let n = truth.rect.nearest_normal(p);
        let g = o.grad_norm();
        let cos = ((o.g_x * n[0] + o.g_y * n[1]) / g).abs().min(1.0);
        assert!(
            cos.acos().to_degrees() <= 5.0,
            "{p:?}: {:.2} deg",
            cos.acos().to_degrees()
        );
        checked += 1;
    }
    assert!(checked > 200);
}

#[test]
fn refined_positions_land_on_straight_edges() {
    for f in [0.0, 0.25, 0.5, 0.75] {
        let x = 40.0 + f;
        let spec = SquareSpec {
            rect: [x, 32.0, 96.0, 96.0],
            ..Default::default()
        };
        let (img, _) = spec.render().unwrap();
        let ex = extract_observations(&img, &PipelineConfig::default()).unwrap();
        let left: Vec<f64> = ex
            .observations
            .observations()
            .iter()
            .filter(|o| (o.x_o - x).abs() < 2.0 && o.y_o > 40.0 && o.y_o < 88.0)
            .map(|o| o.x_o - x)
            .collect();
        assert!(left.len() > 40);
        for d in left {
            assert!(d.abs() <= 0.15, "offset {f}: error {d}");
        }
    }
}

#[test]
fn hysteresis_keeps_weak_pixels_connected_to_strong_ones() {
    // step whose contrast fades from 1 at the top to 0.3 at the bottom
    let img = GrayImage::from_fn(32, 48, |c, r| {
        let amp = 1.0 - 0.7 * r as f64 / 47.0;
        if c >= 16 {
            amp
        } else {
            0.0
        }
    });
    let k = gaussian_derivative_kernels(1.0).unwrap();
    let field = compute_gradient(&img, &k, 0.0).unwrap();
    let strict = DetectParams {
        rel_threshold: 0.5,
        noise_factor: 0.0,
        low_ratio: 1.0,
    };
    let loose = DetectParams {
        low_ratio: 0.4,
        ..strict
    };
    let weak_rows = |px: &[(usize, usize)]| px.iter().filter(|p| p.1 >= 38 && p.1 < 46).count();
    let a = detect_edges(&field, &strict).unwrap();
    let b = detect_edges(&field, &loose).unwrap();
    assert_eq!(weak_rows(&a), 0);
    assert_eq!(weak_rows(&b), 8);
    assert!(a.iter().all(|p| b.contains(p)));
    assert!(detect_edges(
        &field,
        &DetectParams {
            low_ratio: 0.0,
            ..strict
        }
    )
    .is_err());
}
