mod common;

use mvfuse::diffusion::{ddim_sigma, ddim_step, strided_steps, DdimStep, MultiViewLatent, NoiseSchedule};
use mvfuse::gsplat::{Gaussian, GaussianCloud, Image};
use mvfuse::io::{decode_ppm, encode_ppm, quantize};
use proptest::prelude::*;

fn gaussian() -> impl Strategy<Value = Gaussian> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        prop::array::uniform3(0.01f64..0.4),
        prop::array::uniform4(-1.0f64..1.0),
        0.05f64..1.0,
        prop::array::uniform3(0.0f64..1.0),
    )
        .prop_filter_map("degenerate quaternion", |(p, s, q, a, c)| {
            let n = q.iter().map(|v| v * v).sum::<f64>();
            (n > 1e-3).then(|| Gaussian::new(p.into(), s.into(), q, a, c.into()).ok())?
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ddim_matches_scalar_update(
        vals in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 6),
        t in 1usize..1000,
        frac in 0.0f64..1.0,
        eta in 0.0f64..1.0,
        to_clean in any::<bool>(),
    ) {
        let sched = NoiseSchedule::default();
        let t_prev = (!to_clean).then(|| ((t as f64 * frac) as usize).min(t - 1));
        let lat = |f: fn(&(f64, f64, f64)) -> f64| {
            MultiViewLatent::from_data(1, 1, 2, 3, vals.iter().map(f).collect()).unwrap()
        };
        let (z, eps, noise) = (lat(|v| v.0), lat(|v| v.1), lat(|v| v.2));
        let out = ddim_step(
            &z,
            &eps,
            DdimStep { t, t_prev, eta, noise: Some(&noise), z0_override: None },
            &sched,
        )
        .unwrap();
        let ab = sched.alpha_bar(t);
        let ab_prev = t_prev.map_or(1.0, |tp| sched.alpha_bar(tp));
        let sigma = ddim_sigma(&sched, t, t_prev, eta);
        prop_assert!(sigma * sigma <= 1.0 - ab_prev + 1e-12);
        for (i, v) in vals.iter().enumerate() {
            let want = common::ddim_scalar(v.0, v.1, ab, ab_prev, sigma, v.2);
            prop_assert!((out.data[i] - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn strided_steps_descend_to_zero(n in 1usize..=1000) {
        let s = strided_steps(1000, n).unwrap();
        prop_assert_eq!(s.len(), n);
        prop_assert_eq!(s[0], 999);
        prop_assert!(s.windows(2).all(|w| w[0] > w[1]));
        if n > 1 {
            prop_assert_eq!(*s.last().unwrap(), 0);
        }
    }

    #[test]
    fn cloud_json_round_trips(gs in prop::collection::vec(gaussian(), 0..8)) {
        let cloud = GaussianCloud::new(gs);
        let json = serde_json::to_string(&cloud).unwrap();
        let back: GaussianCloud = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, cloud);
    }

    #[test]
    fn ppm_round_trips_quantized_pixels(
        w in 1usize..9,
        h in 1usize..9,
        seed in prop::collection::vec(0.0f64..1.0, 3 * 64),
    ) {
        let mut img = Image::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                let i = 3 * (y * w + x);
                img.set(x, y, [seed[i], seed[i + 1], seed[i + 2]]);
            }
        }
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        prop_assert_eq!((back.width, back.height), (w, h));
        for (p, q) in img.pixels.iter().zip(&back.pixels) {
            for c in 0..3 {
                prop_assert_eq!(quantize(p[c]), quantize(q[c]));
                prop_assert!((p[c] - q[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
