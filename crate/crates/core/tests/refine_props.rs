use edar_core::synth::{refine_groundtruth, render_labels, EyeSceneParams, EyeState};
use edar_core::types::{SegmentationMap, BACKGROUND};
use proptest::prelude::*;

fn components4(seg: &SegmentationMap) -> usize {
    let (w, h) = (seg.width(), seg.height());
    let mut seen = vec![false; w * h];
    let mut n = 0;
    for start in 0..w * h {
        if seen[start] || seg.classes()[start] == BACKGROUND {
            continue;
        }
        n += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let nbrs = [(x > 0).then(|| i - 1), (x + 1 < w).then(|| i + 1), (y > 0).then(|| i - w), (y + 1 < h).then(|| i + w)];
            for j in nbrs.into_iter().flatten() {
                if !seen[j] && seg.classes()[j] != BACKGROUND {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    n
}

fn noisy(seed: u64, cx: f64, cy: f64, flips: &[(usize, usize, u8)]) -> SegmentationMap {
    let p = EyeSceneParams::sample(40, 32, seed);
    let mut seg = render_labels(&p, &EyeState { center: (cx, cy), aperture: 0.9 });
    for &(x, y, c) in flips {
        seg.set(x % 40, y % 32, c);
    }
    seg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn refine_is_idempotent(
        seed in 0u64..1000,
        cx in 16.0f64..24.0,
        cy in 14.0f64..18.0,
        flips in prop::collection::vec((0usize..40, 0usize..32, 0u8..4), 0..60),
        eps in prop::sample::select(vec![1.0, 1.5, 2.0, 3.0]),
        min_pts in 1usize..8,
    ) {
        let seg = noisy(seed, cx, cy, &flips);
        let once = refine_groundtruth(&seg, eps, min_pts);
        prop_assert_eq!(refine_groundtruth(&once, eps, min_pts), once);
    }

    #[test]
    fn refine_never_adds_components(
        seed in 0u64..1000,
        cx in 16.0f64..24.0,
        cy in 14.0f64..18.0,
        flips in prop::collection::vec((0usize..40, 0usize..32, 0u8..4), 0..60),
        eps in prop::sample::select(vec![1.0, 1.5, 2.0, 3.0]),
        min_pts in 1usize..8,
    ) {
        let seg = noisy(seed, cx, cy, &flips);
        prop_assert!(components4(&refine_groundtruth(&seg, eps, min_pts)) <= components4(&seg));
    }
}
