use super::Image;

/// Minimum-channel value above which a pixel counts as blank background.
pub const BLANK_THRESHOLD: f32 = 0.92;

/// Per-channel mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

pub fn channel_stats(img: &Image) -> ChannelStats {
    let n = (img.width() * img.height()) as f64;
    let mut sum = [0.0f64; 3];
    for px in img.data().chunks_exact(3) {
        for c in 0..3 {
            sum[c] += px[c] as f64;
        }
    }
    let mean = sum.map(|s| s / n);
    let mut var = [0.0f64; 3];
    for px in img.data().chunks_exact(3) {
        for c in 0..3 {
            let d = px[c] as f64 - mean[c];
            var[c] += d * d;
        }
    }
    ChannelStats {
        mean,
        std: var.map(|v| (v / n).sqrt()),
    }
}

/// Pre-clamp per-channel affine map that moves `src` statistics onto `target`.
pub(crate) fn transfer_coefficients(src: &ChannelStats, target: &ChannelStats) -> [(f64, f64); 3] {
    let mut coeff = [(0.0, 0.0); 3];
    for c in 0..3 {
        coeff[c] = if src.std[c] == 0.0 {
            (0.0, target.mean[c])
        } else {
            let scale = target.std[c] / src.std[c];
            (scale, target.mean[c] - src.mean[c] * scale)
        };
    }
    coeff
}

/// Shifts and scales each channel so its mean and std match `target`, then
/// clamps. A channel with zero spread is set to the target mean.
pub fn color_transfer(img: &Image, target: &ChannelStats) -> Image {
    let coeff = transfer_coefficients(&channel_stats(img), target);
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            let mut out = [0.0f32; 3];
            for c in 0..3 {
                let (scale, offset) = coeff[c];
                out[c] = (px[c] as f64 * scale + offset).clamp(0.0, 1.0) as f32;
            }
            out
        })
        .collect();
    Image::from_raw_unchecked(img.width(), img.height(), data)
}

pub fn blank_fraction(img: &Image) -> f64 {
    let n = img.width() * img.height();
    if n == 0 {
        return 0.0;
    }
    let blank = img
        .data()
        .chunks_exact(3)
        .filter(|px| px[0].min(px[1]).min(px[2]) > BLANK_THRESHOLD)
        .count();
    blank as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matching_stats_leave_image_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = Image::from_fn(16, 16, |_, _| {
            [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)]
        });
        let stats = channel_stats(&img);
        let out = color_transfer(&img, &stats);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_spread_goes_to_target_mean() {
        let img = Image::filled(4, 4, [0.3; 3]);
        let target = ChannelStats {
            mean: [0.5; 3],
            std: [0.0; 3],
        };
        let out = color_transfer(&img, &target);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn transferred_stats_match_before_clamping() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let img = Image::from_fn(32, 24, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let target = ChannelStats {
            mean: [0.6, 0.45, 0.7],
            std: [0.05, 0.08, 0.03],
        };
        let coeff = transfer_coefficients(&channel_stats(&img), &target);
        // recompute stats of the unclamped output directly
        for c in 0..3 {
            let vals: Vec<f64> = img
                .data()
                .chunks_exact(3)
                .map(|px| px[c] as f64 * coeff[c].0 + coeff[c].1)
                .collect();
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let s = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            assert!((m - target.mean[c]).abs() < 1e-6);
            assert!((s - target.std[c]).abs() < 1e-6);
        }
        // target values sit well inside [0,1], so the clamped output agrees
        let out_stats = channel_stats(&color_transfer(&img, &target));
        for c in 0..3 {
            assert!((out_stats.mean[c] - target.mean[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn blank_fraction_cases() {
        assert_eq!(blank_fraction(&Image::white(5, 5)), 1.0);
        assert_eq!(blank_fraction(&Image::filled(5, 5, [0.0; 3])), 0.0);
        let half = Image::from_fn(4, 4, |x, _| if x < 2 { [1.0; 3] } else { [0.5; 3] });
        assert_eq!(blank_fraction(&half), 0.5);
    }
}
