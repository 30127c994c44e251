//! Ground-truth attribute scalars computed directly from pixels. These are
//! the oracle definitions every other module treats as the target: brightness
//! is the mean HSV value channel, colorfulness is the Hasler-Suesstrunk
//! metric normalized into [0, 1].

use image::RgbImage;

use crate::error::{Error, Result};

fn check_nonempty(img: &RgbImage) -> Result<()> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Domain("attribute of an empty image".into()));
    }
    Ok(())
}

/// Mean over pixels of max(R, G, B) / 255.
pub fn compute_brightness(img: &RgbImage) -> Result<f64> {
    check_nonempty(img)?;
    let mut sum = 0.0f64;
    for p in img.pixels() {
        let [r, g, b] = p.0;
        sum += r.max(g).max(b) as f64;
    }
    let n = (img.width() as f64) * (img.height() as f64);
    Ok(sum / n / 255.0)
}

/// Hasler-Suesstrunk colorfulness on 0..255 channels:
/// rg = R - G, yb = (R + G)/2 - B,
/// M = sqrt(var_rg + var_yb) + 0.3 * sqrt(mean_rg^2 + mean_yb^2),
/// returned as min(M / 150, 1).
///
/// Accumulates opponent sums and sums of squares, which are exact in f64
/// (integer and quarter-integer values), so the result is bit-identical
/// under any pixel permutation.
pub fn compute_colorfulness(img: &RgbImage) -> Result<f64> {
    check_nonempty(img)?;
    let n = (img.width() as f64) * (img.height() as f64);
    let mut sum_rg = 0.0f64;
    let mut sum_rg2 = 0.0f64;
    let mut sum_yb = 0.0f64;
    let mut sum_yb2 = 0.0f64;
    for p in img.pixels() {
        let [r, g, b] = p.0;
        let rg = r as f64 - g as f64;
        let yb = 0.5 * (r as f64 + g as f64) - b as f64;
        sum_rg += rg;
        sum_rg2 += rg * rg;
        sum_yb += yb;
        sum_yb2 += yb * yb;
    }
    let mean_rg = sum_rg / n;
    let mean_yb = sum_yb / n;
    let var_rg = (sum_rg2 / n - mean_rg * mean_rg).max(0.0);
    let var_yb = (sum_yb2 / n - mean_yb * mean_yb).max(0.0);
    let m = (var_rg + var_yb).sqrt() + 0.3 * (mean_rg * mean_rg + mean_yb * mean_yb).sqrt();
    Ok((m / 150.0).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solid(w: u32, h: u32, rgb: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb(rgb))
    }

    fn random_image(w: u32, h: u32, rng: &mut ChaCha8Rng) -> RgbImage {
        RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
    }

    #[test]
    fn brightness_extremes_are_exact() {
        assert_eq!(compute_brightness(&solid(8, 8, [0, 0, 0])).unwrap(), 0.0);
        assert_eq!(compute_brightness(&solid(8, 8, [255, 255, 255])).unwrap(), 1.0);
        // pure red still has a saturated max channel
        assert_eq!(compute_brightness(&solid(8, 8, [255, 0, 0])).unwrap(), 1.0);
    }

    #[test]
    fn gray_image_has_zero_colorfulness() {
        for v in [0u8, 77, 128, 255] {
            assert_eq!(compute_colorfulness(&solid(6, 4, [v, v, v])).unwrap(), 0.0);
        }
    }

    #[test]
    fn pure_red_matches_closed_form() {
        // variance terms 0, mean_rg 255, mean_yb 127.5:
        // M = 0.3 * sqrt(255^2 + 127.5^2), normalized by 150
        let got = compute_colorfulness(&solid(5, 5, [255, 0, 0])).unwrap();
        let expect = 0.3 * (255.0f64 * 255.0 + 127.5 * 127.5).sqrt() / 150.0;
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.5702).abs() < 1e-4);
    }

    #[test]
    fn empty_image_is_rejected() {
        let img = RgbImage::new(0, 4);
        assert!(matches!(compute_brightness(&img), Err(Error::Domain(_))));
        assert!(matches!(compute_colorfulness(&img), Err(Error::Domain(_))));
    }

    #[test]
    fn brightness_matches_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let img = random_image(8, 8, &mut rng);
            let mut acc = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    let [r, g, b] = img.get_pixel(x, y).0;
                    let mx = r.max(g).max(b);
                    acc += mx as f64 / 255.0;
                }
            }
            let oracle = acc / 64.0;
            let got = compute_brightness(&img).unwrap();
            assert!((got - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn colorfulness_matches_two_pass_oracle() {
        // independent oracle: explicit mean pass then squared-deviation pass
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let img = random_image(9, 7, &mut rng);
            let n = 63.0;
            let (mut srg, mut syb) = (0.0, 0.0);
            for p in img.pixels() {
                let [r, g, b] = p.0;
                srg += r as f64 - g as f64;
                syb += 0.5 * (r as f64 + g as f64) - b as f64;
            }
            let (mrg, myb) = (srg / n, syb / n);
            let (mut vrg, mut vyb) = (0.0, 0.0);
            for p in img.pixels() {
                let [r, g, b] = p.0;
                let drg = (r as f64 - g as f64) - mrg;
                let dyb = 0.5 * (r as f64 + g as f64) - b as f64 - myb;
                vrg += drg * drg;
                vyb += dyb * dyb;
            }
            let oracle = (((vrg / n + vyb / n).sqrt() + 0.3 * (mrg * mrg + myb * myb).sqrt())
                / 150.0)
                .min(1.0);
            let got = compute_colorfulness(&img).unwrap();
            assert!((got - oracle).abs() < 1e-4);
        }
    }

    #[test]
    fn attributes_are_flip_and_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(10, 6, &mut rng);
        let flipped = image::imageops::flip_horizontal(&img);
        assert_eq!(
            compute_brightness(&img).unwrap(),
            compute_brightness(&flipped).unwrap()
        );
        assert_eq!(
            compute_colorfulness(&img).unwrap(),
            compute_colorfulness(&flipped).unwrap()
        );

        // arbitrary pixel permutation: transpose
        let transposed = RgbImage::from_fn(6, 10, |x, y| *img.get_pixel(y, x));
        assert_eq!(
            compute_brightness(&img).unwrap(),
            compute_brightness(&transposed).unwrap()
        );
        assert_eq!(
            compute_colorfulness(&img).unwrap(),
            compute_colorfulness(&transposed).unwrap()
        );
    }
}
