//! Cross-correlation fusion of template and search feature maps.
//!
//! Every variant reduces the two `N x F` feature maps to one similarity
//! weight per search point, so the proposal heads downstream are
//! variant-agnostic:
//!
//! * `pcw` — each template point feature acts as a 1xF correlation kernel
//!   over the search features; the N template responses are max-pooled.
//! * `pw`  — aligned-index inner product, one 1x1 response per point.
//! * `cosine` / `euclid` — classic similarity baselines (max over template).
//! * `dw`  — channel-wise products of aligned rows, reduced by summation.
//! * `none` — bypass: all weights 1, the search features pass through.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor2D};

/// One similarity weight per search point.
pub type CorrelationFeature<T> = Vec<T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XcorrVariant {
    Pcw,
    Pw,
    Cosine,
    Euclid,
    Dw,
    None,
}

impl XcorrVariant {
    pub const ALL: [XcorrVariant; 6] = [
        XcorrVariant::None,
        XcorrVariant::Dw,
        XcorrVariant::Cosine,
        XcorrVariant::Euclid,
        XcorrVariant::Pcw,
        XcorrVariant::Pw,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            XcorrVariant::Pcw => "pcw",
            XcorrVariant::Pw => "pw",
            XcorrVariant::Cosine => "cosine",
            XcorrVariant::Euclid => "euclid",
            XcorrVariant::Dw => "dw",
            XcorrVariant::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pcw" => Ok(XcorrVariant::Pcw),
            "pw" => Ok(XcorrVariant::Pw),
            "cosine" => Ok(XcorrVariant::Cosine),
            "euclid" => Ok(XcorrVariant::Euclid),
            "dw" => Ok(XcorrVariant::Dw),
            "none" => Ok(XcorrVariant::None),
            other => Err(Error::Config(format!(
                "unknown xcorr variant {other:?}; expected one of pcw, pw, cosine, euclid, dw, none"
            ))),
        }
    }
}

/// Data retained by the forward pass for the backward pass.
pub struct XcorrCache<T> {
    template: Tensor2D<T>,
    search: Tensor2D<T>,
    /// For max-reduced variants: winning template row per search point.
    argmax: Vec<usize>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Correlation weights `psi` for the chosen variant.
pub fn xcorr_forward<T: Real>(
    variant: XcorrVariant,
    template: &Tensor2D<T>,
    search: &Tensor2D<T>,
) -> Result<(CorrelationFeature<T>, XcorrCache<T>)> {
    if template.cols() != search.cols() {
        return Err(Error::shape(
            "xcorr",
            format!("{} feature cols", template.cols()),
            format!("{}", search.cols()),
        ));
    }
    let aligned = matches!(variant, XcorrVariant::Pw | XcorrVariant::Dw);
    if aligned && template.rows() != search.rows() {
        return Err(Error::shape(
            "xcorr (aligned variant)",
            format!("{} rows", template.rows()),
            format!("{}", search.rows()),
        ));
    }
    let n = search.rows();
    let mut psi = vec![T::zero(); n];
    let mut argmax = vec![0usize; n];
    match variant {
        XcorrVariant::Pcw => {
            for j in 0..n {
                let xr = search.row(j);
                let mut best = T::neg_infinity();
                for i in 0..template.rows() {
                    let v = dot(template.row(i), xr);
                    if v > best {
                        best = v;
                        argmax[j] = i;
                    }
                }
                psi[j] = best;
            }
        }
        XcorrVariant::Pw => {
            for j in 0..n {
                psi[j] = dot(template.row(j), search.row(j));
            }
        }
        XcorrVariant::Dw => {
            // Channel-by-channel products of aligned rows, then a sum
            // reduction per point.
            for c in 0..search.cols() {
                for j in 0..n {
                    psi[j] += template.get(j, c) * search.get(j, c);
                }
            }
        }
        XcorrVariant::Cosine => {
            for j in 0..n {
                let xr = search.row(j);
                let xn = norm(xr);
                let mut best = T::neg_infinity();
                for i in 0..template.rows() {
                    let zr = template.row(i);
                    let zn = norm(zr);
                    let v = if zn == T::zero() || xn == T::zero() {
                        T::zero()
                    } else {
                        dot(zr, xr) / (zn * xn)
                    };
                    if v > best {
                        best = v;
                        argmax[j] = i;
                    }
                }
                psi[j] = best;
            }
        }
        XcorrVariant::Euclid => {
            for j in 0..n {
                let xr = search.row(j);
                let mut best = T::neg_infinity();
                for i in 0..template.rows() {
                    let zr = template.row(i);
                    let d: T = zr
                        .iter()
                        .zip(xr.iter())
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<T>()
                        .sqrt();
                    let v = T::one() / (T::one() + d);
                    if v > best {
                        best = v;
                        argmax[j] = i;
                    }
                }
                psi[j] = best;
            }
        }
        XcorrVariant::None => {
            psi = vec![T::one(); n];
        }
    }
    for &v in &psi {
        if !v.is_finite() {
            return Err(Error::NonFinite("correlation weights".into()));
        }
    }
    Ok((
        psi,
        XcorrCache { template: template.clone(), search: search.clone(), argmax },
    ))
}

/// Gradients of `psi` with respect to both feature maps.
pub fn xcorr_backward<T: Real>(
    variant: XcorrVariant,
    cache: &XcorrCache<T>,
    grad_psi: &[T],
) -> Result<(Tensor2D<T>, Tensor2D<T>)> {
    let z = &cache.template;
    let x = &cache.search;
    let mut gz = Tensor2D::zeros(z.rows(), z.cols());
    let mut gx = Tensor2D::zeros(x.rows(), x.cols());
    if grad_psi.len() != x.rows() {
        return Err(Error::shape("xcorr_backward", format!("{} weights", x.rows()), format!("{}", grad_psi.len())));
    }
    match variant {
        XcorrVariant::Pcw => {
            for (j, &g) in grad_psi.iter().enumerate() {
                let i = cache.argmax[j];
                for c in 0..x.cols() {
                    gz.set(i, c, gz.get(i, c) + g * x.get(j, c));
                    gx.set(j, c, gx.get(j, c) + g * z.get(i, c));
                }
            }
        }
        XcorrVariant::Pw | XcorrVariant::Dw => {
            for (j, &g) in grad_psi.iter().enumerate() {
                for c in 0..x.cols() {
                    gz.set(j, c, g * x.get(j, c));
                    gx.set(j, c, g * z.get(j, c));
                }
            }
        }
        XcorrVariant::Cosine => {
            for (j, &g) in grad_psi.iter().enumerate() {
                let i = cache.argmax[j];
                let zr = z.row(i);
                let xr = x.row(j);
                let zn = norm(zr);
                let xn = norm(xr);
                if zn == T::zero() || xn == T::zero() {
                    continue;
                }
                let d = dot(zr, xr);
                let cosv = d / (zn * xn);
                for c in 0..x.cols() {
                    // d cos / d z_c = x_c/(|z||x|) - cos * z_c/|z|^2
                    let dz = xr[c] / (zn * xn) - cosv * zr[c] / (zn * zn);
                    let dx = zr[c] / (zn * xn) - cosv * xr[c] / (xn * xn);
                    gz.set(i, c, gz.get(i, c) + g * dz);
                    gx.set(j, c, gx.get(j, c) + g * dx);
                }
            }
        }
        XcorrVariant::Euclid => {
            for (j, &g) in grad_psi.iter().enumerate() {
                let i = cache.argmax[j];
                let zr = z.row(i);
                let xr = x.row(j);
                let d: T = zr
                    .iter()
                    .zip(xr.iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
                    .sqrt();
                if d == T::zero() {
                    continue;
                }
                let s = T::one() / (T::one() + d);
                let scale = -s * s / d;
                for c in 0..x.cols() {
                    let diff = zr[c] - xr[c];
                    gz.set(i, c, gz.get(i, c) + g * scale * diff);
                    gx.set(j, c, gx.get(j, c) - g * scale * diff);
                }
            }
        }
        XcorrVariant::None => {}
    }
    Ok((gz, gx))
}

pub struct WeightCache<T> {
    psi: Vec<T>,
    search: Tensor2D<T>,
}

/// Weighted search features: row `i` of the output is `psi_i` times row `i`
/// of the search feature map.
pub fn weight_features_forward<T: Real>(
    psi: &[T],
    search: &Tensor2D<T>,
) -> Result<(Tensor2D<T>, WeightCache<T>)> {
    if psi.len() != search.rows() {
        return Err(Error::shape(
            "weight_features",
            format!("{} weights", search.rows()),
            format!("{}", psi.len()),
        ));
    }
    let mut out = search.clone();
    for (r, &w) in psi.iter().enumerate() {
        for v in out.row_mut(r) {
            *v *= w;
        }
    }
    out.check_finite("weighted search features")?;
    Ok((out, WeightCache { psi: psi.to_vec(), search: search.clone() }))
}

/// Gradients flow to both the weights and the features.
pub fn weight_features_backward<T: Real>(
    cache: &WeightCache<T>,
    grad_out: &Tensor2D<T>,
) -> Result<(Vec<T>, Tensor2D<T>)> {
    if grad_out.shape() != cache.search.shape() {
        return Err(Error::shape(
            "weight_features_backward",
            format!("{:?}", cache.search.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut gpsi = vec![T::zero(); cache.psi.len()];
    let mut gsearch = grad_out.clone();
    for r in 0..grad_out.rows() {
        gpsi[r] = dot(grad_out.row(r), cache.search.row(r));
        let w = cache.psi[r];
        for v in gsearch.row_mut(r) {
            *v *= w;
        }
    }
    Ok((gpsi, gsearch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rows: usize, cols: usize, seed: u64) -> Tensor2D<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2D::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn normalize_rows(t: &mut Tensor2D<f64>) {
        for r in 0..t.rows() {
            let n = norm(t.row(r));
            for v in t.row_mut(r) {
                *v /= n;
            }
        }
    }

    #[test]
    fn pcw_self_match_is_at_least_one_for_unit_rows() {
        let mut z = random_features(20, 8, 1);
        normalize_rows(&mut z);
        let (psi, _) = xcorr_forward(XcorrVariant::Pcw, &z, &z).unwrap();
        for (j, &v) in psi.iter().enumerate() {
            assert!(v >= 1.0 - 1e-12, "psi[{j}] = {v}");
        }
    }

    #[test]
    fn pcw_exhaustive_two_row_example() {
        let z = Tensor2D::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor2D::from_vec(1, 2, vec![2.0, 0.0]).unwrap();
        let (psi, _) = xcorr_forward(XcorrVariant::Pcw, &z, &x).unwrap();
        assert_eq!(psi, vec![2.0]);
    }

    #[test]
    fn pcw_template_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..50 {
            let z = random_features(12, 6, 100 + trial);
            let x = random_features(9, 6, 200 + trial);
            let (psi, _) = xcorr_forward(XcorrVariant::Pcw, &z, &x).unwrap();
            let mut idx: Vec<usize> = (0..z.rows()).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.gen_range(0..=i));
            }
            let rows: Vec<Vec<f64>> = idx.iter().map(|&i| z.row(i).to_vec()).collect();
            let zp = Tensor2D::from_rows(&rows).unwrap();
            let (psi_p, _) = xcorr_forward(XcorrVariant::Pcw, &zp, &x).unwrap();
            assert_eq!(psi, psi_p);
        }
    }

    #[test]
    fn pw_matches_scalar_loop_oracle() {
        let z = random_features(7, 3, 11);
        let x = random_features(7, 3, 12);
        let (psi, _) = xcorr_forward(XcorrVariant::Pw, &z, &x).unwrap();
        for i in 0..7 {
            let mut acc = 0.0;
            for c in 0..3 {
                acc += z.get(i, c) * x.get(i, c);
            }
            assert!((psi[i] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn pw_unit_rows_give_ones_and_zero_rows_give_zero() {
        let mut z = random_features(10, 4, 3);
        normalize_rows(&mut z);
        let (psi, _) = xcorr_forward(XcorrVariant::Pw, &z, &z).unwrap();
        for &v in &psi {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let mut z2 = z.clone();
        for v in z2.row_mut(4) {
            *v = 0.0;
        }
        let (psi, _) = xcorr_forward(XcorrVariant::Pw, &z2, &z).unwrap();
        assert_eq!(psi[4], 0.0);
    }

    #[test]
    fn pw_joint_permutation_equivariant() {
        let z = random_features(8, 5, 21);
        let x = random_features(8, 5, 22);
        let (psi, _) = xcorr_forward(XcorrVariant::Pw, &z, &x).unwrap();
        let perm = [5usize, 2, 7, 0, 3, 6, 1, 4];
        let zp = Tensor2D::from_rows(&perm.iter().map(|&i| z.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let xp = Tensor2D::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let (psi_p, _) = xcorr_forward(XcorrVariant::Pw, &zp, &xp).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(psi_p[k], psi[i]);
        }
    }

    #[test]
    fn scale_covariance_power_of_two_exact() {
        let z = random_features(6, 4, 31);
        let x = random_features(6, 4, 32);
        for variant in [XcorrVariant::Pcw, XcorrVariant::Pw] {
            let (psi, _) = xcorr_forward(variant, &z, &x).unwrap();
            let mut z2 = z.clone();
            for v in z2.as_mut_slice() {
                *v *= 2.0;
            }
            let (psi2, _) = xcorr_forward(variant, &z2, &x).unwrap();
            for (a, b) in psi.iter().zip(psi2.iter()) {
                assert_eq!(2.0 * a, *b, "{variant:?}");
            }
        }
    }

    #[test]
    fn cosine_identical_unit_rows_give_ones() {
        let mut z = random_features(9, 5, 41);
        normalize_rows(&mut z);
        let (psi, _) = xcorr_forward(XcorrVariant::Cosine, &z, &z).unwrap();
        for &v in &psi {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_zero_rows_contribute_zero() {
        let z = Tensor2D::from_vec(2, 3, vec![0.0, 0.0, 0.0, -1.0, -1.0, -1.0]).unwrap();
        let x = Tensor2D::from_vec(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        // Best match is the zero row (cos 0) because the other row is
        // anti-aligned (cos -1).
        let (psi, _) = xcorr_forward(XcorrVariant::Cosine, &z, &x).unwrap();
        assert_eq!(psi, vec![0.0]);
    }

    #[test]
    fn euclid_identical_rows_score_one() {
        let z = random_features(5, 4, 51);
        let (psi, _) = xcorr_forward(XcorrVariant::Euclid, &z, &z).unwrap();
        for &v in &psi {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dw_equals_pw_on_aligned_rows() {
        let z = random_features(11, 6, 61);
        let x = random_features(11, 6, 62);
        let (a, _) = xcorr_forward(XcorrVariant::Dw, &z, &x).unwrap();
        let (b, _) = xcorr_forward(XcorrVariant::Pw, &z, &x).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn all_variants_produce_one_weight_per_search_point() {
        let z = random_features(10, 4, 71);
        let x = random_features(10, 4, 72);
        for variant in XcorrVariant::ALL {
            let (psi, _) = xcorr_forward(variant, &z, &x).unwrap();
            assert_eq!(psi.len(), 10, "{variant:?}");
        }
    }

    #[test]
    fn identity_weighting_passes_features_through() {
        let x = random_features(8, 5, 81);
        let (psi, _) = xcorr_forward(XcorrVariant::None, &x, &x).unwrap();
        let (out, _) = weight_features_forward(&psi, &x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn weighting_zero_and_elementwise_oracle() {
        let x = random_features(6, 3, 91);
        let (out, _) = weight_features_forward(&vec![0.0; 6], &x).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(92);
        let psi: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (out, _) = weight_features_forward(&psi, &x).unwrap();
        for r in 0..6 {
            for c in 0..3 {
                assert!((out.get(r, c) - psi[r] * x.get(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let z = random_features(4, 3, 1);
        let x = random_features(4, 5, 2);
        assert!(xcorr_forward(XcorrVariant::Pcw, &z, &x).is_err());
        assert!(xcorr_forward(XcorrVariant::Pw, &z, &x).is_err());
    }

    #[test]
    fn variant_keys_roundtrip() {
        for v in XcorrVariant::ALL {
            assert_eq!(XcorrVariant::parse(v.key()).unwrap(), v);
        }
        assert!(XcorrVariant::parse("fancy").is_err());
    }
}
