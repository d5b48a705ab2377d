//! Shared-weight point-cloud feature extraction.
//!
//! A stack of set-abstraction (SA) layers subsamples the cloud with
//! farthest-point sampling, groups neighbors at multiple radii, runs a
//! shared per-point MLP over group-relative coordinates and max-pools per
//! group. Feature-propagation (FP) layers then interpolate the coarse
//! features back up (inverse-square-distance over the 3 nearest coarse
//! points), concatenate skip features and apply another MLP, yielding one
//! feature row per input point.
//!
//! Per-point MLP inputs are group-relative coordinates (neighbor minus
//! center) concatenated with the neighbor's incoming feature; absolute
//! coordinates never enter, so features are translation-robust.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::nn::layers::{max_pool_rows_backward, max_pool_rows_forward, MaxPoolCache, Mlp, MlpCache};
use crate::nn::{ParamSet, Real, Tensor2D};

/// Coordinates paired row-for-row with features.
#[derive(Clone, Debug)]
pub struct FeatureMap<T> {
    pub coords: Vec<Vec3>,
    pub features: Tensor2D<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// One grouping scale of a set-abstraction layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleConfig {
    /// Grouping radius, meters.
    pub radius: f64,
    /// Neighbor cap per group.
    pub max_neighbors: usize,
    /// MLP widths applied per neighbor.
    pub mlp: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaLayerConfig {
    /// Number of sampled centers this layer keeps.
    pub n_out: usize,
    pub scales: Vec<ScaleConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpLayerConfig {
    pub mlp: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Expected input cloud size N.
    pub input_points: usize,
    /// Final per-point feature width F.
    pub feature_dim: usize,
    pub sa: Vec<SaLayerConfig>,
    /// `fp[j]` produces the refined features at level `j` (level 0 = input
    /// points); layers are applied from the deepest level downward.
    pub fp: Vec<FpLayerConfig>,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_points == 0 {
            return Err(Error::Config("encoder: input_points must be >= 1".into()));
        }
        if self.sa.is_empty() || self.sa.len() != self.fp.len() {
            return Err(Error::Config(format!(
                "encoder: need equally many SA and FP layers (got {} and {})",
                self.sa.len(),
                self.fp.len()
            )));
        }
        let mut prev = self.input_points;
        for (i, sa) in self.sa.iter().enumerate() {
            if sa.n_out == 0 || sa.n_out > prev {
                return Err(Error::Config(format!(
                    "encoder: SA layer {i} output count {} must be in 1..={prev}",
                    sa.n_out
                )));
            }
            if i > 0 && sa.n_out >= prev {
                return Err(Error::Config("encoder: SA output counts must be strictly decreasing".into()));
            }
            if sa.scales.is_empty() || sa.scales.iter().any(|s| s.mlp.is_empty() || s.radius <= 0.0 || s.max_neighbors == 0) {
                return Err(Error::Config(format!("encoder: SA layer {i} has an invalid scale config")));
            }
            prev = sa.n_out;
        }
        for (j, fp) in self.fp.iter().enumerate() {
            if fp.mlp.is_empty() {
                return Err(Error::Config(format!("encoder: FP layer {j} has an empty MLP")));
            }
        }
        let last = self.fp[0].mlp.last().copied().unwrap_or(0);
        if last != self.feature_dim {
            return Err(Error::Config(format!(
                "encoder: FP layer 0 must end at feature_dim {} (got {last})",
                self.feature_dim
            )));
        }
        Ok(())
    }
}

/// Farthest-point sampling: the first index is drawn from `rng`, each
/// following index maximizes the min distance to the chosen set (ties to
/// the lowest index). If `k` exceeds the cloud size the selection repeats
/// cyclically.
pub fn farthest_point_sample(points: &[Vec3], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::EmptyCloud("farthest_point_sample"));
    }
    if k == 0 {
        return Err(Error::Config("farthest_point_sample: k must be >= 1".into()));
    }
    let n = points.len();
    let first = rng.gen_range(0..n);
    let mut order = Vec::with_capacity(k.min(n));
    order.push(first);
    let mut min_d2: Vec<f64> = points.iter().map(|p| p.distance_sq(points[first])).collect();
    while order.len() < k.min(n) {
        let mut best = 0;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > min_d2[best] {
                best = i;
            }
        }
        order.push(best);
        for (i, d) in min_d2.iter_mut().enumerate() {
            *d = d.min(points[i].distance_sq(points[best]));
        }
    }
    Ok((0..k).map(|i| order[i % order.len()]).collect())
}

/// For each center, up to `max_k` point indices within `radius`
/// (first-found order). A center with no neighbors gets its single nearest
/// point so groups are never empty.
pub fn ball_query(points: &[Vec3], centers: &[Vec3], radius: f64, max_k: usize) -> Vec<Vec<usize>> {
    debug_assert!(radius > 0.0);
    let r2 = radius * radius;
    centers
        .iter()
        .map(|c| {
            let mut group = Vec::new();
            for (i, p) in points.iter().enumerate() {
                if p.distance_sq(*c) <= r2 {
                    group.push(i);
                    if group.len() == max_k {
                        break;
                    }
                }
            }
            if group.is_empty() {
                let mut nearest = 0;
                let mut best = f64::INFINITY;
                for (i, p) in points.iter().enumerate() {
                    let d = p.distance_sq(*c);
                    if d < best {
                        best = d;
                        nearest = i;
                    }
                }
                group.push(nearest);
            }
            group
        })
        .collect()
}

struct SaScale<T> {
    radius: f64,
    max_neighbors: usize,
    mlp: Mlp<T>,
}

struct SaLayer<T> {
    n_out: usize,
    scales: Vec<SaScale<T>>,
}

struct SaScaleTrace<T> {
    groups: Vec<Vec<usize>>,
    mlp_caches: Vec<MlpCache<T>>,
    pool_caches: Vec<MaxPoolCache>,
}

struct SaTrace<T> {
    center_idx: Vec<usize>,
    scales: Vec<SaScaleTrace<T>>,
    in_points: usize,
    in_width: usize,
}

impl<T: Real> SaLayer<T> {
    fn forward(
        &self,
        coords: &[Vec3],
        features: &Tensor2D<T>,
        rng: &mut impl Rng,
    ) -> Result<(Vec<Vec3>, Tensor2D<T>, SaTrace<T>)> {
        let center_idx = farthest_point_sample(coords, self.n_out, rng)?;
        let centers: Vec<Vec3> = center_idx.iter().map(|&i| coords[i]).collect();
        let in_width = features.cols();
        let mut scale_outputs: Vec<Tensor2D<T>> = Vec::with_capacity(self.scales.len());
        let mut traces = Vec::with_capacity(self.scales.len());
        for scale in &self.scales {
            let groups = ball_query(coords, &centers, scale.radius, scale.max_neighbors);
            let width = scale.mlp.out_dim();
            let mut pooled = Tensor2D::zeros(centers.len(), width);
            let mut mlp_caches = Vec::with_capacity(centers.len());
            let mut pool_caches = Vec::with_capacity(centers.len());
            for (ci, group) in groups.iter().enumerate() {
                let center = centers[ci];
                let mut rows = Tensor2D::zeros(group.len(), 3 + in_width);
                for (r, &pi) in group.iter().enumerate() {
                    let rel = coords[pi] - center;
                    let row = rows.row_mut(r);
                    row[0] = T::of(rel.x);
                    row[1] = T::of(rel.y);
                    row[2] = T::of(rel.z);
                    row[3..].copy_from_slice(features.row(pi));
                }
                let (hidden, mlp_cache) = scale.mlp.forward(&rows)?;
                let (pool, pool_cache) = max_pool_rows_forward(&hidden)?;
                pooled.row_mut(ci).copy_from_slice(pool.row(0));
                mlp_caches.push(mlp_cache);
                pool_caches.push(pool_cache);
            }
            scale_outputs.push(pooled);
            traces.push(SaScaleTrace { groups, mlp_caches, pool_caches });
        }
        let mut out = scale_outputs[0].clone();
        for extra in &scale_outputs[1..] {
            out = out.hconcat(extra)?;
        }
        Ok((
            centers,
            out,
            SaTrace { center_idx, scales: traces, in_points: coords.len(), in_width },
        ))
    }

    /// Returns the gradient w.r.t. the layer's input features.
    fn backward(&mut self, trace: &SaTrace<T>, grad_out: &Tensor2D<T>) -> Result<Tensor2D<T>> {
        let mut grad_in = Tensor2D::zeros(trace.in_points, trace.in_width);
        let mut col = 0;
        for (scale, st) in self.scales.iter_mut().zip(trace.scales.iter()) {
            let width = scale.mlp.out_dim();
            for (ci, group) in st.groups.iter().enumerate() {
                let mut g_pool = Tensor2D::zeros(1, width);
                g_pool
                    .row_mut(0)
                    .copy_from_slice(&grad_out.row(ci)[col..col + width]);
                let g_hidden = max_pool_rows_backward(&st.pool_caches[ci], &g_pool);
                let g_rows = scale.mlp.backward(&st.mlp_caches[ci], &g_hidden)?;
                if trace.in_width > 0 {
                    for (r, &pi) in group.iter().enumerate() {
                        let src = &g_rows.row(r)[3..];
                        for (dst, &g) in grad_in.row_mut(pi).iter_mut().zip(src) {
                            *dst += g;
                        }
                    }
                }
            }
            col += width;
        }
        Ok(grad_in)
    }
}

struct FpLayer<T> {
    mlp: Mlp<T>,
}

struct FpTrace<T> {
    /// Per fine point: up to 3 coarse neighbors and normalized weights.
    neighbors: Vec<Vec<(usize, f64)>>,
    mlp_cache: MlpCache<T>,
    coarse_points: usize,
    coarse_width: usize,
    skip_width: usize,
}

/// Distances below this are treated as coincident (the coarse feature is
/// copied verbatim).
const COINCIDENT_DIST: f64 = 1e-10;

fn interpolation_weights(fine: Vec3, coarse: &[Vec3]) -> Vec<(usize, f64)> {
    let k = coarse.len().min(3);
    let mut dists: Vec<(usize, f64)> = coarse
        .iter()
        .enumerate()
        .map(|(i, c)| (i, fine.distance(*c)))
        .collect();
    dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    dists.truncate(k);
    if let Some(&(i, _)) = dists.iter().find(|(_, d)| *d < COINCIDENT_DIST) {
        return vec![(i, 1.0)];
    }
    let raw: Vec<f64> = dists.iter().map(|(_, d)| 1.0 / (d * d)).collect();
    let sum: f64 = raw.iter().sum();
    dists
        .iter()
        .zip(raw)
        .map(|(&(i, _), w)| (i, w / sum))
        .collect()
}

impl<T: Real> FpLayer<T> {
    fn forward(
        &self,
        coarse: &FeatureMap<T>,
        fine_coords: &[Vec3],
        skip: &Tensor2D<T>,
    ) -> Result<(Tensor2D<T>, FpTrace<T>)> {
        if coarse.is_empty() {
            return Err(Error::EmptyCloud("fp_layer: coarse map"));
        }
        let fc = coarse.features.cols();
        let mut rows = Tensor2D::zeros(fine_coords.len(), fc + skip.cols());
        let mut neighbors = Vec::with_capacity(fine_coords.len());
        for (r, &p) in fine_coords.iter().enumerate() {
            let ws = interpolation_weights(p, &coarse.coords);
            let row = rows.row_mut(r);
            for &(ci, w) in &ws {
                let wt = T::of(w);
                for (dst, &f) in row[..fc].iter_mut().zip(coarse.features.row(ci)) {
                    *dst += wt * f;
                }
            }
            row[fc..].copy_from_slice(skip.row(r));
            neighbors.push(ws);
        }
        let (out, mlp_cache) = self.mlp.forward(&rows)?;
        Ok((
            out,
            FpTrace {
                neighbors,
                mlp_cache,
                coarse_points: coarse.len(),
                coarse_width: fc,
                skip_width: skip.cols(),
            },
        ))
    }

    /// Returns gradients w.r.t. the coarse features and the skip features.
    fn backward(
        &mut self,
        trace: &FpTrace<T>,
        grad_out: &Tensor2D<T>,
    ) -> Result<(Tensor2D<T>, Tensor2D<T>)> {
        let g_rows = self.mlp.backward(&trace.mlp_cache, grad_out)?;
        let fc = trace.coarse_width;
        let mut g_coarse = Tensor2D::zeros(trace.coarse_points, fc);
        let mut g_skip = Tensor2D::zeros(g_rows.rows(), trace.skip_width);
        for r in 0..g_rows.rows() {
            let row = g_rows.row(r);
            for &(ci, w) in &trace.neighbors[r] {
                let wt = T::of(w);
                for (dst, &g) in g_coarse.row_mut(ci).iter_mut().zip(&row[..fc]) {
                    *dst += wt * g;
                }
            }
            g_skip.row_mut(r).copy_from_slice(&row[fc..]);
        }
        Ok((g_coarse, g_skip))
    }
}

/// The full SA-stack + FP-stack encoder. One parameter set serves both the
/// template and the search branch; each forward pass returns its own trace
/// so two branches can be backpropagated independently.
pub struct Encoder<T> {
    pub cfg: EncoderConfig,
    sa: Vec<SaLayer<T>>,
    fp: Vec<FpLayer<T>>,
}

pub struct EncoderTrace<T> {
    sa_traces: Vec<SaTrace<T>>,
    fp_traces: Vec<FpTrace<T>>,
    /// Original (pre-refinement) features per level; level 0 has width 0.
    level_widths: Vec<usize>,
}

impl<T: Real> Encoder<T> {
    pub fn new(cfg: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut sa = Vec::with_capacity(cfg.sa.len());
        let mut width = 0usize; // level-0 feature width (coordinates only)
        let mut level_widths = vec![0usize];
        for layer_cfg in &cfg.sa {
            let scales = layer_cfg
                .scales
                .iter()
                .map(|s| SaScale {
                    radius: s.radius,
                    max_neighbors: s.max_neighbors,
                    mlp: Mlp::new(3 + width, &s.mlp, rng),
                })
                .collect::<Vec<_>>();
            width = scales.iter().map(|s| s.mlp.out_dim()).sum();
            level_widths.push(width);
            sa.push(SaLayer { n_out: layer_cfg.n_out, scales });
        }
        // FP layers run from the deepest level down; fp[j] refines level j.
        let levels = cfg.sa.len();
        let mut fp: Vec<Option<FpLayer<T>>> = (0..levels).map(|_| None).collect();
        let mut refined = level_widths[levels];
        for j in (0..levels).rev() {
            let skip = level_widths[j];
            let layer = FpLayer { mlp: Mlp::new(refined + skip, &cfg.fp[j].mlp, rng) };
            refined = layer.mlp.out_dim();
            fp[j] = Some(layer);
        }
        Ok(Self { cfg, sa, fp: fp.into_iter().map(Option::unwrap).collect() })
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.feature_dim
    }

    /// Encode a cloud of exactly `input_points` points. The sampling seed
    /// pins farthest-point sampling, making the pass deterministic.
    pub fn forward(&self, cloud: &PointCloud, sampling_seed: u64) -> Result<(FeatureMap<T>, EncoderTrace<T>)> {
        if cloud.len() != self.cfg.input_points {
            return Err(Error::shape(
                "Encoder::forward",
                format!("{} input points", self.cfg.input_points),
                format!("{}", cloud.len()),
            ));
        }
        let mut coords: Vec<Vec<Vec3>> = vec![cloud.points.clone()];
        let mut features: Vec<Tensor2D<T>> = vec![Tensor2D::zeros(cloud.len(), 0)];
        let mut sa_traces = Vec::with_capacity(self.sa.len());
        let mut level_widths = vec![0usize];
        for (i, layer) in self.sa.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(sampling_seed.wrapping_add(i as u64));
            let (c, f, trace) = layer.forward(&coords[i], &features[i], &mut rng)?;
            level_widths.push(f.cols());
            coords.push(c);
            features.push(f);
            sa_traces.push(trace);
        }
        let levels = self.sa.len();
        let mut fp_traces: Vec<Option<FpTrace<T>>> = (0..levels).map(|_| None).collect();
        let mut refined = features[levels].clone();
        for j in (0..levels).rev() {
            let coarse = FeatureMap { coords: coords[j + 1].clone(), features: refined };
            let (out, trace) = self.fp[j].forward(&coarse, &coords[j], &features[j])?;
            refined = out;
            fp_traces[j] = Some(trace);
        }
        refined.check_finite("encoder output")?;
        Ok((
            FeatureMap { coords: coords[0].clone(), features: refined },
            EncoderTrace {
                sa_traces,
                fp_traces: fp_traces.into_iter().map(Option::unwrap).collect(),
                level_widths,
            },
        ))
    }

    /// Backpropagate a gradient on the output feature map; parameter
    /// gradients accumulate inside the layers.
    pub fn backward(&mut self, trace: &EncoderTrace<T>, grad_features: &Tensor2D<T>) -> Result<()> {
        let levels = self.sa.len();
        // Walk the FP stack upward, accumulating per-level gradients on the
        // skip features as we go.
        let mut g_refined = grad_features.clone();
        let mut g_skip_by_level: Vec<Tensor2D<T>> = (0..=levels)
            .map(|j| {
                let points = trace
                    .sa_traces
                    .get(j.wrapping_sub(1))
                    .map_or(trace.sa_traces[0].in_points, |t| t.center_idx.len());
                let width = trace.level_widths[j];
                Tensor2D::zeros(
                    if j == 0 { trace.sa_traces[0].in_points } else { points },
                    width,
                )
            })
            .collect();
        for j in 0..levels {
            let (g_coarse, g_skip) = self.fp[j].backward(&trace.fp_traces[j], &g_refined)?;
            g_skip_by_level[j].add_assign(&g_skip)?;
            g_refined = g_coarse;
        }
        // g_refined now targets the deepest SA output.
        g_skip_by_level[levels].add_assign(&g_refined)?;
        for i in (0..levels).rev() {
            let g_in = self.sa[i].backward(&trace.sa_traces[i], &g_skip_by_level[i + 1])?;
            if g_in.cols() > 0 {
                g_skip_by_level[i].add_assign(&g_in)?;
            }
        }
        Ok(())
    }
}

impl<T: Real> ParamSet<T> for Encoder<T> {
    fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor2D<T>, &mut Tensor2D<T>),
    ) {
        for (i, layer) in self.sa.iter_mut().enumerate() {
            for (s, scale) in layer.scales.iter_mut().enumerate() {
                scale.mlp.for_each_param(&format!("{prefix}.sa{i}.scale{s}"), f);
            }
        }
        for (j, layer) in self.fp.iter_mut().enumerate() {
            layer.mlp.for_each_param(&format!("{prefix}.fp{j}"), f);
        }
    }
}

/// Two-level desk-scale configuration used across the test suites. Radii
/// are sized for 64-point crops of car-scale search areas, where typical
/// point spacing is close to a meter.
pub fn desk_encoder_config() -> EncoderConfig {
    EncoderConfig {
        input_points: 64,
        feature_dim: 32,
        sa: vec![
            SaLayerConfig {
                n_out: 32,
                scales: vec![
                    ScaleConfig { radius: 0.8, max_neighbors: 8, mlp: vec![16, 16] },
                    ScaleConfig { radius: 1.6, max_neighbors: 16, mlp: vec![16, 16] },
                ],
            },
            SaLayerConfig {
                n_out: 16,
                scales: vec![
                    ScaleConfig { radius: 1.6, max_neighbors: 8, mlp: vec![16, 32] },
                    ScaleConfig { radius: 3.2, max_neighbors: 16, mlp: vec![16, 32] },
                ],
            },
        ],
        fp: vec![
            FpLayerConfig { mlp: vec![32, 32] },
            FpLayerConfig { mlp: vec![32] },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn grid_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from_points(
            (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-0.5..0.5),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn fps_full_selection_is_permutation() {
        let cloud = grid_cloud(30, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let idx = farthest_point_sample(&cloud.points, 30, &mut rng).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 30);
    }

    #[test]
    fn fps_on_a_line_picks_the_far_end() {
        let points: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        // Seed the generator so the first pick is index 0.
        let mut start0 = None;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if rng.gen_range(0..10usize) == 0 {
                start0 = Some(seed);
                break;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(start0.expect("some seed starts at 0"));
        let idx = farthest_point_sample(&points, 2, &mut rng).unwrap();
        assert_eq!(idx, vec![0, 9]);
    }

    #[test]
    fn fps_k_one_returns_seeded_start() {
        let cloud = grid_cloud(20, 3);
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let idx = farthest_point_sample(&cloud.points, 1, &mut a).unwrap();
        assert_eq!(idx, vec![b.gen_range(0..20usize)]);
    }

    #[test]
    fn fps_cycles_when_k_exceeds_cloud() {
        let points: Vec<Vec3> = (0..3).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx = farthest_point_sample(&points, 8, &mut rng).unwrap();
        assert_eq!(idx.len(), 8);
        for i in 3..8 {
            assert_eq!(idx[i], idx[i % 3]);
        }
    }

    #[test]
    fn ball_query_matches_brute_force() {
        let cloud = grid_cloud(200, 7);
        let centers = grid_cloud(20, 8);
        let radius = 0.5;
        let groups = ball_query(&cloud.points, &centers.points, radius, 200);
        for (c, group) in centers.points.iter().zip(groups.iter()) {
            let expected: Vec<usize> = cloud
                .points
                .iter()
                .enumerate()
                .filter(|(_, p)| p.distance(*c) <= radius)
                .map(|(i, _)| i)
                .collect();
            if expected.is_empty() {
                assert_eq!(group.len(), 1);
            } else {
                assert_eq!(group, &expected);
            }
        }
    }

    #[test]
    fn ball_query_big_radius_caps_at_max_k() {
        let cloud = grid_cloud(50, 9);
        let centers = vec![Vec3::ZERO];
        let groups = ball_query(&cloud.points, &centers, 100.0, 12);
        assert_eq!(groups[0].len(), 12);
        let groups = ball_query(&cloud.points, &centers, 100.0, 500);
        assert_eq!(groups[0].len(), 50);
    }

    #[test]
    fn ball_query_isolated_center_falls_back_to_nearest() {
        let points = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
        let centers = vec![Vec3::new(100.0, 0.0, 0.0)];
        let groups = ball_query(&points, &centers, 0.1, 8);
        assert_eq!(groups[0], vec![1]);
    }

    fn desk_encoder(seed: u64) -> Encoder<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Encoder::new(desk_encoder_config(), &mut rng).unwrap()
    }

    #[test]
    fn encode_produces_n_by_f_features() {
        let enc = desk_encoder(1);
        let cloud = grid_cloud(64, 11);
        let (fm, _) = enc.forward(&cloud, 42).unwrap();
        assert_eq!(fm.features.shape(), (64, 32));
        assert_eq!(fm.coords.len(), 64);
        fm.features.check_finite("features").unwrap();
    }

    #[test]
    fn encode_rejects_wrong_input_size() {
        let enc = desk_encoder(1);
        let cloud = grid_cloud(63, 11);
        assert!(enc.forward(&cloud, 42).is_err());
    }

    #[test]
    fn identical_clouds_share_identical_features() {
        let enc = desk_encoder(2);
        let cloud = grid_cloud(64, 12);
        let (a, _) = enc.forward(&cloud, 7).unwrap();
        let (b, _) = enc.forward(&cloud, 7).unwrap();
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn translation_leaves_features_nearly_unchanged() {
        let enc = desk_encoder(3);
        let cloud = grid_cloud(64, 13);
        let (a, _) = enc.forward(&cloud, 9).unwrap();
        let shift = Vec3::new(5.0, -3.0, 2.0);
        let shifted = PointCloud::from_points(cloud.points.iter().map(|&p| p + shift).collect());
        let (b, _) = enc.forward(&shifted, 9).unwrap();
        for (x, y) in a.features.as_slice().iter().zip(b.features.as_slice()) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn duplicated_single_point_gives_identical_center_features() {
        let enc = desk_encoder(4);
        let cloud = PointCloud::from_points(vec![Vec3::new(0.5, -0.25, 0.1); 64]);
        let (fm, _) = enc.forward(&cloud, 3).unwrap();
        let first = fm.features.row(0).to_vec();
        for r in 1..fm.features.rows() {
            assert_eq!(fm.features.row(r), &first[..]);
        }
    }

    #[test]
    fn sa_layer_output_set_is_permutation_invariant_with_full_groups() {
        // One SA layer with k = n centers and groups covering the whole
        // cloud: permuting the input must leave the set of
        // (coordinate, feature) rows unchanged.
        let cfg = EncoderConfig {
            input_points: 12,
            feature_dim: 8,
            sa: vec![SaLayerConfig {
                n_out: 12,
                scales: vec![ScaleConfig { radius: 100.0, max_neighbors: 12, mlp: vec![8] }],
            }],
            fp: vec![FpLayerConfig { mlp: vec![8] }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let enc = Encoder::<f64>::new(cfg, &mut rng).unwrap();
        let cloud = grid_cloud(12, 21);
        let (fm, _) = enc.forward(&cloud, 5).unwrap();

        let perm: Vec<usize> = vec![7, 3, 11, 0, 5, 9, 1, 10, 2, 8, 4, 6];
        let permuted = PointCloud::from_points(perm.iter().map(|&i| cloud.points[i]).collect());
        let (fm_p, _) = enc.forward(&permuted, 5).unwrap();

        let mut rows_a: Vec<Vec<u64>> = (0..12)
            .map(|r| {
                let mut v = vec![fm.coords[r].x.to_bits(), fm.coords[r].y.to_bits(), fm.coords[r].z.to_bits()];
                v.extend(fm.features.row(r).iter().map(|f| f.to_bits()));
                v
            })
            .collect();
        let mut rows_b: Vec<Vec<u64>> = (0..12)
            .map(|r| {
                let mut v = vec![fm_p.coords[r].x.to_bits(), fm_p.coords[r].y.to_bits(), fm_p.coords[r].z.to_bits()];
                v.extend(fm_p.features.row(r).iter().map(|f| f.to_bits()));
                v
            })
            .collect();
        rows_a.sort();
        rows_b.sort();
        assert_eq!(rows_a, rows_b);
    }

    #[test]
    fn group_member_order_does_not_change_pooling() {
        // Max pooling over group rows is order-free; shuffle the group by
        // permuting input points while pinning centers via identical FPS
        // outcome (radius covers everything, single center).
        let cfg = EncoderConfig {
            input_points: 10,
            feature_dim: 4,
            sa: vec![SaLayerConfig {
                n_out: 1,
                scales: vec![ScaleConfig { radius: 100.0, max_neighbors: 10, mlp: vec![4] }],
            }],
            fp: vec![FpLayerConfig { mlp: vec![4] }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let enc = Encoder::<f64>::new(cfg, &mut rng).unwrap();
        let cloud = grid_cloud(10, 31);
        // Find two seeds whose FPS starts pick the same physical point in
        // original and reversed order.
        let reversed = PointCloud::from_points(cloud.points.iter().rev().cloned().collect());
        let mut pair = None;
        'outer: for s1 in 0..50u64 {
            let i1 = ChaCha8Rng::seed_from_u64(s1).gen_range(0..10usize);
            for s2 in 0..50u64 {
                let i2 = ChaCha8Rng::seed_from_u64(s2).gen_range(0..10usize);
                if i2 == 9 - i1 {
                    pair = Some((s1, s2));
                    break 'outer;
                }
            }
        }
        let (s1, s2) = pair.expect("matching seeds exist");
        let (a, _) = enc.forward(&cloud, s1).unwrap();
        let (b, _) = enc.forward(&reversed, s2).unwrap();
        // Same single center, same group set in different member order: the
        // pooled features must match exactly (compared as sorted row sets
        // because output rows follow input order).
        let mut rows_a: Vec<Vec<u64>> = (0..10).map(|r| a.features.row(r).iter().map(|f| f.to_bits()).collect()).collect();
        let mut rows_b: Vec<Vec<u64>> = (0..10).map(|r| b.features.row(r).iter().map(|f| f.to_bits()).collect()).collect();
        rows_a.sort();
        rows_b.sort();
        assert_eq!(rows_a, rows_b);
    }

    #[test]
    fn fp_interpolation_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let coarse_coords: Vec<Vec3> = (0..8)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let coarse_feats =
            Tensor2D::<f64>::from_vec(8, 5, (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let fine: Vec<Vec3> = (0..20)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        // Identity MLP so the FP output equals the interpolated features.
        let mut fp = FpLayer::<f64> { mlp: Mlp::new(5, &[5], &mut rng) };
        fp.mlp.layers[0].w.fill(0.0);
        for i in 0..5 {
            fp.mlp.layers[0].w.set(i, i, 1.0);
        }
        fp.mlp.layers[0].b.fill(0.0);
        let coarse = FeatureMap { coords: coarse_coords.clone(), features: coarse_feats.clone() };
        let skip = Tensor2D::zeros(20, 0);
        let (out, _) = fp.forward(&coarse, &fine, &skip).unwrap();
        for (r, &p) in fine.iter().enumerate() {
            // Brute force: all coarse distances, pick 3 smallest, inverse
            // square weights.
            let mut d: Vec<(usize, f64)> = coarse_coords.iter().enumerate().map(|(i, c)| (i, p.distance(*c))).collect();
            d.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let top = &d[..3];
            let ws: Vec<f64> = top.iter().map(|(_, dist)| 1.0 / (dist * dist)).collect();
            let sum: f64 = ws.iter().sum();
            for c in 0..5 {
                let expected: f64 = top
                    .iter()
                    .zip(&ws)
                    .map(|(&(i, _), w)| w / sum * coarse_feats.get(i, c))
                    .sum();
                let got = out.get(r, c).max(0.0); // identity MLP still applies ReLU
                let expected = expected.max(0.0);
                assert!((got - expected).abs() < 1e-9, "row {r} col {c}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn fp_coincident_fine_point_copies_coarse_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let coarse_coords = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let coarse_feats = Tensor2D::<f64>::from_vec(3, 2, vec![0.3, 0.7, -0.2, 0.5, 0.9, -0.4]).unwrap();
        let mut fp = FpLayer::<f64> { mlp: Mlp::new(2, &[2], &mut rng) };
        fp.mlp.layers[0].w.fill(0.0);
        fp.mlp.layers[0].w.set(0, 0, 1.0);
        fp.mlp.layers[0].w.set(1, 1, 1.0);
        fp.mlp.layers[0].b.fill(0.0);
        let coarse = FeatureMap { coords: coarse_coords, features: coarse_feats };
        let fine = vec![Vec3::new(1.0, 0.0, 0.0)];
        let skip = Tensor2D::zeros(1, 0);
        let (out, _) = fp.forward(&coarse, &fine, &skip).unwrap();
        // Identity MLP with ReLU: the negative channel clamps to zero.
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(0, 1), 0.5);
    }

    #[test]
    fn fp_single_coarse_point_broadcasts() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let coarse = FeatureMap {
            coords: vec![Vec3::new(0.2, 0.1, 0.0)],
            features: Tensor2D::<f64>::from_vec(1, 2, vec![0.6, 0.8]).unwrap(),
        };
        let mut fp = FpLayer::<f64> { mlp: Mlp::new(2, &[2], &mut rng) };
        fp.mlp.layers[0].w.fill(0.0);
        fp.mlp.layers[0].w.set(0, 0, 1.0);
        fp.mlp.layers[0].w.set(1, 1, 1.0);
        fp.mlp.layers[0].b.fill(0.0);
        let fine = vec![Vec3::new(5.0, 5.0, 5.0), Vec3::new(-1.0, 0.0, 0.0)];
        let (out, _) = fp.forward(&coarse, &fine, &Tensor2D::zeros(2, 0)).unwrap();
        for r in 0..2 {
            assert_eq!(out.row(r), &[0.6, 0.8]);
        }
    }

    #[test]
    fn empty_coarse_map_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let fp = FpLayer::<f64> { mlp: Mlp::new(2, &[2], &mut rng) };
        let coarse = FeatureMap { coords: vec![], features: Tensor2D::<f64>::zeros(0, 2) };
        assert!(fp.forward(&coarse, &[Vec3::ZERO], &Tensor2D::zeros(1, 0)).is_err());
    }

    #[test]
    fn shared_weights_change_both_branches_identically() {
        let mut enc = desk_encoder(6);
        let template = grid_cloud(64, 61);
        let search = grid_cloud(64, 62);
        let (t0, _) = enc.forward(&template, 1).unwrap();
        let (s0, _) = enc.forward(&search, 2).unwrap();
        // Nudge one shared parameter.
        enc.for_each_param("", &mut |name, value, _| {
            if name == ".sa0.scale0.0.w" {
                let v = value.get(0, 0);
                value.set(0, 0, v + 0.5);
            }
        });
        let (t1, _) = enc.forward(&template, 1).unwrap();
        let (s1, _) = enc.forward(&search, 2).unwrap();
        assert_ne!(t0.features, t1.features);
        assert_ne!(s0.features, s1.features);
    }

    #[test]
    fn strictly_decreasing_sa_counts_enforced() {
        let mut cfg = desk_encoder_config();
        cfg.sa[1].n_out = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Encoder::<f64>::new(cfg, &mut rng).is_err());
    }
}
