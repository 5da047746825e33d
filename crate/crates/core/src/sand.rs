//! Render-and-compare particle filter over 6-DoF object poses.
//!
//! Particles are seeded inside the detector's boxes in proportion to their
//! scores, scored by rendering the object at each hypothesis and counting
//! per-pixel depth agreements with the observed crop, then resampled and
//! perturbed until the mean weight clears `tau` or the iteration budget runs
//! out. The highest-weight particle is the estimate.
//!
//! Randomness is drawn from per-particle ChaCha streams keyed by
//! `(seed, iteration, particle index)`, so results do not depend on how the
//! scoring pass is scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::DetectionSet;
use crate::error::{Error, Result};
use crate::geometry::{random_rotation, CameraIntrinsics, PointCloud, Pose6D, TriangleMesh, Vec3};
use crate::observation::{crop_and_backproject, BoundingBox, DepthImage};
use crate::renderer::{render_depth, DepthBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandConfig {
    /// Particle count M, constant across iterations.
    pub particles: usize,
    pub max_iterations: usize,
    /// Inlier radius, meters.
    pub epsilon: f64,
    /// Weight on the fraction of the observed crop explained.
    pub alpha: f64,
    /// Weight on the fraction of the rendered object explained.
    pub beta: f64,
    /// Weight on the detector score.
    pub gamma: f64,
    /// Stop once the mean raw weight reaches this.
    pub tau: f64,
    /// Per-axis translation perturbation std, meters.
    pub sigma_t: f64,
    /// Per-axis rotation-vector perturbation std, radians.
    pub sigma_r: f64,
    pub seed: u64,
}

impl Default for SandConfig {
    fn default() -> Self {
        SandConfig {
            particles: 625,
            max_iterations: 200,
            epsilon: 0.01,
            alpha: 0.4,
            beta: 0.4,
            gamma: 0.2,
            tau: 0.7,
            sigma_t: 0.005,
            sigma_r: 0.02,
            seed: 0,
        }
    }
}

impl SandConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.particles == 0 {
            return bad("particles must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        let coeffs = [self.alpha, self.beta, self.gamma];
        if coeffs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) || coeffs.iter().sum::<f64>() <= 0.0 {
            return bad("alpha, beta, gamma must be nonnegative with a positive sum");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.sigma_t >= 0.0 && self.sigma_r >= 0.0) {
            return bad("perturbation sigmas must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose6D,
    /// Raw weight from the last scoring pass; zero until scored.
    pub weight: f64,
    /// Index into the [`DetectionSet`] of the box whose crop scores this particle.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub iteration: usize,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn mean_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum::<f64>() / self.particles.len() as f64
    }

    /// Highest weight; the lowest index wins ties.
    pub fn best(&self) -> Option<&Particle> {
        self.particles.iter().fold(None, |best: Option<&Particle>, p| match best {
            Some(b) if b.weight >= p.weight => Some(b),
            _ => Some(p),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose6D,
    pub weight: f64,
    pub refined_box: BoundingBox,
    pub converged: bool,
    pub iterations: usize,
}

const RESAMPLE_LANE: u32 = u32::MAX;

/// The random stream for one particle (or the resampler) at one iteration.
pub fn stream_rng(seed: u64, iteration: usize, lane: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 32) | lane as u64);
    rng
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: [f64; 3]) -> Vec3 {
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    Vec3::new(sigma[0] * n(), sigma[1] * n(), sigma[2] * n())
}

/// The observed point cloud `z^(i)` of one detection box.
#[derive(Debug, Clone)]
pub struct ObservedCrop {
    pub bbox: BoundingBox,
    pub score: f64,
    pub cloud: PointCloud,
    /// Median valid depth inside the box.
    pub median_depth: f64,
}

/// `N^(i)`: observed crop points whose own pixel holds a rendered surface
/// point closer than `epsilon` in 3D. Both inputs must come from the same
/// camera; the rendered point is recovered by rescaling the observed point
/// along its pixel ray.
pub fn count_inliers(rendered: &DepthBuffer, crop: &PointCloud, epsilon: f64) -> usize {
    let Some(pixels) = crop.pixels.as_deref() else { return 0 };
    let Some(fp) = rendered.footprint() else { return 0 };
    let eps2 = epsilon * epsilon;
    crop.points
        .iter()
        .zip(pixels)
        .filter(|(p, px)| {
            if !fp.contains(px.col as i64, px.row as i64) {
                return false;
            }
            match rendered.get(px.row, px.col) {
                Some(d) => {
                    let r = *p * (d / p.z);
                    (r - *p).norm_squared() < eps2
                }
                None => false,
            }
        })
        .count()
}

/// `alpha * N/N_b + beta * N/N_r + gamma * c`, or zero when nothing renders.
pub fn weight_equation(inliers: usize, observed: usize, rendered: usize, score: f64, cfg: &SandConfig) -> f64 {
    if rendered == 0 || observed == 0 {
        return 0.0;
    }
    let n = inliers as f64;
    cfg.alpha * n / observed as f64 + cfg.beta * n / rendered as f64 + cfg.gamma * score
}

/// Tight box around the object's rendered footprint at `pose`.
pub fn refine_bbox(pose: &Pose6D, mesh: &TriangleMesh, cam: &CameraIntrinsics) -> Result<BoundingBox> {
    render_depth(mesh, pose, cam).footprint().ok_or(Error::OffScreen)
}

/// Systematic resampling followed by Gaussian perturbation of every child.
/// Children inherit their parent's source detection and start unweighted.
pub fn resample_perturb(ps: &ParticleSet, cfg: &SandConfig) -> Result<ParticleSet> {
    let m = ps.particles.len();
    let total: f64 = ps.particles.iter().map(|p| p.weight).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateWeights(ps.iteration));
    }
    let parents = systematic_indices(ps.particles.iter().map(|p| p.weight / total), m, {
        let mut rng = stream_rng(cfg.seed, ps.iteration, RESAMPLE_LANE);
        rng.random::<f64>()
    });
    let next = ps.iteration + 1;
    let st = [cfg.sigma_t; 3];
    let sr = [cfg.sigma_r; 3];
    let particles = parents
        .into_iter()
        .enumerate()
        .map(|(k, j)| {
            let parent = &ps.particles[j];
            let mut rng = stream_rng(cfg.seed, next, k as u32);
            let dt = gaussian3(&mut rng, st);
            let dr = gaussian3(&mut rng, sr);
            Particle { pose: parent.pose.perturbed(&dt, &dr), weight: 0.0, source: parent.source }
        })
        .collect();
    Ok(ParticleSet { particles, iteration: next })
}

/// Low-variance resampling: `m` evenly spaced pointers with one shared
/// offset `u / m` (`u` in `[0, 1)`) walked through the cumulative weights.
pub fn systematic_indices(normalized: impl Iterator<Item = f64>, m: usize, u: f64) -> Vec<usize> {
    let weights: Vec<f64> = normalized.collect();
    let last = weights.len() - 1;
    let mut out = Vec::with_capacity(m);
    let mut cumulative = weights[0];
    let mut j = 0;
    for k in 0..m {
        let target = (u + k as f64) / m as f64;
        while cumulative <= target && j < last {
            j += 1;
            cumulative += weights[j];
        }
        out.push(j);
    }
    out
}

/// One pose-estimation problem: an object class, its model, the observation
/// and the detector's boxes for that class.
pub struct SandFilter<'a> {
    mesh: &'a TriangleMesh,
    cam: &'a CameraIntrinsics,
    cfg: SandConfig,
    /// Indexed like the detection set; `None` for other classes and for
    /// boxes without a single valid depth pixel.
    crops: Vec<Option<ObservedCrop>>,
}

impl<'a> SandFilter<'a> {
    pub fn new(
        img: &DepthImage,
        dets: &DetectionSet,
        class_id: &str,
        mesh: &'a TriangleMesh,
        cam: &'a CameraIntrinsics,
        cfg: &SandConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        img.check_dimensions(cam)?;
        let mut any = false;
        let mut any_positive = false;
        let mut crops = Vec::with_capacity(dets.len());
        for d in &dets.detections {
            if d.class_id != class_id {
                crops.push(None);
                continue;
            }
            any = true;
            any_positive |= d.score > 0.0;
            let crop = match crop_and_backproject(img, &d.bbox, cam) {
                Ok(cloud) if !cloud.is_empty() => {
                    let mut depths: Vec<f64> = cloud.points.iter().map(|p| p.z).collect();
                    let mid = depths.len() / 2;
                    let (_, median, _) = depths.select_nth_unstable_by(mid, f64::total_cmp);
                    Some(ObservedCrop {
                        bbox: d.bbox.clamped(img.width(), img.height())?,
                        score: d.score,
                        median_depth: *median,
                        cloud,
                    })
                }
                _ => None,
            };
            crops.push(crop);
        }
        if !any || !any_positive {
            return Err(Error::NoDetections(class_id.to_string()));
        }
        if crops.iter().all(|c| c.is_none()) {
            return Err(Error::EmptyCrops(class_id.to_string()));
        }
        Ok(SandFilter { mesh, cam, cfg: cfg.clone(), crops })
    }

    pub fn config(&self) -> &SandConfig {
        &self.cfg
    }

    pub fn crop(&self, detection: usize) -> Option<&ObservedCrop> {
        self.crops.get(detection).and_then(|c| c.as_ref())
    }

    /// Draws the initial hypotheses. Each particle picks its box with
    /// probability proportional to the box score (boxes with no valid depth
    /// are skipped), starts at the back-projected box center at the crop's
    /// median depth plus noise (`sigma_t` laterally, `2 sigma_t` in depth)
    /// and takes a uniformly random orientation.
    pub fn init_particles(&self) -> ParticleSet {
        let candidates: Vec<(usize, &ObservedCrop)> = self
            .crops
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_ref().map(|c| (i, c)))
            .filter(|(_, c)| c.score > 0.0)
            .collect();
        let mut cumulative = Vec::with_capacity(candidates.len());
        let mut total = 0.0;
        for (_, c) in &candidates {
            total += c.score;
            cumulative.push(total);
        }
        let sigma = [self.cfg.sigma_t, self.cfg.sigma_t, 2.0 * self.cfg.sigma_t];
        let particles = (0..self.cfg.particles)
            .map(|i| {
                let mut rng = stream_rng(self.cfg.seed, 0, i as u32);
                let pick = rng.random::<f64>() * total;
                let k = cumulative.partition_point(|&c| c <= pick).min(candidates.len() - 1);
                let (source, crop) = candidates[k];
                let (u, v) = crop.bbox.center();
                let center = self.cam.backproject(u, v, crop.median_depth);
                let translation = center + gaussian3(&mut rng, sigma);
                let rotation = random_rotation(&mut rng);
                Particle { pose: Pose6D::new(translation, rotation), weight: 0.0, source }
            })
            .collect();
        ParticleSet { particles, iteration: 0 }
    }

    /// Renders the particle into `buf` (cleared first) and evaluates the
    /// weight equation against its source crop.
    pub fn weigh_into(&self, buf: &mut DepthBuffer, particle: &Particle) -> f64 {
        let Some(crop) = self.crop(particle.source) else { return 0.0 };
        buf.clear();
        buf.draw(self.mesh, &particle.pose, self.cam);
        let inliers = count_inliers(buf, &crop.cloud, self.cfg.epsilon);
        weight_equation(inliers, crop.cloud.len(), buf.valid_count(), crop.score, &self.cfg)
    }

    pub fn weigh(&self, particle: &Particle) -> f64 {
        self.weigh_into(&mut DepthBuffer::for_camera(self.cam), particle)
    }

    /// Scores every particle. Work is spread over the rayon pool, each
    /// worker with its own render target.
    pub fn score(&self, ps: &mut ParticleSet) {
        ps.particles
            .par_iter_mut()
            .for_each_init(|| DepthBuffer::for_camera(self.cam), |buf, p| p.weight = self.weigh_into(buf, p));
    }

    pub fn run(&self) -> Result<PoseEstimate> {
        self.run_from(self.init_particles()).map(|(e, _)| e)
    }

    /// Runs the score / test / resample loop from a given particle set and
    /// returns the estimate with the per-iteration mean weights.
    pub fn run_from(&self, mut ps: ParticleSet) -> Result<(PoseEstimate, Vec<f64>)> {
        let mut means = Vec::new();
        let mut converged = false;
        loop {
            self.score(&mut ps);
            let mean = ps.mean_weight();
            means.push(mean);
            if mean >= self.cfg.tau {
                converged = true;
                break;
            }
            if means.len() >= self.cfg.max_iterations {
                break;
            }
            ps = resample_perturb(&ps, &self.cfg)?;
        }
        let best = *ps.best().expect("particle count is at least one");
        let refined_box = refine_bbox(&best.pose, self.mesh, self.cam)?;
        let estimate =
            PoseEstimate { pose: best.pose, weight: best.weight, refined_box, converged, iterations: means.len() };
        Ok((estimate, means))
    }
}

pub fn init_particles(
    dets: &DetectionSet,
    class_id: &str,
    img: &DepthImage,
    mesh: &TriangleMesh,
    cam: &CameraIntrinsics,
    cfg: &SandConfig,
) -> Result<ParticleSet> {
    Ok(SandFilter::new(img, dets, class_id, mesh, cam, cfg)?.init_particles())
}

/// Estimates the pose of the single instance of `class_id` in `img`.
pub fn run_sand(
    img: &DepthImage,
    dets: &DetectionSet,
    class_id: &str,
    mesh: &TriangleMesh,
    cam: &CameraIntrinsics,
    cfg: &SandConfig,
) -> Result<PoseEstimate> {
    SandFilter::new(img, dets, class_id, mesh, cam, cfg)?.run()
}
