//! Retrospective rigid-motion artifact simulation: k-space rows are
//! composited from differently posed copies of a clean image, so a pose
//! change during acquisition corrupts the whole reconstruction. Also home
//! of the synthetic brain-like phantom generator used at desk scale.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::numerics::{fft2, ifft2, ComplexImage, ImageTensor, Rng};
use crate::preprocess::{apply_rigid, RigidParams2D};

/// Per-acquisition-segment rigid pose sequence.
#[derive(Debug, Clone)]
pub struct MotionTrajectory {
    /// (acquisition-order line range, pose). Ranges partition [0, H).
    pub segments: Vec<(Range<usize>, RigidParams2D)>,
    /// Worst-case pose magnitude: max of |tx|, |ty| in pixels and |theta|
    /// in degrees over all segments.
    pub severity: f64,
}

impl MotionTrajectory {
    pub fn new(segments: Vec<(Range<usize>, RigidParams2D)>) -> Result<Self> {
        let severity = segments
            .iter()
            .map(|(_, p)| p.tx.abs().max(p.ty.abs()).max(p.theta.to_degrees().abs()))
            .fold(0.0, f64::max);
        let traj = Self { segments, severity };
        Ok(traj)
    }

    /// Single identity segment covering all lines.
    pub fn still(lines: usize) -> Self {
        Self { segments: vec![(0..lines, RigidParams2D::IDENTITY)], severity: 0.0 }
    }

    fn validate(&self, lines: usize) -> Result<()> {
        let mut covered = vec![false; lines];
        for (range, pose) in &self.segments {
            if !(pose.tx.is_finite() && pose.ty.is_finite() && pose.theta.is_finite()) {
                return Err(Error::InvalidArgument("non-finite pose".into()));
            }
            if range.end > lines {
                return Err(Error::InvalidArgument(format!(
                    "segment {range:?} exceeds {lines} lines"
                )));
            }
            for line in range.clone() {
                if covered[line] {
                    return Err(Error::InvalidArgument(format!(
                        "segments overlap at line {line}"
                    )));
                }
                covered[line] = true;
            }
        }
        if let Some(gap) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidArgument(format!(
                "segments do not cover line {gap}"
            )));
        }
        Ok(())
    }
}

/// How acquisition time maps onto k-space rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderKind {
    /// Row 0 first, row H-1 last.
    Linear,
    /// Center rows first, edges last.
    Centric,
}

#[derive(Debug, Clone)]
pub struct AcquisitionOrder {
    pub kind: OrderKind,
    /// permutation[acquisition_time] = k-space row index.
    pub permutation: Vec<usize>,
}

impl AcquisitionOrder {
    pub fn new(kind: OrderKind, lines: usize) -> Self {
        let permutation = match kind {
            OrderKind::Linear => (0..lines).collect(),
            OrderKind::Centric => {
                let mut rows = Vec::with_capacity(lines);
                let center = lines / 2;
                rows.push(center);
                for step in 1..lines {
                    if center >= step {
                        rows.push(center - step);
                    }
                    if center + step < lines {
                        rows.push(center + step);
                    }
                    if rows.len() == lines {
                        break;
                    }
                }
                rows
            }
        };
        Self { kind, permutation }
    }
}

/// Brain-like test phantom: skull ring, soft-tissue interior, 3-8 internal
/// structures at distinct intensities, light smooth noise inside the head.
/// Background is exactly zero; values lie in [0,1].
pub fn phantom(rng: &mut Rng, height: usize, width: usize) -> Result<ImageTensor> {
    if height < 32 || width < 32 {
        return Err(Error::InvalidArgument(format!(
            "size < 32: phantom needs at least 32x32, got {height}x{width}"
        )));
    }
    let (h, w) = (height as f64, width as f64);
    let cy = h / 2.0 + rng.uniform(-0.02, 0.02) * h;
    let cx = w / 2.0 + rng.uniform(-0.02, 0.02) * w;
    let skull_ry = rng.uniform(0.38, 0.44) * h;
    let skull_rx = rng.uniform(0.34, 0.42) * w;
    let ring = rng.uniform(0.06, 0.10);
    let skull_intensity = rng.uniform(0.85, 0.95);
    let tissue_intensity = rng.uniform(0.35, 0.55);

    let mut img = ImageTensor::zeros(&[height, width]);

    // Skull ring and interior fill.
    for i in 0..height {
        for j in 0..width {
            let dy = (i as f64 - cy) / skull_ry;
            let dx = (j as f64 - cx) / skull_rx;
            let r = (dy * dy + dx * dx).sqrt();
            if r <= 1.0 && r >= 1.0 - ring {
                img.set2(i, j, skull_intensity);
            } else if r < 1.0 - ring {
                img.set2(i, j, tissue_intensity);
            }
        }
    }

    // Internal structures: filled ellipses and thin elliptical ribbons.
    let n_structs = 3 + rng.uniform_usize(6);
    for _ in 0..n_structs {
        let sy = cy + rng.uniform(-0.22, 0.22) * h;
        let sx = cx + rng.uniform(-0.22, 0.22) * w;
        let ry = rng.uniform(0.04, 0.16) * h;
        let rx = rng.uniform(0.04, 0.16) * w;
        let angle = rng.uniform(0.0, std::f64::consts::PI);
        let intensity = rng.uniform(0.10, 0.95);
        let ribbon = rng.next_f64() < 0.35;
        let band = rng.uniform(0.15, 0.35);
        let (sa, ca) = angle.sin_cos();
        for i in 0..height {
            for j in 0..width {
                // Only draw inside the soft tissue.
                let hy = (i as f64 - cy) / skull_ry;
                let hx = (j as f64 - cx) / skull_rx;
                if hy * hy + hx * hx >= (1.0 - ring) * (1.0 - ring) {
                    continue;
                }
                let dy = i as f64 - sy;
                let dx = j as f64 - sx;
                let u = (ca * dx + sa * dy) / rx;
                let v = (-sa * dx + ca * dy) / ry;
                let r = (u * u + v * v).sqrt();
                let hit = if ribbon { r <= 1.0 && r >= 1.0 - band } else { r <= 1.0 };
                if hit {
                    img.set2(i, j, intensity);
                }
            }
        }
    }

    // Light smooth noise inside the head only; background stays exact zero.
    let mut waves = Vec::new();
    for _ in 0..3 {
        waves.push((
            rng.uniform(0.5, 3.5) / h,
            rng.uniform(0.5, 3.5) / w,
            rng.uniform(0.0, std::f64::consts::TAU),
            rng.uniform(0.008, 0.02),
        ));
    }
    for i in 0..height {
        for j in 0..width {
            if img.at2(i, j) == 0.0 {
                continue;
            }
            let mut n = 0.0;
            for &(fy, fx, phase, amp) in &waves {
                n += amp
                    * (std::f64::consts::TAU * (fy * i as f64 + fx * j as f64) + phase).cos();
            }
            let v = (img.at2(i, j) + n).clamp(0.005, 1.0);
            img.set2(i, j, v);
        }
    }

    // One binomial blur pass softens structure edges toward MR-like
    // falloff. Masked to the head so the background stays exactly zero.
    let kernel = [1.0, 2.0, 1.0];
    let mut blurred = ImageTensor::zeros(&[height, width]);
    for i in 0..height {
        for j in 0..width {
            if img.at2(i, j) == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for (di, ky) in kernel.iter().enumerate() {
                for (dj, kx) in kernel.iter().enumerate() {
                    let y = (i + di).wrapping_sub(1);
                    let x = (j + dj).wrapping_sub(1);
                    if y < height && x < width {
                        acc += ky * kx * img.at2(y, x);
                    }
                }
            }
            blurred.set2(i, j, acc / 16.0);
        }
    }
    Ok(blurred)
}

/// Composite k-space from per-segment posed copies of `clean` and
/// reconstruct. Output is clipped to [0,1].
pub fn simulate_motion(
    clean: &ImageTensor,
    traj: &MotionTrajectory,
    order: &AcquisitionOrder,
) -> Result<ImageTensor> {
    let (h, w) = clean.hw()?;
    traj.validate(h)?;
    if order.permutation.len() != h {
        return Err(Error::InvalidArgument(format!(
            "acquisition order covers {} lines, image has {h}",
            order.permutation.len()
        )));
    }
    let mut composite = ComplexImage::zeros(h, w);
    for (range, pose) in &traj.segments {
        let spectrum = if *pose == RigidParams2D::IDENTITY {
            fft2(clean)?
        } else {
            fft2(&apply_rigid(clean, pose))?
        };
        for acq in range.clone() {
            let row = order.permutation[acq];
            composite.row_mut(row).copy_from_slice(spectrum.row(row));
        }
    }
    let (img, _residual) = ifft2(&composite)?;
    Ok(img.clip(0.0, 1.0))
}

/// 1-4 motion events at random acquisition times. The subject starts still;
/// each event switches to a pose drawn uniformly within +/-severity pixels
/// of translation and +/-severity degrees of rotation.
pub fn random_trajectory(rng: &mut Rng, lines: usize, severity: f64) -> Result<MotionTrajectory> {
    if severity < 0.0 {
        return Err(Error::InvalidArgument("severity must be >= 0".into()));
    }
    let n_events = 1 + rng.uniform_usize(4);
    let mut times = Vec::new();
    while times.len() < n_events.min(lines - 1) {
        let t = 1 + rng.uniform_usize(lines - 1);
        if !times.contains(&t) {
            times.push(t);
        }
    }
    times.sort_unstable();

    let mut segments = Vec::new();
    let mut start = 0usize;
    let mut pose = RigidParams2D::IDENTITY;
    for &t in &times {
        segments.push((start..t, pose));
        pose = RigidParams2D::new(
            rng.uniform(-severity, severity),
            rng.uniform(-severity, severity),
            rng.uniform(-severity, severity).to_radians(),
        );
        start = t;
    }
    segments.push((start..lines, pose));
    MotionTrajectory::new(segments)
}
