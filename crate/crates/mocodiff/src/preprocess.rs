//! Volume normalization, 2D rigid registration, and anatomical-plane
//! slice extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ImageTensor;

/// 2D rigid transform: translation in pixels, rotation in radians about the
/// image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidParams2D {
    pub tx: f64,
    pub ty: f64,
    pub theta: f64,
}

impl RigidParams2D {
    pub const IDENTITY: Self = Self { tx: 0.0, ty: 0.0, theta: 0.0 };

    pub fn new(tx: f64, ty: f64, theta: f64) -> Self {
        Self { tx, ty, theta }
    }

    /// Parameters of the inverse transform: rotate by -theta, translate by
    /// the back-rotated negated offset.
    pub fn inverse(&self) -> Self {
        let (s, c) = (-self.theta).sin_cos();
        Self {
            tx: -(c * self.tx - s * self.ty),
            ty: -(s * self.tx + c * self.ty),
            theta: -self.theta,
        }
    }
}

/// Anatomical plane of a slice through an [X,Y,Z] volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Sagittal,
    Coronal,
    Transverse,
}

impl Plane {
    pub fn as_str(&self) -> &'static str {
        match self {
            Plane::Sagittal => "sagittal",
            Plane::Coronal => "coronal",
            Plane::Transverse => "transverse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sagittal" => Ok(Plane::Sagittal),
            "coronal" => Ok(Plane::Coronal),
            "transverse" => Ok(Plane::Transverse),
            other => Err(Error::InvalidArgument(format!("unknown plane {other:?}"))),
        }
    }
}

/// Nearest-rank percentile (rank p/100 * (N-1), rounded, on sorted data).
/// Returning an actual data value makes normalize idempotent: the pixel at
/// the 99th rank maps to exactly 1 and stays at that rank.
fn percentile(data: &[f64], p: f64) -> f64 {
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (p / 100.0 * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank]
}

/// Clip at the 99th percentile and scale to [0,1]. A constant volume maps
/// to all-zeros.
pub fn normalize(volume: &ImageTensor) -> ImageTensor {
    let lo = volume.min();
    let hi99 = percentile(volume.data(), 99.0);
    if hi99 <= lo || hi99 <= 0.0 {
        return ImageTensor::zeros(volume.shape());
    }
    volume.map(|v| (v.clamp(0.0, hi99)) / hi99)
}

/// Slice an [X,Y,Z] volume along one anatomical plane. Sagittal fixes x,
/// coronal fixes y, transverse fixes z (storage axes).
pub fn extract_plane(volume: &ImageTensor, plane: Plane, index: usize) -> Result<ImageTensor> {
    let shape = volume.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!("expected [X,Y,Z], got {shape:?}")));
    }
    let (nx, ny, nz) = (shape[0], shape[1], shape[2]);
    let (fixed_extent, h, w) = match plane {
        Plane::Sagittal => (nx, ny, nz),
        Plane::Coronal => (ny, nx, nz),
        Plane::Transverse => (nz, nx, ny),
    };
    if index >= fixed_extent {
        return Err(Error::InvalidArgument(format!(
            "{} index {index} out of range 0..{fixed_extent}",
            plane.as_str()
        )));
    }
    let mut data = Vec::with_capacity(h * w);
    match plane {
        Plane::Sagittal => {
            for y in 0..ny {
                for z in 0..nz {
                    data.push(volume.at3(index, y, z));
                }
            }
        }
        Plane::Coronal => {
            for x in 0..nx {
                for z in 0..nz {
                    data.push(volume.at3(x, index, z));
                }
            }
        }
        Plane::Transverse => {
            for x in 0..nx {
                for y in 0..ny {
                    data.push(volume.at3(x, y, index));
                }
            }
        }
    }
    ImageTensor::from_vec(vec![h, w], data)
}

/// Number of slices the volume yields in the given plane.
pub fn plane_extent(volume: &ImageTensor, plane: Plane) -> Result<usize> {
    let shape = volume.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!("expected [X,Y,Z], got {shape:?}")));
    }
    Ok(match plane {
        Plane::Sagittal => shape[0],
        Plane::Coronal => shape[1],
        Plane::Transverse => shape[2],
    })
}

/// Rigid-transform an image: rotate by theta about the geometric center,
/// then translate by (tx, ty). Bilinear interpolation, out-of-bounds zero.
pub fn apply_rigid(img: &ImageTensor, p: &RigidParams2D) -> ImageTensor {
    let (h, w) = match img.hw() {
        Ok(hw) => hw,
        Err(_) => return img.clone(),
    };
    if *p == RigidParams2D::IDENTITY {
        return img.clone();
    }
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = (-p.theta).sin_cos();
    let mut out = ImageTensor::zeros(&[h, w]);
    for i in 0..h {
        for j in 0..w {
            // Pull: source = R(-theta) * (dest - c - t) + c
            let dx = j as f64 - cx - p.tx;
            let dy = i as f64 - cy - p.ty;
            let sx = c * dx - s * dy + cx;
            let sy = s * dx + c * dy + cy;
            out.set2(i, j, bilinear(img, h, w, sy, sx));
        }
    }
    out
}

fn bilinear(img: &ImageTensor, h: usize, w: usize, y: f64, x: f64) -> f64 {
    if x < -1.0 || y < -1.0 || x > w as f64 || y > h as f64 {
        return 0.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let sample = |yi: f64, xi: f64| -> f64 {
        if yi < 0.0 || xi < 0.0 || yi >= h as f64 || xi >= w as f64 {
            0.0
        } else {
            img.at2(yi as usize, xi as usize)
        }
    };
    let v00 = sample(y0, x0);
    let v01 = sample(y0, x0 + 1.0);
    let v10 = sample(y0 + 1.0, x0);
    let v11 = sample(y0 + 1.0, x0 + 1.0);
    v00 * (1.0 - fy) * (1.0 - fx)
        + v01 * (1.0 - fy) * fx
        + v10 * fy * (1.0 - fx)
        + v11 * fy * fx
}

/// Zero-mean normalized cross-correlation over the whole frame.
pub fn ncc(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let ma = a.mean();
    let mb = b.mean();
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (u, v) = (x - ma, y - mb);
        num += u * v;
        da += u * u;
        db += v * v;
    }
    if da == 0.0 || db == 0.0 {
        return Err(Error::NoContrast);
    }
    Ok(num / (da * db).sqrt())
}

const GRID_TRANSLATION: i32 = 10;
const GRID_ROTATION_DEG: i32 = 5;
const REFINE_ROUNDS: usize = 2;

/// Best rigid alignment of `moving` onto `fixed` by NCC: integer grid search
/// over +/-10 px and +/-5 deg, then two rounds of golden-section refinement
/// per axis. The identity is always a candidate, so the result never scores
/// below the unregistered start.
pub fn register_rigid(moving: &ImageTensor, fixed: &ImageTensor) -> Result<RigidParams2D> {
    if moving.shape() != fixed.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            moving.shape(),
            fixed.shape()
        )));
    }
    // Degenerate inputs cannot be scored at all.
    ncc(moving, fixed)?;

    let score = |p: &RigidParams2D| -> f64 {
        ncc(&apply_rigid(moving, p), fixed).unwrap_or(f64::NEG_INFINITY)
    };

    let mut best = RigidParams2D::IDENTITY;
    let mut best_score = score(&best);
    for dtheta in -GRID_ROTATION_DEG..=GRID_ROTATION_DEG {
        let theta = (dtheta as f64).to_radians();
        for tx in -GRID_TRANSLATION..=GRID_TRANSLATION {
            for ty in -GRID_TRANSLATION..=GRID_TRANSLATION {
                let p = RigidParams2D::new(tx as f64, ty as f64, theta);
                let s = score(&p);
                if s > best_score {
                    best_score = s;
                    best = p;
                }
            }
        }
    }

    for _ in 0..REFINE_ROUNDS {
        for axis in 0..3 {
            let radius = if axis == 2 { 1f64.to_radians() } else { 1.0 };
            let eval = |v: f64| {
                let mut p = best;
                match axis {
                    0 => p.tx = v,
                    1 => p.ty = v,
                    _ => p.theta = v,
                }
                (p, score(&p))
            };
            let center = match axis {
                0 => best.tx,
                1 => best.ty,
                _ => best.theta,
            };
            let (p, s) = golden_section_max(center - radius, center + radius, |v| eval(v).1);
            if s > best_score {
                best_score = s;
                best = eval(p).0;
            }
        }
    }
    Ok(best)
}

/// Golden-section search for the maximum of f on [a, b].
fn golden_section_max(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..16 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    (mid, f(mid))
}
