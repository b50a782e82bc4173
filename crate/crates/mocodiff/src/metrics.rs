//! SSIM, NMSE, PSNR and their aggregation into mean ± std tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ImageTensor;

/// One scored image with its identity fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub patient: String,
    pub plane: String,
    pub slice: usize,
    pub method: String,
    pub ssim: f64,
    pub nmse: f64,
    /// PSNR in dB; `f64::INFINITY` flags zero MSE.
    pub psnr: f64,
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Dynamic range of normalized images.
const DYNAMIC_RANGE: f64 = 1.0;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean local SSIM over every position where the full 11x11 window fits,
/// Gaussian-weighted (sigma 1.5), K1=0.01, K2=0.03, L=1.
pub fn ssim(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    let (h, w) = x.hw()?;
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);

    // Separable weighted moments: blur rows then columns of the five maps.
    let maps = [
        x.data().to_vec(),
        y.data().to_vec(),
        x.data().iter().map(|v| v * v).collect(),
        y.data().iter().map(|v| v * v).collect(),
        x.data().iter().zip(y.data()).map(|(a, b)| a * b).collect(),
    ];
    let valid_h = h - SSIM_WINDOW + 1;
    let valid_w = w - SSIM_WINDOW + 1;
    let blurred: Vec<Vec<f64>> = maps
        .iter()
        .map(|m| {
            // Horizontal pass: rows stay full height, columns shrink to valid.
            let mut hpass = vec![0.0; h * valid_w];
            for i in 0..h {
                for j in 0..valid_w {
                    let mut acc = 0.0;
                    for (k, wk) in win.iter().enumerate() {
                        acc += wk * m[i * w + j + k];
                    }
                    hpass[i * valid_w + j] = acc;
                }
            }
            let mut vpass = vec![0.0; valid_h * valid_w];
            for i in 0..valid_h {
                for j in 0..valid_w {
                    let mut acc = 0.0;
                    for (k, wk) in win.iter().enumerate() {
                        acc += wk * hpass[(i + k) * valid_w + j];
                    }
                    vpass[i * valid_w + j] = acc;
                }
            }
            vpass
        })
        .collect();

    let (mu_x, mu_y, xx, yy, xy) =
        (&blurred[0], &blurred[1], &blurred[2], &blurred[3], &blurred[4]);
    let mut total = 0.0;
    for i in 0..valid_h * valid_w {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = xx[i] - mx * mx;
        let var_y = yy[i] - my * my;
        let cov = xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        total += num / den;
    }
    Ok(total / (valid_h * valid_w) as f64)
}

/// ||xhat - x||^2 / ||x||^2.
pub fn nmse(xhat: &ImageTensor, x: &ImageTensor) -> Result<f64> {
    if xhat.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", xhat.shape(), x.shape())));
    }
    let ref_energy = x.sum_sq();
    if ref_energy == 0.0 {
        return Err(Error::InvalidArgument("zero reference".into()));
    }
    let err: f64 = xhat
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(err / ref_energy)
}

/// 10 log10(L^2 / MSE) with L = 1; infinite when MSE is zero.
pub fn psnr(xhat: &ImageTensor, x: &ImageTensor) -> Result<f64> {
    if xhat.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", xhat.shape(), x.shape())));
    }
    let mse: f64 = xhat
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / mse).log10())
}

/// One aggregated table row.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub method: String,
    pub plane: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// "mean ± std" at table precision (3 decimals; 1 for PSNR).
    pub formatted: String,
}

pub fn format_mean_std(metric: &str, mean: f64, std: f64) -> String {
    let decimals = if metric == "psnr" { 1 } else { 3 };
    if mean.is_infinite() {
        return format!("inf ± {:.*}", decimals, std);
    }
    format!("{:.*} ± {:.*}", decimals, mean, decimals, std)
}

fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean.is_infinite() {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Group records by (method, plane) and emit mean ± population-std rows for
/// each of ssim, nmse, psnr. Row order follows first appearance.
pub fn aggregate(records: &[MetricsRecord]) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("empty group".into()));
    }
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        let key = (r.method.clone(), r.plane.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut rows = Vec::new();
    for (method, plane) in keys {
        let group: Vec<&MetricsRecord> = records
            .iter()
            .filter(|r| r.method == method && r.plane == plane)
            .collect();
        for (metric, values) in [
            ("ssim", group.iter().map(|r| r.ssim).collect::<Vec<_>>()),
            ("nmse", group.iter().map(|r| r.nmse).collect::<Vec<_>>()),
            ("psnr", group.iter().map(|r| r.psnr).collect::<Vec<_>>()),
        ] {
            let (mean, std) = mean_and_population_std(&values);
            rows.push(AggregateRow {
                method: method.clone(),
                plane: plane.clone(),
                metric: metric.to_string(),
                mean,
                std,
                formatted: format_mean_std(metric, mean, std),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian, Rng};

    /// Direct per-window SSIM, the independent oracle for the separable path.
    fn ssim_direct(x: &ImageTensor, y: &ImageTensor) -> f64 {
        let (h, w) = x.hw().unwrap();
        let win = gaussian_window();
        let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
        let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
        let mut total = 0.0;
        let mut count = 0usize;
        for i0 in 0..=(h - SSIM_WINDOW) {
            for j0 in 0..=(w - SSIM_WINDOW) {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for di in 0..SSIM_WINDOW {
                    for dj in 0..SSIM_WINDOW {
                        let wgt = win[di] * win[dj];
                        let a = x.at2(i0 + di, j0 + dj);
                        let b = y.at2(i0 + di, j0 + dj);
                        mx += wgt * a;
                        my += wgt * b;
                        xx += wgt * a * a;
                        yy += wgt * b * b;
                        xy += wgt * a * b;
                    }
                }
                let var_x = xx - mx * mx;
                let var_y = yy - my * my;
                let cov = xy - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_identity_is_one() {
        let mut rng = Rng::new(5);
        let x = gaussian(&mut rng, &[16, 16]).unwrap().map(|v| 0.5 + 0.1 * v);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images_analytic() {
        let x = ImageTensor::filled(&[16, 16], 0.5);
        let y = ImageTensor::filled(&[16, 16], 0.25);
        let expected = (2.0 * 0.125 + 1e-4) / (0.3125 + 1e-4);
        assert!((ssim(&x, &y).unwrap() - expected).abs() < 1e-12);
        // Spot value from the closed form.
        assert!((expected - 0.8001).abs() < 1e-4);
    }

    #[test]
    fn ssim_matches_direct_oracle() {
        let mut rng = Rng::new(17);
        let x = gaussian(&mut rng, &[24, 20]).unwrap().map(|v| 0.5 + 0.15 * v);
        let noise = gaussian(&mut rng, &[24, 20]).unwrap();
        let y = x.add_scaled(&noise, 0.1).unwrap();
        let fast = ssim(&x, &y).unwrap();
        let slow = ssim_direct(&x, &y);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = Rng::new(23);
        let x = gaussian(&mut rng, &[16, 16]).unwrap().map(|v| 0.5 + 0.2 * v);
        let y = gaussian(&mut rng, &[16, 16]).unwrap().map(|v| 0.5 + 0.2 * v);
        assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_mismatched_shapes() {
        let x = ImageTensor::zeros(&[16, 16]);
        let y = ImageTensor::zeros(&[16, 12]);
        assert!(ssim(&x, &y).is_err());
    }

    #[test]
    fn nmse_cases() {
        let mut rng = Rng::new(2);
        let x = gaussian(&mut rng, &[8, 8]).unwrap().map(|v| 0.5 + 0.1 * v);
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        let scaled = x.scale(1.1);
        assert!((nmse(&scaled, &x).unwrap() - 0.01).abs() < 1e-12);
        let zero = ImageTensor::zeros(&[8, 8]);
        assert!((nmse(&zero, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmse(&x, &zero).is_err());
    }

    #[test]
    fn psnr_cases() {
        let x = ImageTensor::zeros(&[10, 10]);
        let y = ImageTensor::filled(&[10, 10], 0.1); // MSE = 0.01
        assert!((psnr(&y, &x).unwrap() - 20.0).abs() < 1e-12);
        assert!(psnr(&x, &x).unwrap().is_infinite());
        // Halving MSE adds 10 log10 2 dB.
        let y2 = ImageTensor::filled(&[10, 10], 0.1 / 2f64.sqrt());
        let gain = psnr(&y2, &x).unwrap() - psnr(&y, &x).unwrap();
        assert!((gain - 10.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn psnr_nmse_consistency() {
        let mut rng = Rng::new(6);
        let x = gaussian(&mut rng, &[12, 12]).unwrap().map(|v| 0.6 + 0.1 * v);
        let noise = gaussian(&mut rng, &[12, 12]).unwrap();
        let xhat = x.add_scaled(&noise, 0.05).unwrap();
        let mse_from_nmse = nmse(&xhat, &x).unwrap() * x.sum_sq() / x.len() as f64;
        let mse_from_psnr = 10f64.powf(-psnr(&xhat, &x).unwrap() / 10.0);
        assert!((mse_from_nmse - mse_from_psnr).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_direct_definitions_on_random_pairs() {
        let mut rng = Rng::new(99);
        for _ in 0..20 {
            let x = gaussian(&mut rng, &[16, 16]).unwrap().map(|v| 0.5 + 0.2 * v);
            let noise = gaussian(&mut rng, &[16, 16]).unwrap();
            let y = x.add_scaled(&noise, 0.08).unwrap();
            // Direct definitions, written out independently.
            let se: f64 =
                x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            let direct_nmse = se / x.data().iter().map(|v| v * v).sum::<f64>();
            let direct_psnr = 10.0 * (1.0 / (se / 256.0)).log10();
            assert!((nmse(&y, &x).unwrap() - direct_nmse).abs() < 1e-9);
            assert!((psnr(&y, &x).unwrap() - direct_psnr).abs() < 1e-9);
            assert!((ssim(&x, &y).unwrap() - ssim_direct(&x, &y)).abs() < 1e-6);
        }
    }

    fn record(method: &str, v: f64) -> MetricsRecord {
        MetricsRecord {
            patient: "p".into(),
            plane: "transverse".into(),
            slice: 0,
            method: method.into(),
            ssim: v,
            nmse: v,
            psnr: v,
        }
    }

    #[test]
    fn aggregate_single_record_has_zero_std() {
        let rows = aggregate(&[record("m", 0.5)]).unwrap();
        assert!(rows.iter().all(|r| r.std == 0.0));
    }

    #[test]
    fn aggregate_population_std() {
        let recs: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&v| record("m", v)).collect();
        let rows = aggregate(&recs).unwrap();
        let ssim_row = rows.iter().find(|r| r.metric == "ssim").unwrap();
        assert_eq!(ssim_row.formatted, "2.000 ± 0.816");
        let psnr_row = rows.iter().find(|r| r.metric == "psnr").unwrap();
        assert_eq!(psnr_row.formatted, "2.0 ± 0.8");
    }

    #[test]
    fn formatting_matches_table_style() {
        assert_eq!(format_mean_std("ssim", 0.858, 0.079), "0.858 ± 0.079");
        assert_eq!(format_mean_std("psnr", 22.94, 2.71), "22.9 ± 2.7");
    }

    #[test]
    fn aggregate_rejects_empty() {
        assert!(aggregate(&[]).is_err());
    }
}
