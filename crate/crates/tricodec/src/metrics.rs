//! Image difference metrics: MSE, PSNR and SSIM. Used both inside the search
//! objective and for benchmark reporting.

use crate::model::Raster;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("image {0}x{1} smaller than the {2}x{2} SSIM window")]
    TooSmall(u32, u32, u32),
}

/// One scored encode: quality metrics plus the encoded size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub bytes: usize,
}

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn check_dims(a: &Raster, b: &Raster) -> Result<(), MetricsError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricsError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Mean squared error over all pixels and all three RGB channels.
pub fn mse(a: &Raster, b: &Raster) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let mut sum = 0u64;
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        for ch in 0..3 {
            let d = pa[ch] as i64 - pb[ch] as i64;
            sum += (d * d) as u64;
        }
    }
    Ok(sum as f64 / (a.pixels.len() as f64 * 3.0))
}

pub fn psnr(a: &Raster, b: &Raster) -> Result<f64, MetricsError> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP)
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// ITU-R BT.601 luma of an RGB raster.
pub fn luma(r: &Raster) -> Vec<f64> {
    r.pixels
        .iter()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// Mean SSIM over luma with the standard 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, L = 255, windows fully inside the image.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    if (a.width as usize) < SSIM_WINDOW || (a.height as usize) < SSIM_WINDOW {
        return Err(MetricsError::TooSmall(a.width, a.height, SSIM_WINDOW as u32));
    }
    let la = luma(a);
    let lb = luma(b);
    let w = a.width as usize;
    let h = a.height as usize;
    let kernel = gaussian_kernel();

    // separable Gaussian filtering of the five moment images
    let filt = |src: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; w * h];
        // horizontal pass, valid region only
        let vw = w - SSIM_WINDOW + 1;
        let vh = h - SSIM_WINDOW + 1;
        for y in 0..h {
            for x in 0..vw {
                let mut acc = 0.0;
                for (t, &k) in kernel.iter().enumerate() {
                    acc += k * src[y * w + x + t];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; vw * vh];
        for y in 0..vh {
            for x in 0..vw {
                let mut acc = 0.0;
                for (t, &k) in kernel.iter().enumerate() {
                    acc += k * tmp[(y + t) * w + x];
                }
                out[y * vw + x] = acc;
            }
        }
        out
    };

    let aa: Vec<f64> = la.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = lb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x * y).collect();
    let mu_a = filt(&la);
    let mu_b = filt(&lb);
    let m_aa = filt(&aa);
    let m_bb = filt(&bb);
    let m_ab = filt(&ab);

    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let ma = mu_a[i];
        let mb = mu_b[i];
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        total += s;
    }
    Ok(total / mu_a.len() as f64)
}

/// Full report for a reconstruction against its target.
pub fn report(target: &Raster, recon: &Raster, bytes: usize) -> Result<QualityReport, MetricsError> {
    let m = mse(target, recon)?;
    Ok(QualityReport {
        psnr: psnr_from_mse(m),
        ssim: ssim(target, recon)?,
        mse: m,
        bytes,
    })
}
