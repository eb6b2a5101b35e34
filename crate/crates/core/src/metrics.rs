//! Evaluation metrics: reconstruction MSE, the determinant of the Pearson
//! correlation matrix (DPC), and per-dimension Gaussianity statistics.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Column header of `metrics.csv`.
pub const CSV_HEADER: &str =
    "epoch,data_mse,jscc_mse,dpc,mean_skew_abs,mean_exkurt_abs,mean_ks,mean_norm,mean_power";

/// Mean of squared differences over all entries.
pub fn mse_metric(d: &Tensor, d_hat: &Tensor) -> Result<f64> {
    if d.shape() != d_hat.shape() {
        return Err(Error::Shape {
            op: "mse_metric",
            shapes: vec![d.shape().to_vec(), d_hat.shape().to_vec()],
        });
    }
    let s: f64 = d
        .data()
        .iter()
        .zip(d_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / d.len() as f64)
}

fn column_moments(col: &[f64]) -> (f64, f64) {
    let m = col.len() as f64;
    let mean = col.iter().sum::<f64>() / m;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    (mean, var)
}

/// Pearson correlation matrix of the columns of `latents`; `None` if some
/// column has zero variance.
pub fn pearson_matrix(latents: &Tensor) -> Option<Vec<Vec<f64>>> {
    let k = latents.cols();
    let m = latents.rows();
    let cols: Vec<Vec<f64>> = (0..k).map(|j| latents.column(j)).collect();
    let mut centered = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    for c in &cols {
        let (mean, _) = column_moments(c);
        let cc: Vec<f64> = c.iter().map(|v| v - mean).collect();
        let norm = cc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        centered.push(cc);
        norms.push(norm);
    }
    let mut r = vec![vec![0.0; k]; k];
    for a in 0..k {
        r[a][a] = 1.0;
        for b in a + 1..k {
            let dot: f64 = (0..m).map(|i| centered[a][i] * centered[b][i]).sum();
            let rho = (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0);
            r[a][b] = rho;
            r[b][a] = rho;
        }
    }
    Some(r)
}

/// Pivots below this count as zero: a correlation matrix has a unit
/// diagonal, so rounding noise on a singular matrix is of order 1e-16.
const SINGULAR_PIVOT: f64 = 1e-12;

/// Determinant of a symmetric positive semi-definite matrix by Cholesky;
/// a vanishing pivot means the matrix is singular and gives 0.
fn spd_determinant(a: &[Vec<f64>]) -> f64 {
    let k = a.len();
    let mut l = vec![vec![0.0; k]; k];
    let mut det = 1.0;
    for j in 0..k {
        let mut d = a[j][j];
        for p in 0..j {
            d -= l[j][p] * l[j][p];
        }
        if d <= SINGULAR_PIVOT {
            return 0.0;
        }
        let ljj = d.sqrt();
        l[j][j] = ljj;
        det *= d;
        for i in j + 1..k {
            let mut s = a[i][j];
            for p in 0..j {
                s -= l[i][p] * l[j][p];
            }
            l[i][j] = s / ljj;
        }
    }
    if det < 1e-300 {
        0.0
    } else {
        det.min(1.0)
    }
}

/// Determinant of the Pearson correlation matrix of the latent columns.
/// A zero-variance column gives 0.
pub fn pearson_dpc(latents: &Tensor) -> Result<f64> {
    if latents.rows() <= latents.cols() {
        return Err(Error::IllPosed(format!(
            "DPC needs more samples than dimensions, got {} x {}",
            latents.rows(),
            latents.cols()
        )));
    }
    Ok(pearson_matrix(latents).map_or(0.0, |r| spd_determinant(&r)))
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Shape statistics of one latent column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnStats {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Two-sided Kolmogorov–Smirnov distance of the standardized column
    /// from the standard normal CDF.
    pub ks: f64,
}

/// Per-column Gaussianity statistics; `None` marks a degenerate
/// (zero-variance) column.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianityReport {
    pub columns: Vec<Option<ColumnStats>>,
}

impl GaussianityReport {
    pub fn degenerate(&self) -> bool {
        self.columns.iter().any(Option::is_none)
    }

    fn mean_of(&self, f: impl Fn(&ColumnStats) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self.columns.iter().flatten().map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_abs_skewness(&self) -> Option<f64> {
        self.mean_of(|c| c.skewness.abs())
    }

    pub fn mean_abs_excess_kurtosis(&self) -> Option<f64> {
        self.mean_of(|c| c.excess_kurtosis.abs())
    }

    pub fn mean_ks(&self) -> Option<f64> {
        self.mean_of(|c| c.ks)
    }
}

pub fn column_stats(col: &[f64]) -> Option<ColumnStats> {
    let m = col.len() as f64;
    let (mean, var) = column_moments(col);
    if var <= 0.0 || !var.is_finite() {
        return None;
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = col.iter().map(|v| (v - mean) / sd).collect();
    let m3 = z.iter().map(|v| v.powi(3)).sum::<f64>() / m;
    let m4 = z.iter().map(|v| v.powi(4)).sum::<f64>() / m;
    z.sort_by(f64::total_cmp);
    let ks = z.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = std_normal_cdf(x);
        d.max((i + 1) as f64 / m - f).max(f - i as f64 / m)
    });
    Some(ColumnStats {
        skewness: m3,
        excess_kurtosis: m4 - 3.0,
        ks,
    })
}

pub fn gaussianity_report(latents: &Tensor) -> Result<GaussianityReport> {
    if latents.rows() < 100 {
        return Err(Error::IllPosed(format!(
            "Gaussianity statistics need at least 100 samples, got {}",
            latents.rows()
        )));
    }
    Ok(GaussianityReport {
        columns: (0..latents.cols()).map(|j| column_stats(&latents.column(j))).collect(),
    })
}

/// One evaluation record.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub epoch: usize,
    pub data_mse: f64,
    /// JSCC distortion against the latents; adversarial-jamming runs only.
    pub jscc_mse: Option<f64>,
    pub dpc: f64,
    pub gaussianity: GaussianityReport,
    /// Euclidean norm of the latent batch mean.
    pub mean_norm: f64,
    /// Average per-dimension latent variance.
    pub mean_power: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

impl MetricsReport {
    /// Latent-side statistics (everything except the two MSEs).
    pub fn from_latents(epoch: usize, data_mse: f64, jscc_mse: Option<f64>, latents: &Tensor) -> Result<Self> {
        let k = latents.cols();
        let mut norm_sq = 0.0;
        let mut power = 0.0;
        for j in 0..k {
            let (mean, var) = column_moments(&latents.column(j));
            norm_sq += mean * mean;
            power += var;
        }
        Ok(MetricsReport {
            epoch,
            data_mse,
            jscc_mse,
            dpc: pearson_dpc(latents)?,
            gaussianity: gaussianity_report(latents)?,
            mean_norm: norm_sq.sqrt(),
            mean_power: power / k as f64,
        })
    }

    /// Row matching [`CSV_HEADER`]; inapplicable fields are left empty.
    pub fn csv_row(&self) -> String {
        let g = &self.gaussianity;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.data_mse,
            fmt_opt(self.jscc_mse),
            self.dpc,
            fmt_opt(g.mean_abs_skewness()),
            fmt_opt(g.mean_abs_excess_kurtosis()),
            fmt_opt(g.mean_ks()),
            self.mean_norm,
            self.mean_power
        )
    }
}
