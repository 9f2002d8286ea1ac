//! Small statistics helpers: sample moments and log-log slope fits.

use serde::{Deserialize, Serialize};

/// Sample mean and standard error of the mean, summed in slice order.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len();
    if m == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = xs.len();
    if m < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / m as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64
}

/// Least-squares line through (ln x, ln y).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope propagated from per-point standard errors of ln y.
    pub slope_se: f64,
}

/// Fits ln y = a + s ln x. `rel_se` holds se(y)/y per point (delta method);
/// pass zeros when the points carry no sampling error.
pub fn loglog_fit(xs: &[f64], ys: &[f64], rel_se: &[f64]) -> SlopeFit {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    // slope = Σ wᵢ ln yᵢ with wᵢ = (ln xᵢ − mean)/Sxx, so var = Σ wᵢ² se(ln yᵢ)².
    let slope_se = lx.iter().zip(rel_se).map(|(x, s)| ((x - mx) / sxx).powi(2) * s * s).sum::<f64>().sqrt();
    SlopeFit { slope, intercept: my - slope * mx, slope_se }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let xs = [0.5, 0.25, 0.125, 0.0625];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        let f = loglog_fit(&xs, &ys, &[0.0; 4]);
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert_eq!(f.slope_se, 0.0);
    }

    #[test]
    fn mean_se_of_constant() {
        assert_eq!(mean_se(&[2.0, 2.0, 2.0]), (2.0, 0.0));
    }
}
