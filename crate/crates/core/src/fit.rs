//! Least-squares line fits.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination. `1.0` when the data are exactly affine
    /// (including the constant case).
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares `y = slope * x + intercept`. Needs two distinct `x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Some(LinearFit {
        slope,
        intercept,
        r2,
        points: n,
    })
}

/// Fit `log y` against the index `n` for the entries of `ys` in `range`.
pub fn log_linear_fit(ys: &[f64], range: std::ops::Range<usize>) -> Option<LinearFit> {
    let xs: Vec<f64> = range.clone().map(|i| i as f64).collect();
    let ls: Vec<f64> = ys[range].iter().map(|y| y.ln()).collect();
    if ls.iter().any(|v| !v.is_finite()) {
        return None;
    }
    linear_fit(&xs, &ls)
}
