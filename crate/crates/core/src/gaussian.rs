//! Closed-form equilibrium when the physical distribution of ṽ is normal.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Calibration inputs: physical mean and covariance, noise covariance rate,
/// risk aversion, dealer endowment and horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianInputs {
    pub m_hat: Vec<f64>,
    pub s_hat: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub horizon: f64,
}

impl GaussianInputs {
    /// One asset with physical variance `s_hat`, noise variance rate `sigma2`.
    pub fn univariate(m_hat: f64, s_hat: f64, sigma2: f64, alpha: f64, beta: f64, horizon: f64) -> Self {
        Self {
            m_hat: vec![m_hat],
            s_hat: vec![vec![s_hat]],
            sigma: vec![vec![sigma2]],
            alpha,
            beta: vec![beta],
            horizon,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GaussianEquilibrium {
    m_hat: DVector<f64>,
    s_hat: Matrix,
    sigma: Matrix,
    alpha: f64,
    beta: DVector<f64>,
    horizon: f64,
    m: DVector<f64>,
    /// Rows are eigenvectors: TΣ^{1/2}ŜΣ^{1/2} = V'D̂V.
    v: Matrix,
    d_hat: DVector<f64>,
    sqrt_d: DVector<f64>,
    sigma_half: Matrix,
    sigma_inv_half: Matrix,
    s: Matrix,
    lambda: Matrix,
    lambda_inv: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfitReport {
    /// Informed profit conditional on the supplied value, when one was given.
    pub informed_conditional: Option<f64>,
    pub informed_unconditional: f64,
    pub noise_loss: f64,
    pub mm_expected_wealth: f64,
}

/// √d from d̂ in the form that adds positive terms.
fn sqrt_d(alpha: f64, d_hat: f64) -> f64 {
    0.5 * alpha * d_hat + (0.25 * alpha * alpha * d_hat * d_hat + d_hat).sqrt()
}

pub fn calibrate(inputs: &GaussianInputs) -> Result<GaussianEquilibrium> {
    let n = inputs.m_hat.len();
    let s_hat = linalg::matrix_from_rows(&inputs.s_hat)?;
    let sigma = linalg::matrix_from_rows(&inputs.sigma)?;
    if s_hat.nrows() != n || sigma.nrows() != n || inputs.beta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s_hat.nrows().max(sigma.nrows()).max(inputs.beta.len()),
        });
    }
    if !(inputs.alpha >= 0.0) || !inputs.alpha.is_finite() {
        return Err(Error::invalid(format!("risk aversion must be ≥ 0, got {}", inputs.alpha)));
    }
    if !(inputs.horizon > 0.0) {
        return Err(Error::invalid(format!("horizon must be positive, got {}", inputs.horizon)));
    }
    linalg::spd_eigen(&s_hat, "physical covariance Ŝ")?;
    let sigma_half = linalg::spd_sqrt(&sigma, "noise covariance Σ")?;
    let sigma_inv_half = linalg::spd_inv_sqrt(&sigma, "noise covariance Σ")?;
    let t = inputs.horizon;
    let alpha = inputs.alpha;
    let core = &sigma_half * &s_hat * &sigma_half * t;
    let eig = linalg::spd_eigen(&core, "TΣ^{1/2}ŜΣ^{1/2}")?;
    let v = eig.eigenvectors.transpose();
    let d_hat = eig.eigenvalues.clone();
    let sq = d_hat.map(|x| sqrt_d(alpha, x));
    let conj = |diag: &DVector<f64>| {
        let inner = v.transpose() * Matrix::from_diagonal(diag) * &v;
        let m = &sigma_inv_half * inner * &sigma_inv_half / t;
        (&m + m.transpose()) * 0.5
    };
    let s = conj(&sq.map(|x| x * x));
    let lambda = conj(&sq);
    let lambda_inv = linalg::spd_inverse(&lambda, "Λ")?;
    let m_hat = DVector::from_vec(inputs.m_hat.clone());
    let beta = DVector::from_vec(inputs.beta.clone());
    let m = &m_hat - &s_hat * &beta * alpha;
    Ok(GaussianEquilibrium {
        m_hat,
        s_hat,
        sigma,
        alpha,
        beta,
        horizon: t,
        m,
        v,
        d_hat,
        sqrt_d: sq,
        sigma_half,
        sigma_inv_half,
        s,
        lambda,
        lambda_inv,
    })
}

fn sym(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

impl GaussianEquilibrium {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn m_hat(&self) -> &DVector<f64> {
        &self.m_hat
    }

    pub fn s_hat(&self) -> &Matrix {
        &self.s_hat
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    /// Risk-neutral mean m = m̂ − αŜβ.
    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn v_matrix(&self) -> &Matrix {
        &self.v
    }

    pub fn d_hat(&self) -> &DVector<f64> {
        &self.d_hat
    }

    pub fn d(&self) -> DVector<f64> {
        self.sqrt_d.map(|x| x * x)
    }

    pub fn sqrt_d(&self) -> &DVector<f64> {
        &self.sqrt_d
    }

    pub fn lambda_matrix(&self) -> &Matrix {
        &self.lambda
    }

    pub fn lambda_inverse(&self) -> &Matrix {
        &self.lambda_inv
    }

    /// Risk-neutral covariance S.
    pub fn s_matrix(&self) -> &Matrix {
        &self.s
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::invalid(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// d_it = αT√d_i / (T + (T−t)α√d_i).
    fn d_t(&self, t: f64) -> DVector<f64> {
        let (a, tt) = (self.alpha, self.horizon);
        self.sqrt_d.map(|s| a * tt * s / (tt + (tt - t) * a * s))
    }

    /// Mean-reversion matrix A_t = T⁻¹V'D_tV.
    pub fn a_matrix(&self, t: f64) -> Result<Matrix> {
        self.check_time(t)?;
        let dt = self.d_t(t);
        Ok(sym(self.v.transpose() * Matrix::from_diagonal(&dt) * &self.v / self.horizon))
    }

    /// C_t with αΣC_t = Σ^{1/2}A_tΣ^{−1/2}; finite as α → 0.
    pub fn c_matrix(&self, t: f64) -> Result<Matrix> {
        self.check_time(t)?;
        let (a, tt) = (self.alpha, self.horizon);
        let diag = self.sqrt_d.map(|s| s / (tt + (tt - t) * a * s));
        let inner = self.v.transpose() * Matrix::from_diagonal(&diag) * &self.v;
        Ok(sym(&self.sigma_inv_half * inner * &self.sigma_inv_half))
    }

    /// −Σ^{1/2}A_tΣ^{−1/2}(y − β).
    pub fn physical_drift(&self, t: f64, y: &[f64]) -> Result<DVector<f64>> {
        let a = self.a_matrix(t)?;
        let dev = DVector::from_column_slice(y) - &self.beta;
        Ok(-(&self.sigma_half * a * &self.sigma_inv_half) * dev)
    }

    /// Prices of risk ∇φ(t,y) = −αC_t(y − β).
    pub fn price_of_risk(&self, t: f64, y: &[f64]) -> Result<DVector<f64>> {
        let c = self.c_matrix(t)?;
        let dev = DVector::from_column_slice(y) - &self.beta;
        Ok(-(c * dev) * self.alpha)
    }

    /// Drift of P: −Σ^{−1/2}A_tΣ^{1/2}(P − m − Λβ).
    pub fn price_drift(&self, t: f64, p: &[f64]) -> Result<DVector<f64>> {
        let a = self.a_matrix(t)?;
        let dev = DVector::from_column_slice(p) - &self.m - &self.lambda * &self.beta;
        Ok(-(&self.sigma_inv_half * a * &self.sigma_half) * dev)
    }

    /// tr(TΣΛ).
    pub fn noise_loss(&self) -> f64 {
        (&self.sigma * &self.lambda).trace() * self.horizon
    }

    /// tr(ΣΛ), the bid-ask rate.
    pub fn bidask_rate(&self) -> f64 {
        (&self.sigma * &self.lambda).trace()
    }

    /// Γ(t,y) = ½y'Λy + m'y − ½tr(TΣΛ) + ½(T−t)tr(ΣΛ).
    pub fn gamma(&self, t: f64, y: &[f64]) -> f64 {
        let y = DVector::from_column_slice(y);
        0.5 * y.dot(&(&self.lambda * &y)) + self.m.dot(&y) - 0.5 * self.noise_loss()
            + 0.5 * (self.horizon - t) * self.bidask_rate()
    }

    /// H(y) = m + Λy.
    pub fn price(&self, y: &[f64]) -> DVector<f64> {
        &self.m + &self.lambda * DVector::from_column_slice(y)
    }

    /// Γ*(v) = ½(v − m)'Λ⁻¹(v − m) + ½tr(TΣΛ).
    pub fn conjugate(&self, v: &[f64]) -> f64 {
        let dev = DVector::from_column_slice(v) - &self.m;
        0.5 * dev.dot(&(&self.lambda_inv * &dev)) + 0.5 * self.noise_loss()
    }

    /// Bridge target ζ = Λ⁻¹(v − m).
    pub fn bridge_target(&self, v: &[f64]) -> DVector<f64> {
        &self.lambda_inv * (DVector::from_column_slice(v) - &self.m)
    }

    /// ψ(t,a) = αβ'∇Γ(a) − αΓ*(∇Γ(a)) + α(T−t)tr(ΣΛ); independent of z.
    pub fn psi(&self, t: f64, a: &[f64]) -> f64 {
        let grad = self.price(a);
        self.alpha * self.beta.dot(&grad) - self.alpha * self.conjugate(grad.as_slice())
            + self.alpha * (self.horizon - t) * self.bidask_rate()
    }

    pub fn profits(&self, v: Option<&[f64]>) -> ProfitReport {
        let tr_lambda = self.noise_loss();
        let tr_shat = (&self.sigma * &self.s_hat).trace() * self.horizon;
        let sb = &self.s_hat * &self.beta;
        let quad = sb.dot(&(&self.lambda_inv * &sb));
        let a = self.alpha;
        ProfitReport {
            informed_conditional: v.map(|v| self.conjugate(v)),
            informed_unconditional: tr_lambda - 0.5 * a * tr_shat + 0.5 * a * a * quad,
            noise_loss: tr_lambda,
            mm_expected_wealth: self.beta.dot(&self.m_hat) + 0.5 * a * tr_shat - 0.5 * a * a * quad,
        }
    }

    /// max |TΛΣΛ − S| / max |S|.
    pub fn identity_error(&self) -> f64 {
        let lhs = &self.lambda * &self.sigma * &self.lambda * self.horizon;
        (lhs - &self.s).amax() / self.s.amax()
    }

    /// max |V V' − I|.
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.dim();
        (&self.v * self.v.transpose() - Matrix::identity(n, n)).amax()
    }

    pub fn report(&self) -> EquilibriumReport {
        let rows = linalg::matrix_to_rows;
        let t = self.horizon;
        EquilibriumReport {
            alpha: self.alpha,
            horizon: t,
            m_hat: self.m_hat.iter().cloned().collect(),
            s_hat: rows(&self.s_hat),
            sigma: rows(&self.sigma),
            beta: self.beta.iter().cloned().collect(),
            m: self.m.iter().cloned().collect(),
            v: rows(&self.v),
            d_hat: self.d_hat.iter().cloned().collect(),
            d: self.d().iter().cloned().collect(),
            s: rows(&self.s),
            lambda: rows(&self.lambda),
            a_0: rows(&self.a_matrix(0.0).expect("0 is in range")),
            a_half: rows(&self.a_matrix(0.5 * t).expect("T/2 is in range")),
            a_t: rows(&self.a_matrix(t).expect("T is in range")),
            profits: self.profits(None),
            identity_error: self.identity_error(),
        }
    }
}

/// Serializable dump of a calibrated equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub alpha: f64,
    pub horizon: f64,
    pub m_hat: Vec<f64>,
    pub s_hat: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    pub d_hat: Vec<f64>,
    pub d: Vec<f64>,
    pub s: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub a_0: Vec<Vec<f64>>,
    pub a_half: Vec<Vec<f64>>,
    pub a_t: Vec<Vec<f64>>,
    pub profits: ProfitReport,
    pub identity_error: f64,
}
