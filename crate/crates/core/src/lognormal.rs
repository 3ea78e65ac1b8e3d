//! Zero-rate Black–Scholes utilities and the closed-form single-asset model
//! with a (possibly winsorized) lognormal value.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn d1(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    ((s / k).ln() + 0.5 * sigma * sigma * tau) / (sigma * tau.sqrt())
}

/// Call price; intrinsic value when τ = 0.
pub fn bs_call(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 || sigma <= 0.0 {
        return (s - k).max(0.0);
    }
    let d1 = d1(s, k, sigma, tau);
    let d2 = d1 - sigma * tau.sqrt();
    s * norm_cdf(d1) - k * norm_cdf(d2)
}

pub fn bs_put(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    bs_call(s, k, sigma, tau) - s + k
}

/// ∂C/∂S; a unit step at the strike when τ = 0.
pub fn bs_delta(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 || sigma <= 0.0 {
        return if s > k { 1.0 } else { 0.0 };
    }
    norm_cdf(d1(s, k, sigma, tau))
}

/// ∂²C/∂S²; zero when τ = 0.
pub fn bs_gamma(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 || sigma <= 0.0 {
        return 0.0;
    }
    norm_pdf(d1(s, k, sigma, tau)) / (s * sigma * tau.sqrt())
}

const VOL_LO: f64 = 1e-6;
const VOL_HI: f64 = 5.0;

/// Black–Scholes volatility reproducing `price`, by bisection on [1e-6, 5].
pub fn implied_vol(price: f64, s: f64, k: f64, tau: f64) -> Result<f64> {
    if !(s > 0.0 && k > 0.0 && tau > 0.0) || !price.is_finite() {
        return Err(Error::invalid(format!(
            "implied vol needs positive spot, strike and maturity (S={s}, K={k}, τ={tau})"
        )));
    }
    let intrinsic = (s - k).max(0.0);
    if price < intrinsic {
        return Err(Error::ArbitrageBound {
            price,
            bound: "lower (intrinsic value)",
            value: intrinsic,
        });
    }
    if price >= s {
        return Err(Error::ArbitrageBound {
            price,
            bound: "upper (spot price)",
            value: s,
        });
    }
    let (mut lo, mut hi) = (VOL_LO, VOL_HI);
    if bs_call(s, k, lo, tau) >= price {
        return Ok(lo);
    }
    if bs_call(s, k, hi, tau) < price {
        return Err(Error::ArbitrageBound {
            price,
            bound: "upper (volatility 5)",
            value: bs_call(s, k, hi, tau),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let c = bs_call(s, k, mid, tau);
        if (c - price).abs() <= 1e-10 {
            return Ok(mid);
        }
        if c < price {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// ṽ = e^{m + σ_v x} with x standard normal, optionally capped at `v_star`;
/// noise trades have standard deviation σ_z per unit time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LognormalSpec {
    pub m: f64,
    pub sigma_v: f64,
    pub sigma_z: f64,
    pub horizon: f64,
    pub v_star: Option<f64>,
}

/// Γ(T,y), Γ(t,y), H(t,y) and ∂H/∂y at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LognormalFields {
    pub gamma_terminal: f64,
    pub gamma: f64,
    pub price: f64,
    pub lambda: f64,
}

impl LognormalSpec {
    /// Lognormal with the given mean and standard deviation of ṽ.
    pub fn from_moments(mean: f64, sd: f64, sigma_z: f64, horizon: f64, v_star: Option<f64>) -> Result<Self> {
        if !(mean > 0.0 && sd > 0.0) {
            return Err(Error::invalid("lognormal mean and standard deviation must be positive"));
        }
        let var = (1.0 + (sd / mean).powi(2)).ln();
        let spec = Self {
            m: mean.ln() - 0.5 * var,
            sigma_v: var.sqrt(),
            sigma_z,
            horizon,
            v_star,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_v > 0.0 && self.sigma_z > 0.0 && self.horizon > 0.0) || !self.m.is_finite() {
            return Err(Error::invalid("lognormal spec needs σ_v, σ_z, T > 0 and finite m"));
        }
        if let Some(v) = self.v_star {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("winsorization level must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// λ = σ_v / (√T σ_z).
    pub fn lambda(&self) -> f64 {
        self.sigma_v / (self.horizon.sqrt() * self.sigma_z)
    }

    /// Standard deviation of Z_T.
    pub fn noise_sd(&self) -> f64 {
        self.horizon.sqrt() * self.sigma_z
    }

    pub fn x_star(&self) -> Option<f64> {
        self.v_star.map(|v| (v.ln() - self.m) / self.sigma_v)
    }

    pub fn y_star(&self) -> Option<f64> {
        self.x_star().map(|x| self.noise_sd() * x)
    }

    /// Transport map ∇Γ(y) = e^{m + λ(y ∧ y*)}.
    pub fn map(&self, y: f64) -> f64 {
        let y = match self.y_star() {
            Some(ys) => y.min(ys),
            None => y,
        };
        (self.m + self.lambda() * y).exp()
    }

    /// Γ(t,y) without the normalizing constant.
    fn gamma_raw(&self, t: f64, y: f64) -> f64 {
        let lam = self.lambda();
        let tau = (self.horizon - t).max(0.0);
        let em = self.m.exp();
        match self.y_star() {
            None => em * (lam * y + tau * self.sigma_v * self.sigma_v / (2.0 * self.horizon)).exp() / lam,
            Some(ys) => {
                let cap = em * (lam * ys).exp();
                if tau == 0.0 {
                    return if y < ys {
                        em * (lam * y).exp() / lam
                    } else {
                        cap * (y - ys) + cap / lam
                    };
                }
                let st = self.forward(t, y);
                let k = (lam * ys).exp();
                let vol = self.sigma_v / self.horizon.sqrt();
                let s = self.sigma_z * tau.sqrt();
                let d = (y - ys) / s;
                em / lam * (st - bs_call(st, k, vol, tau)) + cap * ((y - ys) * norm_cdf(d) + s * norm_pdf(d))
            }
        }
    }

    /// S_t = e^{λy + (T−t)σ_v²/2T}.
    fn forward(&self, t: f64, y: f64) -> f64 {
        let tau = (self.horizon - t).max(0.0);
        (self.lambda() * y + tau * self.sigma_v * self.sigma_v / (2.0 * self.horizon)).exp()
    }

    /// Constant making E[Γ(Z_T)] = 0; E[Γ_raw(Z_T)] is Γ_raw(0, 0).
    pub fn normalization(&self) -> f64 {
        -self.gamma_raw(0.0, 0.0)
    }

    pub fn fields(&self, t: f64, y: f64) -> LognormalFields {
        let a = self.normalization();
        let lam = self.lambda();
        let tau = (self.horizon - t).max(0.0);
        let em = self.m.exp();
        let (price, lambda) = match self.y_star() {
            None => {
                let p = em * self.forward(t, y);
                (p, lam * p)
            }
            Some(ys) if tau == 0.0 => {
                if y < ys {
                    let p = em * (lam * y).exp();
                    (p, lam * p)
                } else {
                    (em * (lam * ys).exp(), 0.0)
                }
            }
            Some(ys) => {
                let st = self.forward(t, y);
                let k = (lam * ys).exp();
                let vol = self.sigma_v / self.horizon.sqrt();
                let s = self.sigma_z * tau.sqrt();
                let d = (y - ys) / s;
                let delta = bs_delta(st, k, vol, tau);
                let gamma = bs_gamma(st, k, vol, tau);
                let cap = em * k;
                (
                    em * st * (1.0 - delta) + cap * norm_cdf(d),
                    lam * em * st * (1.0 - delta) - lam * em * st * st * gamma + cap * norm_pdf(d) / s,
                )
            }
        };
        LognormalFields {
            gamma_terminal: self.gamma_raw(self.horizon, y) + a,
            gamma: self.gamma_raw(t, y) + a,
            price,
            lambda,
        }
    }
}

pub fn lognormal_fields(spec: &LognormalSpec, t: f64, y: f64) -> LognormalFields {
    spec.fields(t, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_the_money_call() {
        assert!((bs_call(100.0, 100.0, 0.2, 1.0) - 7.965567455405804).abs() < 1e-9);
    }

    #[test]
    fn put_call_parity() {
        let (s, k, v, t) = (93.0, 101.0, 0.35, 0.7);
        let c = bs_call(s, k, v, t);
        let p = bs_put(s, k, v, t);
        assert!((c - p - (s - k)).abs() < 1e-12);
    }

    #[test]
    fn expiry_conventions() {
        assert_eq!(bs_call(110.0, 100.0, 0.2, 0.0), 10.0);
        assert_eq!(bs_delta(110.0, 100.0, 0.2, 0.0), 1.0);
        assert_eq!(bs_delta(90.0, 100.0, 0.2, 0.0), 0.0);
        assert_eq!(bs_gamma(110.0, 100.0, 0.2, 0.0), 0.0);
    }

    #[test]
    fn implied_vol_bounds() {
        assert!(matches!(
            implied_vol(5.0, 110.0, 100.0, 1.0),
            Err(Error::ArbitrageBound { bound, .. }) if bound.starts_with("lower")
        ));
        assert!(matches!(
            implied_vol(110.0, 110.0, 100.0, 1.0),
            Err(Error::ArbitrageBound { bound, .. }) if bound.starts_with("upper")
        ));
    }

    #[test]
    fn plain_price_at_origin() {
        let sv: f64 = 0.3;
        let spec = LognormalSpec {
            m: 100f64.ln() - sv * sv / 2.0,
            sigma_v: sv,
            sigma_z: 1.0,
            horizon: 1.0,
            v_star: None,
        };
        let f = spec.fields(0.0, 0.0);
        assert!((f.price - 100.0).abs() < 1e-10);
        assert!(f.gamma.abs() < 1e-10);
    }
}
