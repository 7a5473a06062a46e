"""Outcome-stage estimators for censored-outcome instrumental variables.

The observed outcome is y = max(y*, 0) for a latent linear index y*. A
probit-style recentering turns y into an unbiased-in-expectation proxy
y_tilde for the latent scale using only the censoring fraction and the
outcome variance; the policy coefficients are then recovered by linear GMM
of y_tilde on [p_hat, x] with a heteroskedasticity-robust sandwich. A
control-function fit (regress on [p, p - p_hat, x]) is provided as an
alternative second stage, and an asymptotic-normal posterior sampler covers
interval summaries.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, SeededRng, augment_instruments
from .errors import DataError, DegenerateDataError, SingularDesignError
from .network import DplsConfig, DplsModel, dpls_fit
from .statnum import std_normal_pdf, std_normal_quantile
from .linear import fit_ols

__all__ = [
    "TobitConstants",
    "TobitGmmFit",
    "ControlFunctionFit",
    "DplsIvFit",
    "PosteriorDraws",
    "estimate_tobit_constants",
    "identity_constants",
    "recenter_outcome",
    "gmm_beta",
    "sandwich_variance",
    "corrected_covariance",
    "control_function_fit",
    "dpls_iv_fit",
    "sample_posterior",
]

_PSI_EPS = 1e-6


@dataclass(frozen=True)
class TobitConstants:
    """Recentering constants: psi2 = sigma_star * phi_hat by construction."""

    psi1: float
    psi2: float
    sigma_star: float
    phi_hat: float
    c_k: float


def identity_constants() -> TobitConstants:
    """Constants for an uncensored outcome; recentering becomes the identity."""
    return TobitConstants(psi1=1.0, psi2=0.0, sigma_star=1.0, phi_hat=0.0, c_k=1.0)


def estimate_tobit_constants(y) -> TobitConstants:
    """Censoring fraction, implied normal density, and variance rescaling.

    psi1 is the positive fraction, clamped away from {0, 1} with a warning
    because the quantile transform diverges at the boundary. c_k rescales
    the raw outcome variance to the latent scale.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or len(y) < 2:
        raise DataError("y must be a vector with at least 2 entries")
    ss = float(np.sum((y - y.mean()) ** 2))
    if ss == 0.0:
        raise DegenerateDataError("outcome has zero variance")
    psi1 = float(np.mean(y > 0))
    if not (_PSI_EPS <= psi1 <= 1.0 - _PSI_EPS):
        warnings.warn(
            f"positive-outcome fraction {psi1} clamped to [{_PSI_EPS}, {1 - _PSI_EPS}]",
            stacklevel=2,
        )
        psi1 = min(max(psi1, _PSI_EPS), 1.0 - _PSI_EPS)
    k = std_normal_quantile(psi1)
    phi = std_normal_pdf(k)
    c_k = psi1 - (phi - k * (1.0 - psi1)) * (phi + k * psi1)
    if c_k <= 0.0:
        raise DegenerateDataError(f"variance rescaling factor is not positive: {c_k}")
    sigma_star = float(np.sqrt(ss / (len(y) * c_k)))
    return TobitConstants(
        psi1=psi1,
        psi2=sigma_star * phi,
        sigma_star=sigma_star,
        phi_hat=phi,
        c_k=c_k,
    )


def recenter_outcome(y, constants: TobitConstants) -> np.ndarray:
    """y_tilde = (y - psi2) / psi1; affine, hence exactly invertible."""
    if constants.psi1 <= 0.0:
        raise DataError("psi1 must be positive")
    y = np.asarray(y, dtype=np.float64)
    return (y - constants.psi2) / constants.psi1


@dataclass(frozen=True)
class TobitGmmFit:
    """Second-stage fit; beta[0] is the policy effect, beta[1:] the x terms.

    sigma_star_matrix is the asymptotic covariance of sqrt(n)(beta_hat - beta)
    and corrected_matrix subtracts the recentering-induced psi1(1-psi1) bbT
    term (PSD-projected). Both are None until sandwich_variance runs.
    """

    beta: np.ndarray
    constants: TobitConstants
    design: np.ndarray
    y_tilde: np.ndarray
    residuals: np.ndarray
    sigma_star_matrix: np.ndarray | None = None
    corrected_matrix: np.ndarray | None = None
    weighting: str | None = None


def gmm_beta(
    p_hat,
    x,
    y_tilde,
    constants: TobitConstants | None = None,
    p_observed=None,
) -> TobitGmmFit:
    """Least-squares coefficients of y_tilde on the design [p_hat, x].

    When the observed treatment is supplied, stored residuals are taken
    against [p_observed, x]; those are the moment residuals the variance
    estimator needs (residuals against the projected treatment fold the
    first-stage error into the error variance and overstate it).
    """
    p_hat = np.asarray(p_hat, dtype=np.float64).ravel()
    y_tilde = np.asarray(y_tilde, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        x = np.empty((len(p_hat), 0))
    if x.ndim != 2 or x.shape[0] != len(p_hat) or len(y_tilde) != len(p_hat):
        raise DataError("p_hat, x, y_tilde must have matching row counts")
    design = np.column_stack([p_hat, x])
    ls = fit_ols(design, y_tilde)
    beta = ls.coef
    if p_observed is not None:
        p_observed = np.asarray(p_observed, dtype=np.float64).ravel()
        if len(p_observed) != len(p_hat):
            raise DataError("p_observed must align with p_hat")
        resid = y_tilde - np.column_stack([p_observed, x]) @ beta
    else:
        resid = y_tilde - design @ beta
    return TobitGmmFit(
        beta=beta,
        constants=constants if constants is not None else identity_constants(),
        design=design,
        y_tilde=y_tilde,
        residuals=resid,
    )


def _robust_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric PSD moment matrix, ridge-jittered if singular."""
    dim = a.shape[0]
    try:
        return np.linalg.inv(a)
    except np.linalg.LinAlgError:
        pass
    tr = float(np.trace(a))
    lam = 1e-8 * (tr / dim) if tr > 0 else 1e-8
    warnings.warn(f"singular moment matrix; adding ridge jitter {lam}", stacklevel=3)
    return np.linalg.inv(a + lam * np.eye(dim))


def sandwich_variance(fit: TobitGmmFit, zbar, weighting: str = "efficient") -> np.ndarray:
    """Heteroskedasticity-robust covariance of sqrt(n)(beta_hat - beta).

    Sigma* = n (PtZ G ZtP)^-1 PtZ G (nA) G ZtP (PtZ G ZtP)^-1 with the
    score-covariance matrix A = (1/n) sum e_i^2 zbar_i zbar_i'. The default
    weighting G = A^-1 collapses the sandwich to n^2 (PtZ A^-1 ZtP)^-1 and
    reduces to the classical robust OLS form when zbar equals the design.
    weighting="trace_ratio" instead builds G = H(H^-1 - ZtZ/tr(Z H Zt))H
    with H = A^-1; it is exposed for comparison but has no optimality
    property and can be indefinite, so it is labeled experimental.
    """
    zbar = np.asarray(zbar, dtype=np.float64)
    n, d = zbar.shape
    if fit.residuals.shape != (n,):
        raise DataError("zbar rows must match the fitted sample")
    if weighting not in ("efficient", "trace_ratio"):
        raise DataError("weighting must be 'efficient' or 'trace_ratio'")
    ezsq = fit.residuals**2
    a_hat = (zbar * ezsq[:, None]).T @ zbar / n
    a_inv = _robust_inverse(a_hat)
    ptz = fit.design.T @ zbar
    if weighting == "efficient":
        bread = _robust_inverse(ptz @ a_inv @ ptz.T)
        sigma = n * n * bread
    else:
        h = a_inv
        denom = float(np.trace(zbar @ h @ zbar.T))
        if denom == 0.0:
            raise DegenerateDataError("trace_ratio weighting has zero denominator")
        g = h @ (a_hat - (zbar.T @ zbar) / denom) @ h
        bread = _robust_inverse(ptz @ g @ ptz.T)
        meat = ptz @ g @ (n * a_hat) @ g @ ptz.T
        sigma = n * bread @ meat @ bread
    return (sigma + sigma.T) / 2.0


def _project_psd(mat: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues to zero; identity on PSD input."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    if vals[0] >= 0.0:
        return sym
    return (vecs * np.maximum(vals, 0.0)) @ vecs.T


def corrected_covariance(fit: TobitGmmFit) -> np.ndarray:
    """Sigma* minus the psi1(1 - psi1) beta beta' recentering term, PSD-projected.

    The subtraction can go indefinite in finite samples, so negative
    eigenvalues are clipped at zero before any use in sampling.
    """
    if fit.sigma_star_matrix is None:
        raise DataError("run sandwich_variance before corrected_covariance")
    p1 = fit.constants.psi1
    raw = fit.sigma_star_matrix - p1 * (1.0 - p1) * np.outer(fit.beta, fit.beta)
    return _project_psd(raw)


@dataclass(frozen=True)
class ControlFunctionFit:
    """Second stage on [p, eta_hat, x] where eta_hat = p - p_hat."""

    beta: float
    beta_eta: float
    beta_x: np.ndarray
    eta_hat: np.ndarray
    residuals: np.ndarray


def control_function_fit(p, p_hat, x, y) -> ControlFunctionFit:
    """Regress the outcome on treatment, first-stage residual, and covariates.

    The residual column absorbs the endogenous part of p; a constant p_hat
    makes p and eta_hat collinear and the fit fails accordingly.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    p_hat = np.asarray(p_hat, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        x = np.empty((len(p), 0))
    if not (len(p) == len(p_hat) == len(y) == x.shape[0]):
        raise DataError("p, p_hat, x, y must have matching row counts")
    eta = p - p_hat
    design = np.column_stack([p, eta, x])
    ls = fit_ols(design, y)
    return ControlFunctionFit(
        beta=float(ls.coef[0]),
        beta_eta=float(ls.coef[1]),
        beta_x=ls.coef[2:],
        eta_hat=eta,
        residuals=y - design @ ls.coef,
    )


@dataclass(frozen=True)
class DplsIvFit:
    """Full two-network pipeline: treatment network plus outcome stage."""

    mode: str
    censored: bool
    first_stage: DplsModel
    constants: TobitConstants
    gmm: TobitGmmFit | None = None
    cf: ControlFunctionFit | None = None

    @property
    def policy_effect(self) -> float:
        if self.gmm is not None:
            return float(self.gmm.beta[0])
        return self.cf.beta

    def predict_treatment(self, z, x) -> np.ndarray:
        zbar = augment_instruments(z, x).zbar
        return self.first_stage.predict(zbar)

    def predict_outcome(self, z, x, p=None) -> np.ndarray:
        """Structural outcome prediction on the observed scale.

        The latent index is formed from the fitted coefficients and, when
        the outcome stage was censored, passed through the known max(., 0)
        transform. Supplying realized treatments p lets the control-function
        mode use its residual term; otherwise the residual is taken as zero.
        """
        x = np.asarray(x, dtype=np.float64)
        p_hat = self.predict_treatment(z, x)
        if self.gmm is not None:
            index = p_hat * self.gmm.beta[0]
            if x.size:
                index = index + x @ self.gmm.beta[1:]
        else:
            if p is None:
                index = p_hat * self.cf.beta
            else:
                p = np.asarray(p, dtype=np.float64).ravel()
                index = p * self.cf.beta + (p - p_hat) * self.cf.beta_eta
            if x.size:
                index = index + x @ self.cf.beta_x
        if self.censored:
            return np.maximum(index, 0.0)
        return index


def dpls_iv_fit(
    ds: Dataset,
    cfg: DplsConfig,
    mode: str = "rescale_gmm",
    censored: bool = True,
    weighting: str = "efficient",
) -> DplsIvFit:
    """Chain the treatment network and the selected outcome stage.

    censored=False skips recentering (identity constants), under which the
    rescale_gmm mode is exactly two-stage least squares on the network's
    treatment predictions.
    """
    if mode not in ("rescale_gmm", "control_function"):
        raise DataError("mode must be 'rescale_gmm' or 'control_function'")
    aug = augment_instruments(ds.z, ds.x)
    first = dpls_fit(aug.zbar, ds.p, cfg)
    p_hat = first.predict(aug.zbar)
    constants = estimate_tobit_constants(ds.y) if censored else identity_constants()
    y_tilde = recenter_outcome(ds.y, constants)
    if mode == "rescale_gmm":
        fit = gmm_beta(p_hat, ds.x, y_tilde, constants, p_observed=ds.p)
        sigma = sandwich_variance(fit, aug.zbar, weighting=weighting)
        fit = replace(fit, sigma_star_matrix=sigma, weighting=weighting)
        fit = replace(fit, corrected_matrix=corrected_covariance(fit))
        return DplsIvFit(
            mode=mode, censored=censored, first_stage=first,
            constants=constants, gmm=fit,
        )
    cf = control_function_fit(ds.p, p_hat, ds.x, y_tilde)
    return DplsIvFit(
        mode=mode, censored=censored, first_stage=first,
        constants=constants, cf=cf,
    )


@dataclass(frozen=True)
class PosteriorDraws:
    """Asymptotic-normal draws for the policy coefficients and psi1."""

    beta_draws: np.ndarray
    psi1_draws: np.ndarray
    seed_path: tuple

    def predictive(self, design) -> np.ndarray:
        """Latent-index draws design @ beta per draw; shape (rows, draws)."""
        design = np.asarray(design, dtype=np.float64)
        return design @ self.beta_draws.T


def sample_posterior(fit: TobitGmmFit, n: int, draws: int, rng: SeededRng) -> PosteriorDraws:
    """Draw from N(beta_hat, corrected/n) and N(psi1, psi1(1-psi1)/n).

    Sampling goes through the eigendecomposition of the PSD-projected
    corrected covariance, so indefiniteness cannot leak in. psi1 draws are
    clipped to the open unit interval.
    """
    if draws < 1 or n < 1:
        raise DataError("draws and n must be positive")
    cov = fit.corrected_matrix
    if cov is None:
        cov = corrected_covariance(fit)
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2.0)
    scale = vecs * np.sqrt(np.maximum(vals, 0.0) / n)
    gen = rng.generator
    shocks = gen.standard_normal(size=(draws, len(fit.beta)))
    beta_draws = fit.beta + shocks @ scale.T
    p1 = fit.constants.psi1
    psi_draws = p1 + np.sqrt(p1 * (1.0 - p1) / n) * gen.standard_normal(size=draws)
    psi_draws = np.clip(psi_draws, _PSI_EPS, 1.0 - _PSI_EPS)
    return PosteriorDraws(
        beta_draws=beta_draws, psi1_draws=psi_draws, seed_path=rng.path
    )
