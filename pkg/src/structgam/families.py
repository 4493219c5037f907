"""Response families: Gaussian (identity), Poisson (log), negative binomial
(log, with mean-variance Var = mu + kappa * mu^2)."""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .errors import ValidationError

_ETA_MAX = 300.0  # exp overflow guard for log links


class Family:
    name = ""
    link_name = ""
    fixed_scale = False

    def validate_response(self, y: np.ndarray) -> None:
        pass

    def initial_mu(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def link(self, mu):
        raise NotImplementedError

    def inv_link(self, eta):
        raise NotImplementedError

    def dmu_deta(self, eta):
        raise NotImplementedError

    def variance(self, mu):
        raise NotImplementedError

    def deviance(self, y, mu, weights=None):
        d = self.unit_deviance(y, mu)
        if weights is not None:
            d = weights * d
        return float(np.sum(d))

    def unit_deviance(self, y, mu):
        raise NotImplementedError


class Gaussian(Family):
    name = "gaussian"
    link_name = "identity"

    def initial_mu(self, y):
        return np.asarray(y, dtype=float)

    def link(self, mu):
        return np.asarray(mu, dtype=float)

    def inv_link(self, eta):
        return np.asarray(eta, dtype=float)

    def dmu_deta(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def unit_deviance(self, y, mu):
        return (y - mu) ** 2


class Poisson(Family):
    name = "poisson"
    link_name = "log"
    fixed_scale = True

    def validate_response(self, y):
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise ValidationError(
                "poisson responses must be nonnegative integers"
            )

    def initial_mu(self, y):
        return (y + np.mean(y) + 0.1) / 2.0

    def link(self, mu):
        return np.log(mu)

    def inv_link(self, eta):
        return np.exp(np.minimum(eta, _ETA_MAX))

    def dmu_deta(self, eta):
        return np.exp(np.minimum(eta, _ETA_MAX))

    def variance(self, mu):
        return np.asarray(mu, dtype=float)

    def unit_deviance(self, y, mu):
        ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
        return 2.0 * (ylogy - (y - mu))

    def loglik(self, y, mu):
        return float(np.sum(y * np.log(mu) - mu - gammaln(y + 1.0)))


class NegativeBinomial(Family):
    """Var(y) = mu + kappa * mu^2 with kappa > 0 (kappa -> 0 is Poisson)."""

    name = "negbin"
    link_name = "log"
    fixed_scale = True

    def __init__(self, kappa: float):
        if not (kappa > 0):
            raise ValidationError("negbin kappa must be positive")
        self.kappa = float(kappa)

    def validate_response(self, y):
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise ValidationError(
                "negbin responses must be nonnegative integers"
            )

    def initial_mu(self, y):
        return (y + np.mean(y) + 0.1) / 2.0

    def link(self, mu):
        return np.log(mu)

    def inv_link(self, eta):
        return np.exp(np.minimum(eta, _ETA_MAX))

    def dmu_deta(self, eta):
        return np.exp(np.minimum(eta, _ETA_MAX))

    def variance(self, mu):
        return mu + self.kappa * mu ** 2

    def unit_deviance(self, y, mu):
        k = self.kappa
        ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
        return 2.0 * (ylogy - (y + 1.0 / k) * np.log((1.0 + k * y) / (1.0 + k * mu)))

    def loglik(self, y, mu):
        r = 1.0 / self.kappa  # dispersion as a size parameter
        return float(np.sum(
            gammaln(y + r) - gammaln(r) - gammaln(y + 1.0)
            + y * np.log(self.kappa * mu / (1.0 + self.kappa * mu))
            - r * np.log1p(self.kappa * mu)
        ))


def family_from_name(name: str, kappa: float | None = None) -> Family:
    name = name.lower()
    if name == "gaussian":
        return Gaussian()
    if name == "poisson":
        return Poisson()
    if name in ("negbin", "negative-binomial", "nb"):
        return NegativeBinomial(kappa if kappa is not None else 1.0)
    raise ValidationError(f"unknown family {name!r}")
