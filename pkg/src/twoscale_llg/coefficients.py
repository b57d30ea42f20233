"""Y-periodic material coefficients and the named analytic presets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TWO_PI = 2.0 * np.pi


def _const(value):
    return lambda y: np.full(len(y), float(value))


def _zero_grad(y):
    return np.zeros_like(np.asarray(y, dtype=float))


@dataclass(frozen=True, eq=False)
class PeriodicCoefficientSet:
    """Material functions on the unit cell, all 1-periodic.

    Scalar functions map points ``(P, dim)`` to ``(P,)``; ``a`` maps to
    ``(P, dim, dim)``. Gradients are analytic: ``grad_mu`` and ``grad_Ms``
    return ``(P, dim)``, ``grad_a`` returns ``(P, dim, dim, dim)`` with the
    derivative index last.
    """

    dim: int
    a: Callable
    grad_a: Callable
    a_min: float
    a_max: float
    K: Callable = field(default_factory=lambda: _const(0.0))
    mu: Callable = field(default_factory=lambda: _const(1.0))
    grad_mu: Callable = _zero_grad
    Ms: Callable = field(default_factory=lambda: _const(1.0))
    grad_Ms: Callable = _zero_grad
    easy_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    h_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = "custom"

    def scaled(self, eps: float):
        """Return ``x -> a(x/eps)`` for use on the physical domain."""
        return lambda x: self.a(np.asarray(x) / eps)

    def check(self, n_samples: int = 64, seed: int = 0) -> None:
        """Verify coercivity bounds and periodicity at random sample points."""
        rng = np.random.default_rng(seed)
        y = rng.random((n_samples, self.dim))
        ev = np.linalg.eigvalsh(self.a(y))
        if ev.min() < self.a_min - 1e-12 or ev.max() > self.a_max + 1e-12:
            raise ValueError("coefficient eigenvalues outside [a_min, a_max]")
        for k in range(self.dim):
            shift = y.copy()
            shift[:, k] += 1.0
            for f in (self.a, self.K, self.mu, self.Ms):
                if np.abs(f(shift) - f(y)).max() > 1e-12:
                    raise ValueError("coefficient is not 1-periodic")


def _product_profile(mean, amp, phase_fn):
    """``prod_k (mean + amp * phase_fn(y_k))`` and its gradient."""

    def value(y):
        y = np.asarray(y, dtype=float)
        return np.prod(mean + amp * phase_fn(y)[0], axis=1)

    def grad(y):
        y = np.asarray(y, dtype=float)
        f, df = phase_fn(y)
        f = mean + amp * f
        df = amp * df
        out = np.empty_like(y)
        for k in range(y.shape[1]):
            others = np.prod(np.delete(f, k, axis=1), axis=1)
            out[:, k] = df[:, k] * others
        return out

    return value, grad


def _cos_shifted(y):
    # cos(2 pi (y - 1/2)) and its derivative
    return np.cos(TWO_PI * (y - 0.5)), -TWO_PI * np.sin(TWO_PI * (y - 0.5))


def _sin(y):
    return np.sin(TWO_PI * y), TWO_PI * np.cos(TWO_PI * y)


def _isotropic(dim, scalar, scalar_grad):
    eye = np.eye(dim)

    def a(y):
        return scalar(y)[:, None, None] * eye

    def grad_a(y):
        return np.einsum("ij,pk->pijk", eye, scalar_grad(y))

    return a, grad_a


def product_cosine_coefficients(dim: int = 2, a_mean: float = 1.1, a_amp: float = 0.25,
                       mu_mean: float = 1.0, mu_amp: float = 0.0,
                       Ms: float = 1.0, K: float = 0.0,
                       name: str | None = None) -> PeriodicCoefficientSet:
    """Product-cosine exchange coefficient, optional product-sine ``mu``.

    ``a(y) = prod_k (a_mean + a_amp cos(2 pi (y_k - 1/2))) I``. With
    ``mu_amp > 0`` the stray coefficient is
    ``mu(y) = prod_k (mu_mean + mu_amp sin(2 pi y_k))``.
    """
    val, grad = _product_profile(a_mean, a_amp, _cos_shifted)
    a, grad_a = _isotropic(dim, val, grad)
    mu, grad_mu = _product_profile(mu_mean, mu_amp, _sin)
    lo, hi = a_mean - abs(a_amp), a_mean + abs(a_amp)
    return PeriodicCoefficientSet(
        dim=dim, a=a, grad_a=grad_a, a_min=lo**dim, a_max=hi**dim,
        mu=mu, grad_mu=grad_mu, Ms=_const(Ms), K=_const(K),
        name=name or f"cosine{dim}d",
    )


def layered_coefficients(dim: int = 2, mean: float = 1.5, amp: float = 0.5,
                         shear: float = 0.0, axis: int | None = None,
                         K: float = 0.0) -> PeriodicCoefficientSet:
    """Laminate varying along the last coordinate.

    ``a(y) = alpha(y_n) I + shear * sin(2 pi y_n) (e_1 e_n^T + e_n e_1^T)``
    with ``alpha(t) = mean + amp cos(2 pi t)``. ``shear`` makes the
    coefficient anisotropic while keeping it layered.
    """
    axis = dim - 1 if axis is None else axis
    eye = np.eye(dim)
    other = 0 if axis != 0 else 1
    S = np.zeros((dim, dim))
    S[other, axis] = S[axis, other] = 1.0

    def a(y):
        t = np.asarray(y)[:, axis]
        alpha = mean + amp * np.cos(TWO_PI * t)
        return alpha[:, None, None] * eye + (shear * np.sin(TWO_PI * t))[:, None, None] * S

    def grad_a(y):
        t = np.asarray(y)[:, axis]
        d = (-amp * TWO_PI * np.sin(TWO_PI * t))[:, None, None] * eye \
            + (shear * TWO_PI * np.cos(TWO_PI * t))[:, None, None] * S
        out = np.zeros((len(t), dim, dim, dim))
        out[..., axis] = d
        return out

    return PeriodicCoefficientSet(
        dim=dim, a=a, grad_a=grad_a,
        a_min=mean - abs(amp) - abs(shear), a_max=mean + abs(amp) + abs(shear),
        K=_const(K), name="layered",
    )


def constant_coefficients(dim: int = 2, a: float = 1.0, K: float = 0.0, mu: float = 1.0,
                          Ms: float = 1.0, h_a=(0.0, 0.0, 0.0),
                          easy_axis=(0.0, 0.0, 1.0)) -> PeriodicCoefficientSet:
    eye = np.eye(dim)
    return PeriodicCoefficientSet(
        dim=dim,
        a=lambda y: np.broadcast_to(a * eye, (len(y), dim, dim)).copy(),
        grad_a=lambda y: np.zeros((len(y), dim, dim, dim)),
        a_min=a, a_max=a, K=_const(K), mu=_const(mu), Ms=_const(Ms),
        easy_axis=np.asarray(easy_axis, dtype=float),
        h_a=np.asarray(h_a, dtype=float), name="constant",
    )


PRESETS = {
    "cosine2d": lambda **kw: product_cosine_coefficients(dim=2, **kw),
    "cosine3d": lambda **kw: product_cosine_coefficients(dim=3, **kw),
    "layered": layered_coefficients,
    "constant": constant_coefficients,
}


def make_preset(name: str, **overrides) -> PeriodicCoefficientSet:
    """Build a named preset with keyword parameter overrides."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown coefficient preset {name!r}; "
                         f"choose from {sorted(PRESETS)}") from None
    return factory(**overrides)
