"""Drift/diffusion field library, mollification, and regularity reports.

A CoefficientField bundles the drift b(t, z) (values in R^d) and diffusion
sigma(t, z) (values in R^{d x d}) of the kinetic system on phase space
R^{2d}.  Library fields are time-independent, vanish (drift) outside a
support ball, and keep sigma's singular values inside [1/K, K].  Rough
fields are consumed through MollifiedField, which convolves both
coefficients with the compact smooth bump at scale 1/n via a fixed
Gauss-Legendre rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy.stats import qmc

from .errors import ValidationError
from .grids import GridFunction
from .spaces import Mollifier, lp_norm, spectral_derivative

__all__ = [
    "CoefficientField",
    "MollifiedField",
    "library_field",
    "mollified",
    "check_UE",
    "UEReport",
    "bessel_regularity_report",
    "RegularityReport",
    "sigma_sobolev_report",
    "smooth_plateau",
]

LIBRARY = (
    "free",
    "constant-sigma-smooth-b",
    "langevin",
    "hoelder-drift",
    "anisotropic-sigma",
)


def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1.  Shape-preserving,
    scalar input included (no boolean indexing)."""
    t = np.asarray(t, dtype=float)
    band = (t > 0.0) & (t < 1.0)
    tb = np.where(band, t, 0.5)
    lo = np.exp(-1.0 / tb)
    hi = np.exp(-1.0 / (1.0 - tb))
    return np.where(band, lo / (lo + hi), np.where(t >= 1.0, 1.0, 0.0))


def smooth_plateau(r, r_inner, r_outer):
    """1 on [0, r_inner], smooth monotone drop to 0 at r_outer."""
    if not 0.0 < r_inner < r_outer:
        raise ValidationError("need 0 < r_inner < r_outer")
    return 1.0 - _smooth_step((np.asarray(r, float) - r_inner) / (r_outer - r_inner))


@dataclass
class CoefficientField:
    """Drift and diffusion of one kinetic system.

    drift : callable (t, z) -> array (..., d) for z of shape (..., 2d)
    sigma : callable (t, z) -> array (..., d, d)
    constant_sigma : the (d, d) matrix when sigma does not depend on (t, z),
        else None.  Constant-sigma fields unlock the closed-form kernel.
    """

    dim: int
    drift: callable
    sigma: callable
    support_radius: float
    name: str = "custom"
    params: dict = dc_field(default_factory=dict)
    constant_sigma: np.ndarray | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("dimension must be >= 1")
        if self.support_radius <= 0:
            raise ValidationError("support radius must be positive")
        if self.constant_sigma is not None:
            self.constant_sigma = np.asarray(self.constant_sigma, dtype=float)

    @property
    def phase_dim(self):
        return 2 * self.dim

    def generator_a(self, t=0.0, z=None):
        """Second-order coefficient a = sigma sigma^T / 2."""
        if z is None:
            if self.constant_sigma is None:
                raise ValidationError(
                    "generator_a without a state needs a constant-sigma field"
                )
            s = self.constant_sigma
            return 0.5 * s @ s.T
        s = self.sigma(t, z)
        return 0.5 * np.einsum("...ij,...kj->...ik", s, s)


def _check_state(z, dim):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 2 * dim:
        raise ValidationError(f"state must have last axis {2 * dim}")
    return z


# ---------------------------------------------------------------------------
# library


def library_field(name, dim, **params):
    """Construct one of the built-in fields.

    Common params: ``kappa`` (drift amplitude, default 1) and
    ``support_radius``.  Unknown names list the library in the error.
    """
    if name not in LIBRARY:
        raise ValidationError(f"unknown field {name!r}; library: {', '.join(LIBRARY)}")
    kappa = float(params.pop("kappa", 1.0))
    eye = np.eye(dim)

    if name == "free":
        radius = float(params.pop("support_radius", 1.0))
        _reject_extra(params)

        def drift(t, z, _d=dim):
            z = _check_state(z, _d)
            return np.zeros(z.shape[:-1] + (_d,))

        return CoefficientField(dim, drift, _const_sigma_fn(eye), radius,
                                name, {"kappa": kappa}, eye)

    if name == "constant-sigma-smooth-b":
        radius = float(params.pop("support_radius", 4.0))
        _reject_extra(params)
        r_in, r_out = 0.5 * radius, radius

        def drift(t, z, _d=dim, _k=kappa, _ri=r_in, _ro=r_out):
            z = _check_state(z, _d)
            r = np.sqrt(np.einsum("...i,...i->...", z, z))
            cut = smooth_plateau(r, _ri, _ro)
            v = z[..., _d:]
            x = z[..., :_d]
            # smooth rotation-plus-damping profile, compactly supported
            return _k * cut[..., None] * (np.sin(x) - v)

        return CoefficientField(dim, drift, _const_sigma_fn(eye), radius,
                                name, {"kappa": kappa}, eye)

    if name == "langevin":
        radius = float(params.pop("support_radius", 64.0))
        _reject_extra(params)
        r_in, r_out = 0.5 * radius, radius

        def drift(t, z, _d=dim, _k=kappa, _ri=r_in, _ro=r_out):
            z = _check_state(z, _d)
            r = np.sqrt(np.einsum("...i,...i->...", z, z))
            cut = smooth_plateau(r, _ri, _ro)
            return -_k * cut[..., None] * z[..., _d:]

        return CoefficientField(dim, drift, _const_sigma_fn(eye), radius,
                                name, {"kappa": kappa}, eye)

    if name == "hoelder-drift":
        radius = float(params.pop("support_radius", 4.0))
        _reject_extra(params)
        r_in, r_out = 0.5 * radius, radius

        def drift(t, z, _d=dim, _k=kappa, _ri=r_in, _ro=r_out):
            z = _check_state(z, _d)
            r = np.sqrt(np.einsum("...i,...i->...", z, z))
            cut = smooth_plateau(r, _ri, _ro)
            x1 = z[..., 0]
            out = np.zeros(z.shape[:-1] + (_d,))
            out[..., 0] = _k * np.sign(x1) * np.cbrt(x1 * x1) * cut
            return out

        return CoefficientField(dim, drift, _const_sigma_fn(eye), radius,
                                name, {"kappa": kappa}, eye)

    # anisotropic-sigma: scalar modulation of the identity, eigenvalues
    # sweeping the full [1/2, 2] band inside the plateau
    radius = float(params.pop("support_radius", 4.0))
    _reject_extra(params)
    r_in, r_out = 0.5 * radius, radius

    def drift(t, z, _d=dim, _k=kappa, _ri=r_in, _ro=r_out):
        z = _check_state(z, _d)
        r = np.linalg.norm(z, axis=-1)
        cut = smooth_plateau(r, _ri, _ro)
        return -_k * cut[..., None] * z[..., _d:]

    def sigma(t, z, _d=dim, _ri=r_in, _ro=r_out):
        z = _check_state(z, _d)
        r2 = np.sum(z * z, axis=-1)
        cut = smooth_plateau(np.sqrt(r2), _ri, _ro)
        scalar = 1.25 + 0.75 * np.cos(np.pi * r2) * cut
        return scalar[..., None, None] * np.eye(_d)

    return CoefficientField(dim, drift, sigma, radius, name, {"kappa": kappa}, None)


def _reject_extra(params):
    if params:
        raise ValidationError(f"unknown field parameters: {sorted(params)}")


def _const_sigma_fn(mat):
    def sigma(t, z, _m=mat):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(_m, z.shape[:-1] + _m.shape).copy()
    return sigma


# ---------------------------------------------------------------------------
# mollification


@lru_cache(maxsize=None)
def _mollifier_rule(phase_dim, order=16):
    """Tensor Gauss-Legendre nodes/weights on the unit ball, rho-weighted.

    Weights are renormalized by the rule's own mass of rho so that
    convolving a constant reproduces it to machine precision.
    """
    rho = Mollifier(phase_dim)
    pts, wts = np.polynomial.legendre.leggauss(order)
    grids = np.meshgrid(*([pts] * phase_dim), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
    wgrids = np.meshgrid(*([wts] * phase_dim), indexing="ij")
    tensor_w = np.prod(np.stack([g.reshape(-1) for g in wgrids], axis=-1), axis=-1)
    dens = rho.profile(nodes)
    keep = dens > 0.0
    nodes, weights = nodes[keep], tensor_w[keep] * dens[keep]
    weights = weights / weights.sum()
    return nodes, weights


@dataclass
class MollifiedField:
    """Coefficients of ``base`` convolved with the bump at scale 1/n."""

    base: CoefficientField
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("mollification level n must be >= 1")

    @property
    def dim(self):
        return self.base.dim

    @property
    def phase_dim(self):
        return self.base.phase_dim

    @property
    def name(self):
        return f"{self.base.name}~{self.n}"

    @property
    def support_radius(self):
        return self.base.support_radius + 1.0 / self.n

    @property
    def constant_sigma(self):
        return self.base.constant_sigma

    def _convolve(self, fn, t, z, value_ndim):
        z = _check_state(z, self.dim)
        nodes, weights = _mollifier_rule(self.phase_dim)
        shifted = z[..., None, :] - nodes / self.n
        vals = fn(t, shifted)
        q_axis = vals.ndim - value_ndim - 1
        w = weights.reshape((-1,) + (1,) * value_ndim)
        return np.sum(vals * w, axis=q_axis)

    def drift(self, t, z):
        return self._convolve(self.base.drift, t, z, 1)

    def sigma(self, t, z):
        if self.base.constant_sigma is not None:
            z = _check_state(z, self.dim)
            m = self.base.constant_sigma
            return np.broadcast_to(m, z.shape[:-1] + m.shape).copy()
        return self._convolve(self.base.sigma, t, z, 2)

    def generator_a(self, t=0.0, z=None):
        if z is None:
            if self.base.constant_sigma is None:
                raise ValidationError(
                    "generator_a without a state needs a constant-sigma field"
                )
            s = self.base.constant_sigma
            return 0.5 * s @ s.T
        s = self.sigma(t, z)
        return 0.5 * np.einsum("...ij,...kj->...ik", s, s)


def mollified(base, n):
    """Convenience constructor for MollifiedField."""
    return MollifiedField(base, int(n))


# ---------------------------------------------------------------------------
# uniform ellipticity


@dataclass
class UEReport:
    ok: bool
    constant: float
    min_singular_value: float
    max_singular_value: float
    num_samples: int


def check_UE(field, K, num_samples=512, t_span=(0.0, 1.0), radius=None, slack=0.0):
    """Sample sigma's singular values at quasi-random (t, z) points.

    Passes iff every singular value lies in [1/K - slack, K + slack].
    """
    if K < 1.0:
        raise ValidationError(f"ellipticity constant must be >= 1, got {K}")
    dim = field.dim
    radius = field.support_radius if radius is None else float(radius)
    eng = qmc.Sobol(d=2 * dim + 1, scramble=False)
    pts = eng.random(int(num_samples))
    t = t_span[0] + (t_span[1] - t_span[0]) * pts[:, 0]
    z = radius * (2.0 * pts[:, 1:] - 1.0)
    sig = np.stack([field.sigma(ti, zi) for ti, zi in zip(t, z)])
    svals = np.linalg.svd(sig, compute_uv=False)
    lo, hi = float(svals.min()), float(svals.max())
    ok = (lo >= 1.0 / K - slack - 1e-12) and (hi <= K + slack + 1e-12)
    return UEReport(ok, float(K), lo, hi, int(num_samples))


# ---------------------------------------------------------------------------
# regularity reports


@dataclass
class RegularityReport:
    norm: float            # (integral of the p-th power over [0, T])^(1/p)
    integral_p: float      # int_0^T || . ||_p^p dt
    slice_norms: np.ndarray
    t_nodes: np.ndarray


def _drift_grid(field, t, box_half_width, points_per_axis):
    d = field.dim
    kinds = ("x",) * d + ("v",) * d

    def sample(*coords):
        z = np.stack(coords, axis=-1)
        return field.drift(t, z)

    return GridFunction.from_callable(sample, box_half_width, points_per_axis, kinds)


def bessel_regularity_report(field, alpha, p, box_half_width, points_per_axis,
                             horizon=1.0, num_t_nodes=5):
    """Time-integrated position-regularity norm of the drift.

    Computes ||(I - Delta_x)^(alpha/2) b_t||_p on grid slices at trapezoid
    nodes over [0, horizon] and returns the L^p-in-time aggregate.  The
    diffusion's regularity is reported separately by sigma_sobolev_report;
    the two are never folded into one threshold.
    """
    if p <= 1:
        raise ValidationError(f"regularity report requires p > 1, got {p}")
    if alpha < 0:
        raise ValidationError("alpha must be nonnegative")
    from .spaces import _apply_multiplier  # shared multiplier core

    t_nodes = np.linspace(0.0, horizon, int(num_t_nodes))
    slice_norms = []
    for t in t_nodes:
        f = _drift_grid(field, t, box_half_width, points_per_axis)
        if alpha > 0:
            axes = f.axes_of_kind("x")
            f = _apply_multiplier(f, axes, lambda k2: (1.0 + k2) ** (alpha / 2.0))
        slice_norms.append(lp_norm(f, p))
    slice_norms = np.asarray(slice_norms)
    integral_p = float(np.trapezoid(slice_norms**p, t_nodes))
    return RegularityReport(integral_p ** (1.0 / p), integral_p, slice_norms, t_nodes)


def sigma_sobolev_report(field, p, box_half_width, points_per_axis, t=0.0):
    """Grid L^p norm of the full gradient of sigma's entries at one time."""
    if p <= 1:
        raise ValidationError(f"regularity report requires p > 1, got {p}")
    d = field.dim
    kinds = ("x",) * d + ("v",) * d

    def sample(*coords):
        z = np.stack(coords, axis=-1)
        return field.sigma(t, z).reshape(coords[0].shape + (d * d,))

    f = GridFunction.from_callable(sample, box_half_width, points_per_axis, kinds)
    grads = []
    for axis in range(f.num_grid_axes):
        grads.append(spectral_derivative(f, axis).values)
    gmag = np.sqrt(np.sum(np.stack(grads, axis=-1) ** 2, axis=(-2, -1)))
    return lp_norm(f.with_values(gmag), p)
