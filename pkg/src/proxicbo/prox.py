"""Proximal operators for the regularizers used throughout the package.

Every operator ``g`` exposes three things:

* ``value(v)``      -- g(v), possibly ``+inf`` for constraint violations
* ``prox(v, mu)``   -- argmin_u g(u) + ||u - v||^2 / (2 mu)
* via :func:`moreau_grad`, the gradient of the Moreau envelope
  M_mu(v) = inf_u g(u) + ||u - v||^2 / (2 mu), which equals
  (v - prox(v, mu)) / mu.

All operators accept a single point of shape ``(d,)`` or a batch of shape
``(n, d)``; values come back as a scalar or an ``(n,)`` array accordingly.
"""

import math

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError


def soft_threshold(v, t):
    """Elementwise soft threshold: sign(v) * max(|v| - t, 0)."""
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def tv_anisotropic(x):
    """Sum of absolute horizontal and vertical first differences of a 2-D image."""
    return np.abs(np.diff(x, axis=0)).sum() + np.abs(np.diff(x, axis=1)).sum()


def tv_isotropic(x):
    """Isotropic total variation of a 2-D image.

    Interior pixels contribute sqrt(dv^2 + dh^2); the last row and column
    contribute their single available difference in absolute value.
    """
    dv = x[1:, :] - x[:-1, :]
    dh = x[:, 1:] - x[:, :-1]
    interior = np.sqrt(dv[:, :-1] ** 2 + dh[:-1, :] ** 2).sum()
    edge = np.abs(dv[:, -1]).sum() + np.abs(dh[-1, :]).sum()
    return interior + edge


def _as_bound(b, name):
    arr = np.atleast_1d(np.asarray(b, dtype=float))
    if arr.ndim != 1:
        raise InvalidParameterError(f"{name} must be a scalar or 1-d array")
    return arr


class _Operator:
    """Common checks for all operators."""

    #: expected input dimension, or None when any dimension is accepted
    dim = None
    kind = "?"

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim not in (1, 2):
            raise DimensionMismatchError(
                f"{self.kind}: expected shape (d,) or (n, d), got {v.shape}"
            )
        if self.dim is not None and v.shape[-1] != self.dim:
            raise DimensionMismatchError(
                f"{self.kind}: expected dimension {self.dim}, got {v.shape[-1]}"
            )
        return v

    @staticmethod
    def _check_mu(mu):
        if not (mu > 0) or not math.isfinite(mu):
            raise InvalidParameterError(f"mu must be positive and finite, got {mu}")

    def config(self):
        raise NotImplementedError


class Zero(_Operator):
    """g = 0. The prox is the identity."""

    kind = "Zero"

    def value(self, v):
        v = self._check(v)
        return 0.0 if v.ndim == 1 else np.zeros(v.shape[0])

    def prox(self, v, mu):
        v = self._check(v)
        self._check_mu(mu)
        return v.copy()

    def config(self):
        return {"kind": "Zero"}


class L1(_Operator):
    """g(v) = weight * ||v||_1."""

    kind = "L1"

    def __init__(self, weight):
        if weight < 0:
            raise InvalidParameterError("L1 weight must be nonnegative")
        self.weight = float(weight)

    def value(self, v):
        v = self._check(v)
        return self.weight * np.abs(v).sum(axis=-1)

    def prox(self, v, mu):
        v = self._check(v)
        self._check_mu(mu)
        return soft_threshold(v, mu * self.weight)

    def config(self):
        return {"kind": "L1", "weight": self.weight}


class Box(_Operator):
    """Indicator of the box [lower, upper]. The prox is the projection (clamp).

    Bounds may be scalars (applied to every coordinate) or vectors; entries
    of ``+-inf`` leave that side unconstrained.
    """

    kind = "Box"

    def __init__(self, lower, upper):
        lo = _as_bound(lower, "lower")
        hi = _as_bound(upper, "upper")
        if lo.size != hi.size:
            raise InvalidParameterError("lower and upper must have the same length")
        if np.any(lo > hi):
            raise InvalidParameterError("lower bound exceeds upper bound")
        self.lower = lo
        self.upper = hi
        self.dim = None if lo.size == 1 else lo.size

    def value(self, v):
        v = self._check(v)
        inside = np.all((v >= self.lower) & (v <= self.upper), axis=-1)
        out = np.where(inside, 0.0, np.inf)
        return float(out) if v.ndim == 1 else out

    def prox(self, v, mu):
        v = self._check(v)
        self._check_mu(mu)
        return np.clip(v, self.lower, self.upper)

    def config(self):
        return {"kind": self.kind, "lower": self.lower.tolist(),
                "upper": self.upper.tolist()}


class Indicator(Box):
    """Alias of :class:`Box` kept as a distinct kind for config files."""

    kind = "Indicator"


class L1Box(Box):
    """g(v) = weight * ||v||_1 + indicator of [lower, upper].

    The prox is the clamp of the soft threshold, which is exact for any box
    (also for boxes that exclude the origin).
    """

    kind = "L1Box"

    def __init__(self, weight, lower, upper):
        if weight < 0:
            raise InvalidParameterError("L1Box weight must be nonnegative")
        super().__init__(lower, upper)
        self.weight = float(weight)

    def value(self, v):
        box = super().value(v)
        v = self._check(v)
        return self.weight * np.abs(v).sum(axis=-1) + box

    def prox(self, v, mu):
        v = self._check(v)
        self._check_mu(mu)
        return np.clip(soft_threshold(v, mu * self.weight), self.lower, self.upper)

    def config(self):
        return {"kind": "L1Box", "weight": self.weight,
                "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class TvBox(_Operator):
    """g(v) = weight * TV(image(v)) + indicator of the box [lower, upper].

    Vectors are interpreted row-major as ``height x width`` images. The prox
    has no closed form; it is computed by fast gradient projection on the
    dual problem with a Nesterov momentum schedule, stopping once the duality
    gap of the prox objective drops below ``inner_tol`` (or after
    ``inner_iters`` sweeps).
    """

    kind = "TvBox"

    def __init__(self, weight, height, width, lower=0.0, upper=1.0,
                 isotropic=False, inner_iters=100, inner_tol=1e-6):
        if weight < 0:
            raise InvalidParameterError("TvBox weight must be nonnegative")
        if height < 1 or width < 1:
            raise InvalidParameterError("TvBox needs height >= 1 and width >= 1")
        if not (float(lower) <= float(upper)):
            raise InvalidParameterError("lower bound exceeds upper bound")
        self.weight = float(weight)
        self.height = int(height)
        self.width = int(width)
        self.lower = float(lower)
        self.upper = float(upper)
        self.isotropic = bool(isotropic)
        self.inner_iters = int(inner_iters)
        self.inner_tol = float(inner_tol)
        self.dim = self.height * self.width

    def _tv(self, x):
        return tv_isotropic(x) if self.isotropic else tv_anisotropic(x)

    def value(self, v):
        v = self._check(v)
        if v.ndim == 2:
            return np.array([self.value(row) for row in v])
        x = v.reshape(self.height, self.width)
        if np.any(x < self.lower) or np.any(x > self.upper):
            return np.inf
        return self.weight * self._tv(x)

    def prox(self, v, mu):
        v = self._check(v)
        self._check_mu(mu)
        if v.ndim == 2:
            return np.vstack([self.prox(row, mu) for row in v])
        b = v.reshape(self.height, self.width)
        lam = mu * self.weight
        if lam == 0.0:
            return np.clip(b, self.lower, self.upper).ravel()
        x = self._fgp(b, lam)
        return x.ravel()

    # -- dual solver ------------------------------------------------------

    def _clamp(self, x):
        return np.clip(x, self.lower, self.upper)

    @staticmethod
    def _lop(p, q):
        """Adjoint pair: assemble an image from dual fields p (H-1,W), q (H,W-1)."""
        h, w = p.shape[0] + 1, p.shape[1]
        x = np.zeros((h, w))
        x[:-1, :] += p
        x[1:, :] -= p
        x[:, :-1] += q
        x[:, 1:] -= q
        return x

    @staticmethod
    def _ltr(x):
        """Transpose of :meth:`_lop`: per-axis backward differences."""
        return x[:-1, :] - x[1:, :], x[:, :-1] - x[:, 1:]

    def _project_dual(self, p, q):
        if not self.isotropic:
            return np.clip(p, -1.0, 1.0), np.clip(q, -1.0, 1.0)
        p = p.copy()
        q = q.copy()
        norm = np.sqrt(p[:, :-1] ** 2 + q[:-1, :] ** 2)
        scale = np.maximum(norm, 1.0)
        p[:, :-1] /= scale
        q[:-1, :] /= scale
        if p.shape[1] >= 1:
            p[:, -1] /= np.maximum(np.abs(p[:, -1]), 1.0)
        if q.shape[0] >= 1:
            q[-1, :] /= np.maximum(np.abs(q[-1, :]), 1.0)
        return p, q

    def _gap(self, b, lam, p, q):
        """Duality gap of 0.5||x-b||^2 + lam*TV(x) over the box, at (p, q)."""
        sl = lam * self._lop(p, q)
        x = self._clamp(b - sl)
        primal = ((x - b) ** 2).sum() + 2.0 * lam * self._tv(x)
        resid = (b - sl) - x
        dual = (resid ** 2).sum() + 2.0 * (b * sl).sum() - (sl ** 2).sum()
        return 0.5 * (primal - dual), x

    def _fgp(self, b, lam):
        h, w = b.shape
        p = np.zeros((h - 1, w))
        q = np.zeros((h, w - 1))
        r, s = p, q
        t = 1.0
        step = 1.0 / (8.0 * lam)
        x = self._clamp(b)
        for _ in range(self.inner_iters):
            grad_pt = self._clamp(b - lam * self._lop(r, s))
            gp, gq = self._ltr(grad_pt)
            p_new, q_new = self._project_dual(r + step * gp, s + step * gq)
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            r = p_new + beta * (p_new - p)
            s = q_new + beta * (q_new - q)
            p, q, t = p_new, q_new, t_new
            gap, x = self._gap(b, lam, p, q)
            if gap <= self.inner_tol:
                break
        return x

    def config(self):
        return {"kind": "TvBox", "weight": self.weight, "height": self.height,
                "width": self.width, "lower": self.lower, "upper": self.upper,
                "isotropic": self.isotropic, "inner_iters": self.inner_iters,
                "inner_tol": self.inner_tol}


#: config ``kind`` -> operator class
OPERATOR_KINDS = {
    "Zero": Zero,
    "L1": L1,
    "Box": Box,
    "Indicator": Indicator,
    "L1Box": L1Box,
    "TvBox": TvBox,
}


def operator_from_config(spec):
    """Build an operator from a plain dict, e.g. parsed from a JSON config."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in OPERATOR_KINDS:
        raise InvalidParameterError(f"unknown operator kind: {kind!r}")
    return OPERATOR_KINDS[kind](**spec)


def prox(op, v, mu):
    """Proximal map of ``op`` at ``v`` with parameter ``mu``."""
    return op.prox(v, mu)


def moreau_grad(op, v, mu):
    """Gradient of the Moreau envelope of ``op``: (v - prox(v, mu)) / mu."""
    v = np.asarray(v, dtype=float)
    return (v - op.prox(v, mu)) / mu


def regularizer_value(op, v):
    """Value g(v); ``+inf`` when v violates a constraint in g."""
    return op.value(v)


def constraint_bounds(op):
    """Box bounds encoded in ``op`` as ``(lower, upper)`` arrays, else None.

    Used by solvers that handle constraints by projection.
    """
    if isinstance(op, Box):
        return op.lower, op.upper
    if isinstance(op, TvBox):
        return np.array([op.lower]), np.array([op.upper])
    return None


def penalty_value(op, v):
    """The finite penalty part of g (constraints dropped).

    Projection-based solvers keep particles feasible, so their energies use
    only this part.
    """
    v = np.asarray(v, dtype=float)
    if isinstance(op, (Zero, Indicator)) or type(op) is Box:
        return 0.0 if v.ndim == 1 else np.zeros(v.shape[0])
    if isinstance(op, (L1, L1Box)):
        return op.weight * np.abs(v).sum(axis=-1)
    if isinstance(op, TvBox):
        if v.ndim == 2:
            return np.array([penalty_value(op, row) for row in v])
        return op.weight * op._tv(v.reshape(op.height, op.width))
    raise InvalidParameterError(f"unsupported operator {type(op).__name__}")
