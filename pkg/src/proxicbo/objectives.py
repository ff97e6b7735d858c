"""Composite objectives E(x) = f(x) + g(x).

``f`` is smooth (possibly nonconvex) and ``g`` is one of the proximal
operators from :mod:`proxicbo.prox`. Two measurement models are built in:

* :class:`OneBitModel` -- recovery from one-bit quantized linear measurements
  through a smooth periodic relaxation of the quantization constraint.
* :class:`LidarModel` -- Poisson process likelihood for single-photon lidar
  with an optional radial-velocity (Doppler) dilation of the pulse train.
"""

import math

import numpy as np

from . import prox as _prox
from .errors import InvalidParameterError

#: speed of light in metres per nanosecond
C_M_PER_NS = 0.299792458

#: metres-per-second to metres-per-nanosecond
_MPS_TO_MPNS = 1e-9


class CompositeObjective:
    """A smooth term plus a proximal regularizer, with optional rescaling.

    ``f_eval`` and ``f_grad`` must accept a point ``(d,)`` or a batch
    ``(n, d)``. When ``scales`` is given, the objective is expressed in
    rescaled coordinates ``z`` with external parameters ``theta = scales * z``;
    this is purely a conditioning device and callers convert results back
    with :meth:`to_external`.
    """

    def __init__(self, dim, f_eval, f_grad, g, label="", scales=None,
                 restrict_to_box=False, f_eval_grad=None):
        self.dim = int(dim)
        self._f_eval = f_eval
        self._f_grad = f_grad
        self._f_eval_grad = f_eval_grad
        self.g = g
        self.label = label
        #: f is only defined on (a neighborhood of) the box in g; solvers
        #: project intermediate iterates into the box before calling f_grad
        self.restrict_to_box = bool(restrict_to_box)
        if scales is None:
            scales = np.ones(self.dim)
        self.scales = np.asarray(scales, dtype=float)
        if self.scales.shape != (self.dim,):
            raise InvalidParameterError("scales must have shape (dim,)")
        if np.any(self.scales <= 0):
            raise InvalidParameterError("scales must be positive")

    def f(self, x):
        return self._f_eval(np.asarray(x, dtype=float))

    def grad_f(self, x):
        return self._f_grad(np.asarray(x, dtype=float))

    def f_and_grad_f(self, x):
        """``(f(x), grad_f(x))``, sharing the forward pass when the model
        provides a fused evaluation."""
        x = np.asarray(x, dtype=float)
        if self._f_eval_grad is not None:
            return self._f_eval_grad(x)
        return self._f_eval(x), self._f_grad(x)

    def g_value(self, x):
        return _prox.regularizer_value(self.g, x)

    def value(self, x):
        """E(x) = f(x) + g(x); ``+inf`` where g's constraints are violated."""
        return self.f(x) + self.g_value(x)

    def to_external(self, z):
        return np.asarray(z, dtype=float) * self.scales

    def from_external(self, theta):
        return np.asarray(theta, dtype=float) / self.scales


def quadratic_objective(center, weight=1.0, g=None, label="quadratic"):
    """f(x) = weight * ||x - center||^2 with an optional regularizer."""
    center = np.asarray(center, dtype=float)
    if g is None:
        g = _prox.Zero()

    def f_eval(x):
        return weight * np.sum((x - center) ** 2, axis=-1)

    def f_grad(x):
        return 2.0 * weight * (x - center)

    return CompositeObjective(center.size, f_eval, f_grad, g, label=label)


class OneBitModel:
    """One-bit quantized measurements y = sign(sin(omega * (A x0 + u))).

    The smooth data-fit cost is D(x) = 0.5 * ||y - sin(omega*(A x + u))||^2,
    whose residual is periodic in A x + u with period 2*pi/omega.
    """

    def __init__(self, A, y, u, omega, reg_weight=0.0):
        self.A = np.asarray(A, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.u = np.asarray(u, dtype=float)
        self.omega = float(omega)
        self.reg_weight = float(reg_weight)
        m, d = self.A.shape
        if self.y.shape != (m,) or self.u.shape != (m,):
            raise InvalidParameterError("y and u must match the rows of A")
        self.dim = d

    def _phase(self, x):
        return self.omega * (x @ self.A.T + self.u)

    def cost(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        r = np.sin(self._phase(x2)) - self.y
        out = 0.5 * np.sum(r * r, axis=-1)
        return out[0] if single else out

    def cost_grad(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        phase = self._phase(x2)
        r = np.sin(phase) - self.y
        grad = self.omega * ((r * np.cos(phase)) @ self.A)
        return grad[0] if single else grad

    def cost_and_grad(self, x):
        """Cost and gradient from one forward pass (same values as the
        separate calls, the phase and residual are just not recomputed)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        phase = self._phase(x2)
        r = np.sin(phase) - self.y
        out = 0.5 * np.sum(r * r, axis=-1)
        grad = self.omega * ((r * np.cos(phase)) @ self.A)
        if single:
            return out[0], grad[0]
        return out, grad


def onebit_objective(model, g, label="onebit"):
    """Wrap a :class:`OneBitModel` and a regularizer as a composite objective."""
    return CompositeObjective(model.dim, model.cost, model.cost_grad, g,
                              label=label, f_eval_grad=model.cost_and_grad)


class LidarModel:
    """Poisson arrival model for a pulsed single-photon lidar.

    The intensity over the acquisition window [0, t_a] is

        lambda(t) = S * sum_k h(t - center_k) + b

    with a Gaussian pulse shape h of width ``pulse_sigma``. For a static
    target ``center_k = tau + t_k``; with Doppler enabled the pulse train is
    dilated, ``center_k = (c*tau + (c+v)*t_k) / (c - v)``, where ``v`` is the
    radial velocity in m/s (converted to m/ns internally) and ``c`` is in
    m/ns. Parameters are ordered (S, b, tau) or (S, b, tau, v).

    Pulse contributions are truncated beyond ``window_sigmas`` standard
    deviations, consistently in the likelihood and its gradient; with the
    default of 8 sigma the neglected mass is below 1e-15 relative.
    """

    def __init__(self, pulse_times, detections, t_a, pulse_sigma=0.1,
                 doppler=False, c=C_M_PER_NS, window_sigmas=8.0):
        self.pulse_times = np.sort(np.asarray(pulse_times, dtype=float))
        self.detections = np.sort(np.asarray(detections, dtype=float))
        self.t_a = float(t_a)
        self.pulse_sigma = float(pulse_sigma)
        self.doppler = bool(doppler)
        self.c = float(c)
        self.window_sigmas = float(window_sigmas)
        if self.pulse_sigma <= 0:
            raise InvalidParameterError("pulse_sigma must be positive")
        self.dim = 4 if doppler else 3

    @property
    def n_pulses(self):
        return self.pulse_times.size

    @property
    def n_detections(self):
        return self.detections.size

    def _pulse_norm(self):
        return 1.0 / (self.pulse_sigma * math.sqrt(2.0 * math.pi))

    def _centers_affine(self, theta2):
        """Per-particle (slope, intercept) of center_k as a function of t_k."""
        if self.doppler:
            v = theta2[:, 3] * _MPS_TO_MPNS
            denom = self.c - v
            slope = (self.c + v) / denom
            intercept = self.c * theta2[:, 2] / denom
            valid = denom > 0
        else:
            slope = np.ones(theta2.shape[0])
            intercept = theta2[:, 2]
            valid = np.ones(theta2.shape[0], dtype=bool)
        return slope, intercept, valid

    def _window_sums(self, theta2, times, need_velocity_term=False):
        """Truncated pulse sums at the given times for each parameter row.

        Returns (H, Hp, Hv, valid): H[i, t] = sum_k h(t - center_k),
        Hp[i, t] = sum_k h'(t - center_k), and, when requested,
        Hv[i, t] = sum_k h'(t - center_k) * d(center_k)/dv.
        """
        sig = self.pulse_sigma
        w = self.window_sigmas * sig
        slope, intercept, valid = self._centers_affine(theta2)
        n = theta2.shape[0]
        t = times
        # pulse index window per (particle, detection): solve the affine map
        safe_slope = np.where(valid, slope, 1.0)
        lo_val = (t[None, :] - intercept[:, None] - w) / safe_slope[:, None]
        hi_val = (t[None, :] - intercept[:, None] + w) / safe_slope[:, None]
        lo = np.searchsorted(self.pulse_times, lo_val.ravel(), side="left")
        hi = np.searchsorted(self.pulse_times, hi_val.ravel(), side="right")
        lo = lo.reshape(n, -1)
        hi = hi.reshape(n, -1)
        width = int(np.max(hi - lo, initial=0))
        if width == 0:
            zeros = np.zeros((n, t.size))
            return zeros, zeros.copy(), zeros.copy(), valid
        idx = lo[:, :, None] + np.arange(width)[None, None, :]
        in_range = idx < hi[:, :, None]
        idx = np.minimum(idx, self.pulse_times.size - 1)
        tk = self.pulse_times[idx]
        centers = slope[:, None, None] * tk + intercept[:, None, None]
        delta = t[None, :, None] - centers
        h = self._pulse_norm() * np.exp(-0.5 * (delta / sig) ** 2)
        h = np.where(in_range, h, 0.0)
        hp = -(delta / sig ** 2) * h
        H = h.sum(axis=2)
        Hp = hp.sum(axis=2)
        if need_velocity_term and self.doppler:
            v = theta2[:, 3] * _MPS_TO_MPNS
            denom2 = np.where(valid, (self.c - v) ** 2, 1.0)
            dcenter_dv = self.c * (theta2[:, 2][:, None, None] + 2.0 * tk) \
                / denom2[:, None, None]
            Hv = (hp * dcenter_dv).sum(axis=2) * _MPS_TO_MPNS
        else:
            Hv = np.zeros_like(H)
        return H, Hp, Hv, valid

    def nll(self, theta):
        """Negative log-likelihood  S*K + b*t_a - sum_t log lambda(t).

        Rows with non-positive intensity at any detection (or a velocity at
        or beyond c) get ``+inf``.
        """
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        theta2 = np.atleast_2d(theta)
        self._check_dim(theta2)
        H, _, _, valid = self._window_sums(theta2, self.detections)
        s, b = theta2[:, 0], theta2[:, 1]
        lam = s[:, None] * H + b[:, None]
        ok = valid & np.all(lam > 0, axis=1)
        out = np.full(theta2.shape[0], np.inf)
        if np.any(ok):
            rows = np.where(ok)[0]
            log_term = np.log(lam[rows]).sum(axis=1)
            out[rows] = s[rows] * self.n_pulses + b[rows] * self.t_a - log_term
        return out[0] if single else out

    def nll_grad(self, theta):
        """Gradient of :meth:`nll` in the parameter order (S, b, tau[, v])."""
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        theta2 = np.atleast_2d(theta)
        self._check_dim(theta2)
        H, Hp, Hv, valid = self._window_sums(theta2, self.detections,
                                             need_velocity_term=True)
        s, b = theta2[:, 0], theta2[:, 1]
        lam = s[:, None] * H + b[:, None]
        if not np.all(valid) or np.any(lam <= 0):
            raise InvalidParameterError(
                "lidar gradient evaluated where the intensity is not positive"
            )
        inv = 1.0 / lam
        grad = np.empty_like(theta2)
        grad[:, 0] = self.n_pulses - (H * inv).sum(axis=1)
        grad[:, 1] = self.t_a - inv.sum(axis=1)
        if self.doppler:
            v = theta2[:, 3] * _MPS_TO_MPNS
            dcenter_dtau = self.c / (self.c - v)
            grad[:, 2] = (s * dcenter_dtau) * (Hp * inv).sum(axis=1)
            grad[:, 3] = s * (Hv * inv).sum(axis=1)
        else:
            grad[:, 2] = s * (Hp * inv).sum(axis=1)
        return grad[0] if single else grad

    def intensity(self, theta, times):
        """lambda(t) for a single parameter vector at the given times."""
        theta = np.asarray(theta, dtype=float)
        times = np.asarray(times, dtype=float)
        H, _, _, valid = self._window_sums(theta[None, :], times)
        if not valid[0]:
            raise InvalidParameterError("velocity at or beyond c")
        return theta[0] * H[0] + theta[1]

    def intensity_jacobian(self, theta, times):
        """d lambda / d theta for a single parameter vector, shape (p, len(times)).

        Used by the error-bound quadrature; rows follow the parameter order.
        """
        theta = np.asarray(theta, dtype=float)
        times = np.asarray(times, dtype=float)
        H, Hp, Hv, valid = self._window_sums(theta[None, :], times,
                                             need_velocity_term=True)
        if not valid[0]:
            raise InvalidParameterError("velocity at or beyond c")
        s = theta[0]
        rows = [H[0], np.ones_like(times)]
        if self.doppler:
            v = theta[3] * _MPS_TO_MPNS
            rows.append(-s * Hp[0] * self.c / (self.c - v))
            rows.append(-s * Hv[0])
        else:
            rows.append(-s * Hp[0])
        return np.vstack(rows)

    def pulse_centers(self, theta):
        """Arrival-time centers of all pulses for a single parameter vector."""
        theta = np.asarray(theta, dtype=float)
        slope, intercept, valid = self._centers_affine(theta[None, :])
        if not valid[0]:
            raise InvalidParameterError("velocity at or beyond c")
        return slope[0] * self.pulse_times + intercept[0]

    def _check_dim(self, theta2):
        if theta2.shape[1] != self.dim:
            raise InvalidParameterError(
                f"expected {self.dim} lidar parameters, got {theta2.shape[1]}"
            )


def lidar_objective(model, lower, upper, scales=None, label=None):
    """Composite objective for lidar: the NLL plus a box constraint.

    ``lower``/``upper`` are bounds on the external parameters (S, b, tau[, v]).
    With ``scales`` given, the solver works on z = theta / scales and the box
    is rescaled accordingly.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if scales is None:
        scales = np.ones(model.dim)
    scales = np.asarray(scales, dtype=float)
    g = _prox.Indicator(lower / scales, upper / scales)

    def f_eval(z):
        return model.nll(z * scales)

    def f_grad(z):
        return model.nll_grad(z * scales) * scales

    if label is None:
        label = "lidar-doppler" if model.doppler else "lidar"
    return CompositeObjective(model.dim, f_eval, f_grad, g, label=label,
                              scales=scales, restrict_to_box=True)
