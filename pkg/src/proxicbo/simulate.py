"""Synthetic measurement generation and estimation error bounds.

Provides the experiment definitions (:class:`ExperimentSpec`), generators
for one-bit quantized measurements and single-photon lidar detection times,
the Fisher-information error bound for the lidar model, and a simple
file format for saving generated instances.

Randomness: callers pass a ``numpy.random.Generator``; use
:func:`proxicbo.seeding.derive_rng` to build one from a master seed and a
trial index so that every trial is reproducible in isolation.
"""

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigError, FisherSingularError, InvalidParameterError
from .objectives import LidarModel, OneBitModel

log = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("onebit-sparse", "onebit-image", "lidar", "doppler")


@dataclass
class ExperimentSpec:
    """What to simulate. Fields are used per kind, see below.

    onebit-sparse : d, sparsity, m, omega, reg_scale
    onebit-image  : height, width, m, omega, reg_scale
    lidar         : n_pulses, t_a, amplitude, background, tau, pulse_sigma
    doppler       : the lidar fields plus velocity

    ``reg_scale`` sets the regularizer weight as reg_scale * ||y||^2.
    Lidar times are in nanoseconds, velocity in metres per second.
    """

    kind: str = "onebit-sparse"
    # one-bit fields
    d: int = 50
    sparsity: int = 5
    m: int = 200
    omega: float = 10.0
    reg_scale: float = 0.25
    height: int = 32
    width: int = 32
    # lidar fields
    n_pulses: int = 500
    t_a: float = 5e5
    amplitude: float = 0.1
    background: float = 1e-4
    tau: float = 234.0
    velocity: float = 15.0
    pulse_sigma: float = 0.1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.kind == "onebit-sparse" and not (0 < self.sparsity <= self.d):
            raise ConfigError("need 0 < sparsity <= d")
        if self.kind in ("lidar", "doppler"):
            if self.amplitude < 0 or self.background <= 0:
                raise ConfigError("need amplitude >= 0 and background > 0")
            if self.t_a <= 0 or self.n_pulses < 1:
                raise ConfigError("need t_a > 0 and n_pulses >= 1")

    @property
    def dim(self):
        if self.kind == "onebit-sparse":
            return self.d
        if self.kind == "onebit-image":
            return self.height * self.width
        return 4 if self.kind == "doppler" else 3

    @classmethod
    def from_config(cls, cfg):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(cfg) - known
        if extra:
            raise ConfigError(f"unknown experiment fields: {sorted(extra)}")
        return cls(**cfg)

    def to_config(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# -- image phantom -----------------------------------------------------------

# (additive value, semi-axis a, semi-axis b, center x, center y, angle deg)
# The usual head phantom ellipse table with the rescaled gray values that
# keep the image within [0, 1].
_PHANTOM_ELLIPSES = [
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
]


def shepp_logan(height, width):
    """The standard head phantom rasterized on a height x width grid."""
    ys = np.linspace(1.0, -1.0, height)
    xs = np.linspace(-1.0, 1.0, width)
    X, Y = np.meshgrid(xs, ys)
    img = np.zeros((height, width))
    for value, a, b, x0, y0, deg in _PHANTOM_ELLIPSES:
        phi = math.radians(deg)
        xr = (X - x0) * math.cos(phi) + (Y - y0) * math.sin(phi)
        yr = -(X - x0) * math.sin(phi) + (Y - y0) * math.cos(phi)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return np.clip(img, 0.0, 1.0)


# -- generators ---------------------------------------------------------------

def _quantize(omega, phase_arg):
    y = np.sign(np.sin(omega * phase_arg))
    y[y == 0] = 1.0
    return y


def gen_onebit(spec, rng):
    """Draw a one-bit instance; returns ``(OneBitModel, x_true)``.

    The sensing matrix has iid N(0, 1/d) entries, the dither u is uniform
    on [-Delta/2, Delta/2] with Delta = pi / omega, and the sign of zero is
    taken as +1.
    """
    if spec.kind == "onebit-sparse":
        d = spec.d
        x_true = np.zeros(d)
        support = rng.choice(d, size=spec.sparsity, replace=False)
        x_true[support] = rng.normal(size=spec.sparsity)
    elif spec.kind == "onebit-image":
        x_true = shepp_logan(spec.height, spec.width).ravel()
        d = x_true.size
    else:
        raise ConfigError(f"not a one-bit experiment: {spec.kind}")
    A = rng.normal(scale=1.0 / math.sqrt(d), size=(spec.m, d))
    delta = math.pi / spec.omega
    u = rng.uniform(-delta / 2.0, delta / 2.0, size=spec.m)
    y = _quantize(spec.omega, A @ x_true + u)
    reg_weight = spec.reg_scale * float(y @ y)
    model = OneBitModel(A, y, u, spec.omega, reg_weight=reg_weight)
    return model, x_true


def lidar_pulse_train(spec):
    """Emission times: a regular train of n_pulses over [0, t_a)."""
    period = spec.t_a / spec.n_pulses
    return np.arange(spec.n_pulses) * period


def lidar_truth(spec):
    if spec.kind == "doppler":
        return np.array([spec.amplitude, spec.background, spec.tau,
                         spec.velocity])
    return np.array([spec.amplitude, spec.background, spec.tau])


def gen_lidar_events(spec, rng):
    """Sample detection times; returns ``(LidarModel, theta_true)``.

    Sampling is by superposition: a Poisson(b * t_a) number of uniform
    background times, plus an independent Poisson number of Gaussian arrival
    times per pulse, with the per-pulse mean reduced by the Gaussian mass
    falling outside [0, t_a] and samples redrawn until they land inside.
    """
    if spec.kind not in ("lidar", "doppler"):
        raise ConfigError(f"not a lidar experiment: {spec.kind}")
    pulses = lidar_pulse_train(spec)
    theta = lidar_truth(spec)
    model = LidarModel(pulses, np.empty(0), spec.t_a,
                       pulse_sigma=spec.pulse_sigma,
                       doppler=spec.kind == "doppler")
    centers = model.pulse_centers(theta)
    sig = spec.pulse_sigma

    n_bg = rng.poisson(spec.background * spec.t_a)
    times = [rng.uniform(0.0, spec.t_a, size=n_bg)]
    inside = (stats.norm.cdf((spec.t_a - centers) / sig)
              - stats.norm.cdf(-centers / sig))
    counts = rng.poisson(spec.amplitude * inside)
    for center, count in zip(centers, counts):
        got = []
        while len(got) < count:
            draw = center + sig * rng.standard_normal(count - len(got))
            got.extend(draw[(draw >= 0.0) & (draw <= spec.t_a)])
        times.append(np.asarray(got))
    detections = np.sort(np.concatenate(times))
    model.detections = detections
    return model, theta


def generate(spec, rng):
    """Dispatch to the generator for the experiment kind."""
    if spec.kind in ("onebit-sparse", "onebit-image"):
        return gen_onebit(spec, rng)
    return gen_lidar_events(spec, rng)


# -- Fisher information and error bounds --------------------------------------

@dataclass
class CrbResult:
    """Fisher information and the resulting variance lower bounds."""

    fisher: np.ndarray
    crb: np.ndarray
    sqrt_crb: np.ndarray
    condition: float


def _merge_intervals(intervals):
    merged = []
    for a, b in intervals:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return merged


def _fisher_on_windows(model, theta, windows, nodes_per_window):
    roots, weights = np.polynomial.legendre.leggauss(nodes_per_window)
    p = model.dim
    fisher = np.zeros((p, p))
    for a, b in windows:
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        ts = mid + half * roots
        lam = model.intensity(theta, ts)
        jac = model.intensity_jacobian(theta, ts)
        scaled = jac * (weights * half / lam)
        fisher += scaled @ jac.T
    return fisher


def crb(model, theta, param_indices=None, rel_tol=1e-8, window_sigmas=12.0):
    """Cramer-Rao variance lower bounds for the lidar parameters.

    The Fisher matrix I_ij = int_0^{t_a} (dlam/di)(dlam/dj) / lam dt is
    integrated by Gauss-Legendre quadrature on windows around the pulse
    centers, doubling the node count until entries agree to ``rel_tol``
    relatively; away from every pulse the intensity is exactly the
    background, which contributes t_outside / b to the (b, b) entry in
    closed form. ``param_indices`` restricts estimation to a subset of
    parameters (the others treated as known); the default is all of them.
    """
    theta = np.asarray(theta, dtype=float)
    centers = model.pulse_centers(theta)
    w = window_sigmas * model.pulse_sigma
    raw = [[max(0.0, c - w), min(model.t_a, c + w)] for c in centers
           if c + w > 0.0 and c - w < model.t_a]
    merged = [(a, b) for a, b in _merge_intervals(raw) if b > a]
    covered = sum(b - a for a, b in merged)
    # keep intervals short so a fixed node count resolves every pulse
    windows = []
    for a, b in merged:
        pieces = max(1, math.ceil((b - a) / (6.0 * w)))
        edges = np.linspace(a, b, pieces + 1)
        windows.extend(zip(edges[:-1], edges[1:]))

    p = model.dim
    fisher = _fisher_on_windows(model, theta, windows, 64)
    for n in [128, 256, 512]:
        refined = _fisher_on_windows(model, theta, windows, n)
        scale = np.abs(refined) + np.abs(refined).max() * 1e-12 + 1e-300
        if np.max(np.abs(refined - fisher) / scale) <= rel_tol:
            fisher = refined
            break
        fisher = refined
    fisher[1, 1] += (model.t_a - covered) / theta[1]

    if param_indices is None:
        param_indices = list(range(p))
    sub = fisher[np.ix_(param_indices, param_indices)]
    condition = float(np.linalg.cond(sub))
    if not np.isfinite(condition) or condition > 1e15:
        raise FisherSingularError(
            f"Fisher information is numerically singular (cond={condition:.3e})")
    if condition > 1e12:
        log.warning("Fisher information is badly conditioned (cond=%.3e); "
                    "bounds may be unreliable", condition)
    bounds = np.diag(np.linalg.inv(sub)).copy()
    return CrbResult(fisher=sub, crb=bounds, sqrt_crb=np.sqrt(bounds),
                     condition=condition)


# -- instance files -----------------------------------------------------------

_FORMAT_TAG = "proxicbo-instance-v1"


def save_instance(path, model, truth):
    """Write a generated instance to one file: a JSON header line followed
    by the raw little-endian float64 array payloads in header order."""
    if isinstance(model, OneBitModel):
        kind = "onebit"
        scalars = {"omega": model.omega, "reg_weight": model.reg_weight}
        arrays = {"A": model.A, "y": model.y, "u": model.u, "truth": truth}
    elif isinstance(model, LidarModel):
        kind = "doppler" if model.doppler else "lidar"
        scalars = {"t_a": model.t_a, "pulse_sigma": model.pulse_sigma,
                   "c": model.c, "window_sigmas": model.window_sigmas}
        arrays = {"pulse_times": model.pulse_times,
                  "detections": model.detections, "truth": truth}
    else:
        raise InvalidParameterError(f"cannot save {type(model).__name__}")
    header = {
        "format": _FORMAT_TAG,
        "kind": kind,
        "scalars": scalars,
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_instance(path):
    """Read a file written by :func:`save_instance`; returns (model, truth)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != _FORMAT_TAG:
            raise ConfigError(f"{path}: not a {_FORMAT_TAG} file")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape)
    sc = header["scalars"]
    if header["kind"] == "onebit":
        model = OneBitModel(arrays["A"], arrays["y"], arrays["u"],
                            sc["omega"], reg_weight=sc["reg_weight"])
    else:
        model = LidarModel(arrays["pulse_times"], arrays["detections"],
                           sc["t_a"], pulse_sigma=sc["pulse_sigma"],
                           doppler=header["kind"] == "doppler", c=sc["c"],
                           window_sigmas=sc["window_sigmas"])
    return model, arrays["truth"]
