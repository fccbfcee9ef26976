"""Learned contribution of one basis function to a line integral.

``f(omega, s)`` approximates the line integral of the generator along the line
``{s + t omega}``.  The net has three fixed, parameter-free stages around a
small MLP:

1. an exact support gate: lines missing the support cube give exactly 0;
2. a symmetry-canonical feature map from the 6 input scalars ``(omega, s)``
   to 4 invariants (crossing point on the dominant-axis plane, lateral slopes);
3. the MLP output is divided by ``|omega_dominant|`` and clamped at 0.

Training follows the classic loop: a fixed validation set labelled once, fresh
random batches each step, Adam on the squared error, stop at a validation MSE
tolerance or a step budget.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels as K
from .bspline import BasisSpec, exact_project, support_chord
from .geometry import plane_basis

log = logging.getLogger(__name__)

INPUT_DIM = 6
FEATURE_DIM = 4
ACTIVATION = "algebraic_sigmoid"  # x / sqrt(1 + x^2)
FEATURE_MAP = "canonical-dominant-plane-v1"
DEFAULT_HIDDEN = (128, 32)
MAGIC = b"SPLNET01"
DEFAULT_NET_FILE = "contribnet_default.snet"


class NetConfigError(ValueError):
    """Inconsistent network parameters, inputs or files."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


@dataclass
class ContribNet:
    """Parameters of the contribution MLP.

    ``layer_sizes`` lists the widths of the learned layers, starting with the
    feature dimension; the public input of :func:`net_eval` is always the
    6-vector ``(omega, s)``.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = ACTIVATION
    basis_tag: str = field(default_factory=lambda: BasisSpec().tag)
    report: dict | None = None

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        if self.layer_sizes[0] != FEATURE_DIM or self.layer_sizes[-1] != 1:
            raise NetConfigError(f"layer sizes must start at {FEATURE_DIM} and end at 1")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise NetConfigError("number of weight/bias arrays does not match layer sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[i], self.layer_sizes[i + 1]) or b.shape != (w.shape[1],):
                raise NetConfigError(f"layer {i} has shape {w.shape}/{b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NetConfigError("network parameters must be finite")
        if self.activation != ACTIVATION:
            raise NetConfigError(f"unsupported activation {self.activation!r}")
        if max(self.layer_sizes) > K._MAX_WIDTH:
            raise NetConfigError(f"layer width above {K._MAX_WIDTH}")

    @classmethod
    def initialize(cls, hidden=DEFAULT_HIDDEN, seed: int = 0, basis: BasisSpec | None = None):
        """Scaled-normal hidden layers; the output layer starts at zero so an
        untrained net predicts 0."""
        rng = np.random.default_rng(seed)
        sizes = [FEATURE_DIM, *hidden, 1]
        weights = [rng.normal(size=(a, b)) / math.sqrt(a) for a, b in zip(sizes[:-2], sizes[1:-1])]
        weights.append(np.zeros((sizes[-2], 1)))
        biases = [np.zeros(b) for b in sizes[1:]]
        return cls(sizes, weights, biases, basis_tag=(basis or BasisSpec()).tag)

    @property
    def input_dim(self) -> int:
        return INPUT_DIM

    def packed(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat parameter vector and layer sizes in the kernel layout."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b]
        return np.concatenate(parts), np.asarray(self.layer_sizes, dtype=np.int64)

    def check_basis(self, basis: BasisSpec) -> None:
        if basis.tag != self.basis_tag:
            raise NetConfigError(f"net trained for {self.basis_tag!r}, volume uses {basis.tag!r}")


@dataclass
class TrainConfig:
    batch_size: int = 4096
    learning_rate: float = 2e-3
    tolerance: float = 1e-7
    val_set_size: int = 20_000
    max_steps: int = 200_000
    rng_seed: int = 0
    check_every: int = 100
    hidden: tuple = DEFAULT_HIDDEN
    # Adam moments; learning rate follows a cosine decay over max_steps
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    cosine_decay: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.val_set_size < 1 or self.max_steps < 0:
            raise NetConfigError("batch size, validation size and step budget must be positive")
        if not (self.learning_rate > 0 and self.tolerance > 0):
            raise NetConfigError("learning rate and tolerance must be positive")


@dataclass
class TrainReport:
    steps: int
    converged: bool
    train_mse: float
    val_mse: float
    val_max_abs_err: float
    elapsed_s: float
    adam: dict
    history: list = field(default_factory=list)


# -- evaluation ---------------------------------------------------------------

def _as_batch(omega, s):
    omega = np.ascontiguousarray(np.atleast_2d(np.asarray(omega, dtype=np.float64)))
    s = np.ascontiguousarray(np.atleast_2d(np.asarray(s, dtype=np.float64)))
    if omega.shape[-1] != 3 or s.shape[-1] != 3:
        raise NetConfigError(f"expected 3-vectors, got shapes {omega.shape} and {s.shape}")
    omega, s = np.broadcast_arrays(omega, s)
    return np.ascontiguousarray(omega), np.ascontiguousarray(s)


def net_eval(net: ContribNet, omega, s):
    """Predicted contribution for one line or a stack of lines."""
    scalar = np.ndim(omega) == 1 and np.ndim(s) == 1
    om, ss = _as_batch(omega, s)
    params, sizes = net.packed()
    out = K.contribution_batch(params, sizes, om, ss)
    return float(out[0]) if scalar else out


def _features(omega: np.ndarray, s: np.ndarray):
    """Vectorised twin of the kernel feature map, used by the trainer."""
    a = np.abs(omega)
    t = np.where(omega >= 0, s, -s)
    order = np.argsort(-a, axis=1, kind="stable")
    a = np.take_along_axis(a, order, axis=1)
    t = np.take_along_axis(t, order, axis=1)
    m2 = a[:, 1] / a[:, 0]
    m3 = a[:, 2] / a[:, 0]
    feat = np.stack([(t[:, 1] - t[:, 0] * m2) * K._P_SCALE,
                     (t[:, 2] - t[:, 0] * m3) * K._P_SCALE,
                     2.0 * m2 - 1.0, 2.0 * m3 - 1.0], axis=1)
    return feat, 1.0 / a[:, 0]


def _hits(omega, s):
    t_in, t_out = support_chord(omega, s)
    return t_in < t_out


# -- sampling -------------------------------------------------------------------

def sample_direction(rng: np.random.Generator, n: int | None = None):
    """Uniform direction(s) on the unit sphere (normalised Gaussian vectors)."""
    v = rng.normal(size=(1 if n is None else n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v[0] if n is None else v


def _plane_bases(omega: np.ndarray):
    e = np.eye(3)[np.argmin(np.abs(omega), axis=1)]
    u = np.cross(e, omega)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u, np.cross(u, omega)


def sample_offset(rng: np.random.Generator, omega, L: float):
    """Uniform point(s) of the disk of radius ``L`` in the plane orthogonal to ``omega``."""
    single = np.ndim(omega) == 1
    om = np.atleast_2d(np.asarray(omega, dtype=np.float64))
    n = len(om)
    r = L * np.sqrt(rng.uniform(size=n))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    if single:
        pb = plane_basis(om[0])
        u, v = pb.u[None], pb.v[None]
    else:
        u, v = _plane_bases(om)
    s = (r * np.cos(theta))[:, None] * u + (r * np.sin(theta))[:, None] * v
    return s[0] if single else s


def sample_lines(rng: np.random.Generator, n: int, L: float):
    omega = sample_direction(rng, n)
    return omega, sample_offset(rng, omega, L)


# -- training -----------------------------------------------------------------

def _act(z):
    return z / np.sqrt(1.0 + z * z)


def _dact(z):
    return (1.0 + z * z) ** -1.5


def _forward(weights, biases, x):
    hs, zs = [x], []
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = hs[-1] @ w + b
        zs.append(z)
        hs.append(_act(z) if i < len(weights) - 1 else z)
    return hs, zs


def _predict(weights, biases, omega, s):
    """Trainer-side twin of :func:`net_eval` (no kernels)."""
    out = np.zeros(len(omega))
    hit = _hits(omega, s)
    if hit.any():
        feat, scale = _features(omega[hit], s[hit])
        out[hit] = np.maximum(_forward(weights, biases, feat)[0][-1][:, 0] * scale, 0.0)
    return out


def exact_oracle(omega, s):
    """Exact integrals of stacked lines; compiled, agrees with
    :func:`~splinetomo.bspline.exact_project` to rounding."""
    return K.exact_integrals(np.ascontiguousarray(omega, dtype=np.float64),
                             np.ascontiguousarray(s, dtype=np.float64))


def train(net: ContribNet, cfg: TrainConfig, oracle: Callable = exact_oracle,
          L: float | None = None, progress: Callable | None = None):
    """Fit ``net`` (in place) to ``oracle`` and return ``(net, report)``.

    ``oracle(omega, s)`` maps stacked lines ``(B, 3), (B, 3)`` to ``(B,)``
    target integrals.  Offsets are drawn uniformly from the footprint disk of
    radius ``L``.  The validation MSE is checked before the first step and
    every ``cfg.check_every`` steps.
    """
    if L is None:
        L = BasisSpec().footprint_radius_L
    rng = np.random.default_rng(cfg.rng_seed)
    om_val, s_val = sample_lines(rng, cfg.val_set_size, L)
    y_val = np.asarray(oracle(om_val, s_val), dtype=np.float64)

    weights, biases = net.weights, net.biases
    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    history = []
    train_mse = float("nan")
    t0 = time.perf_counter()

    def validate(step):
        err = _predict(weights, biases, om_val, s_val) - y_val
        mse = float(np.mean(err * err))
        if not math.isfinite(mse):
            raise TrainingError(f"non-finite validation loss at step {step}")
        history.append((step, train_mse, mse))
        if progress is not None:
            progress(step, train_mse, mse)
        return mse, float(np.max(np.abs(err)))

    step = 0
    val_mse, val_max = validate(step)
    while val_mse > cfg.tolerance and step < cfg.max_steps:
        step += 1
        om, s = sample_lines(rng, cfg.batch_size, L)
        y = np.asarray(oracle(om, s), dtype=np.float64)
        hit = _hits(om, s)
        # lines outside the support give exactly 0 through the gate: no gradient
        resid_out = y[~hit]
        feat, scale = _features(om[hit], s[hit])
        hs, zs = _forward(weights, biases, feat)
        pred = hs[-1][:, 0] * scale
        resid = pred - y[hit]
        train_mse = float((resid @ resid + resid_out @ resid_out) / cfg.batch_size)
        if not math.isfinite(train_mse):
            raise TrainingError(f"non-finite training loss at step {step}")

        g = ((2.0 / cfg.batch_size) * resid * scale)[:, None]
        grads_w = [None] * len(weights)
        grads_b = [None] * len(weights)
        for i in reversed(range(len(weights))):
            grads_w[i] = hs[i].T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ weights[i].T) * _dact(zs[i - 1])
        grads = grads_w + grads_b

        lr = cfg.learning_rate
        if cfg.cosine_decay and cfg.max_steps > 0:
            lr *= 0.5 * (1.0 + math.cos(math.pi * step / cfg.max_steps))
        c1 = 1.0 - cfg.beta1 ** step
        c2 = 1.0 - cfg.beta2 ** step
        for j, (p, gr) in enumerate(zip(params, grads)):
            m[j] *= cfg.beta1
            m[j] += (1.0 - cfg.beta1) * gr
            v[j] *= cfg.beta2
            v[j] += (1.0 - cfg.beta2) * gr * gr
            p -= lr * (m[j] / c1) / (np.sqrt(v[j] / c2) + cfg.adam_eps)

        if step % cfg.check_every == 0 or step == cfg.max_steps:
            val_mse, val_max = validate(step)

    converged = val_mse <= cfg.tolerance
    if not converged:
        log.warning("contribution net not converged: val MSE %.3e > %.3e after %d steps",
                    val_mse, cfg.tolerance, step)
    report = TrainReport(
        steps=step,
        converged=converged,
        train_mse=train_mse,
        val_mse=val_mse,
        val_max_abs_err=val_max,
        elapsed_s=time.perf_counter() - t0,
        adam={"learning_rate": cfg.learning_rate, "beta1": cfg.beta1, "beta2": cfg.beta2,
              "eps": cfg.adam_eps, "cosine_decay": cfg.cosine_decay,
              "batch_size": cfg.batch_size, "tolerance": cfg.tolerance,
              "val_set_size": cfg.val_set_size, "max_steps": cfg.max_steps,
              "rng_seed": cfg.rng_seed},
        history=history,
    )
    net.report = {k: val for k, val in asdict(report).items() if k != "history"}
    return net, report


def quality_gate(net: ContribNet, n: int = 10_000, seed: int = 12345, L: float | None = None):
    """RMSE and max absolute error of ``net_eval`` against the exact integral on
    ``n`` fresh lines drawn like the training data."""
    L = BasisSpec().footprint_radius_L if L is None else L
    om, s = sample_lines(np.random.default_rng(seed), n, L)
    err = net_eval(net, om, s) - exact_project(om, s)
    return float(np.sqrt(np.mean(err * err))), float(np.max(np.abs(err)))


def symmetry_audit(net: ContribNet, n: int = 10_000, seed: int = 7, L: float | None = None):
    """Statistics of ``|f(omega, s) - f(-omega, s)|``; the true integral is symmetric."""
    L = BasisSpec().footprint_radius_L if L is None else L
    om, s = sample_lines(np.random.default_rng(seed), n, L)
    d = np.abs(net_eval(net, om, s) - net_eval(net, -om, s))
    return {"mean": float(d.mean()), "max": float(d.max())}


# -- persistence ----------------------------------------------------------------

def save_net(net: ContribNet, path) -> None:
    """Magic, header length (uint64 LE), JSON header, float64 LE parameter block."""
    header = json.dumps({
        "layer_sizes": net.layer_sizes,
        "activation": net.activation,
        "basis_tag": net.basis_tag,
        "input_dim": INPUT_DIM,
        "feature_map": FEATURE_MAP,
        "report": net.report,
    }, sort_keys=True).encode()
    params, _ = net.packed()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(params.astype("<f8").tobytes())


def _parse(blob: bytes, origin: str) -> ContribNet:
    if blob[:8] != MAGIC:
        raise NetConfigError(f"{origin}: not a contribution-net file")
    try:
        (n,) = struct.unpack("<Q", blob[8:16])
        header = json.loads(blob[16:16 + n].decode())
        sizes = [int(x) for x in header["layer_sizes"]]
    except (struct.error, ValueError, KeyError) as exc:
        raise NetConfigError(f"{origin}: corrupted header ({exc})") from None
    if header.get("feature_map") != FEATURE_MAP:
        raise NetConfigError(f"{origin}: unknown feature map {header.get('feature_map')!r}")
    body = blob[16 + n:]
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if len(body) != 8 * expected:
        raise NetConfigError(f"{origin}: parameter block has {len(body)} bytes, "
                             f"expected {8 * expected}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    weights, biases, off = [], [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[off:off + a * b].reshape(a, b).copy())
        off += a * b
        biases.append(flat[off:off + b].copy())
        off += b
    return ContribNet(sizes, weights, biases, activation=header["activation"],
                      basis_tag=header["basis_tag"], report=header.get("report"))


def load_net(path) -> ContribNet:
    return _parse(Path(path).read_bytes(), str(path))


@lru_cache(maxsize=1)
def default_net() -> ContribNet:
    """The shipped net; its ``report`` records how it was trained."""
    ref = resources.files("splinetomo") / "data" / DEFAULT_NET_FILE
    return _parse(ref.read_bytes(), DEFAULT_NET_FILE)
