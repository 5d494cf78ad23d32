"""Operator-learning generators: z -> [m, d(x)] at arbitrary coordinates.

A :class:`Generator` owns one head for the parameters ``m`` and one for the
response field ``d``. Field heads evaluate at whatever coordinates they are
given (vanilla DeepONet and POD-DeepONet); the plain-FNN head and the
parameter head produce a fixed-length vector.

Heads work in standardized units; :class:`Standardizer` maps back to
physical values. Fixed-length vectors are standardized per dimension, fields
with one scalar shift/scale so that unseen coordinates remain meaningful.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .nn import AdamState, FnnParams, adam_step, fnn_forward, param_gradients

log = logging.getLogger(__name__)

BRANCH_HIDDEN = (64, 64, 64)
TRUNK_HIDDEN = (64, 64, 64)
PARAM_HIDDEN = (32, 32)
PLAIN_HIDDEN = (32, 32, 32, 32)
P_OUTPUTS = 10


# -- joint vector layout ------------------------------------------------------
@dataclass(frozen=True)
class JointLayout:
    """``a = [m, d]``: parameters first, then responses."""

    n_m: int
    n_d: int

    @property
    def size(self):
        return self.n_m + self.n_d

    def assemble(self, m, d):
        m = np.asarray(m, dtype=np.float64)
        d = np.asarray(d, dtype=np.float64)
        if m.shape[-1] != self.n_m or d.shape[-1] != self.n_d:
            raise ValueError(
                f"expected m/d lengths {self.n_m}/{self.n_d}, got {m.shape[-1]}/{d.shape[-1]}"
            )
        return np.concatenate([m, d], axis=-1)

    def t_m(self, a):
        return np.asarray(a)[..., : self.n_m]

    def t_d(self, a):
        return np.asarray(a)[..., self.n_m :]


def assemble_joint(m, d):
    """Concatenate ``[m, d]``; returns the joint vector and its layout."""
    layout = JointLayout(np.shape(m)[-1], np.shape(d)[-1])
    return layout.assemble(m, d), layout


# -- POD --------------------------------------------------------------------
@dataclass
class PodBasis:
    mean: np.ndarray  # (N,)
    modes: np.ndarray  # (N, p), orthonormal columns
    energies: np.ndarray  # squared singular values / (S - 1), all of them
    coords: np.ndarray = None

    @property
    def n_modes(self):
        return self.modes.shape[1]

    def energy_fraction(self):
        total = self.energies.sum()
        if total == 0:
            return np.zeros_like(self.energies)
        return self.energies / total

    def project(self, snapshots):
        return (np.asarray(snapshots) - self.mean) @ self.modes

    def reconstruct(self, coeffs):
        return np.asarray(coeffs) @ self.modes.T + self.mean


def compute_pod(snapshots, n_modes=None, coords=None):
    """Mean and leading left singular directions of the centered snapshots.

    ``snapshots`` is (S, N), one snapshot per row.
    """
    X = np.asarray(snapshots, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two snapshots as rows of a 2-D array")
    mean = X.mean(axis=0)
    # Rows are snapshots, so spatial modes are the right singular vectors of X - mean.
    _, svals, vt = np.linalg.svd(X - mean, full_matrices=False)
    energies = svals**2 / (X.shape[0] - 1)
    p = len(svals) if n_modes is None else min(n_modes, len(svals))
    modes = vt[:p].T.copy()
    # Fix the sign so results are reproducible across LAPACK builds.
    flip = np.sign(modes[np.argmax(np.abs(modes), axis=0), np.arange(p)])
    flip[flip == 0] = 1.0
    modes *= flip
    return PodBasis(mean, modes, energies, None if coords is None else np.asarray(coords))


@dataclass
class TrunkSurrogate:
    """Networks x -> (phi_1..phi_p)(x) and x -> mu(x), frozen after fitting."""

    modes_net: FnnParams
    mean_net: FnnParams
    frozen: bool = True
    mse: float = float("nan")
    coord_shift: np.ndarray = 0.0
    coord_scale: np.ndarray = 1.0

    def _x(self, coords):
        return (_points(coords) - self.coord_shift) / self.coord_scale

    def modes(self, coords, tape=None):
        return fnn_forward(self.modes_net, self._x(coords), tape)

    def mean(self, coords, tape=None):
        return fnn_forward(self.mean_net, self._x(coords), tape)

    def arrays(self):
        return self.modes_net.arrays() + self.mean_net.arrays()


@dataclass
class SurrogateConfig:
    hidden: tuple = TRUNK_HIDDEN
    activation: str = "tanh"
    lr: float = 3e-3
    final_lr_factor: float = 0.01
    max_iters: int = 30000
    threshold: float = 1e-6
    check_every: int = 250
    seed: int = 0


def _fit_regression(net, X, Y, cfg, label):
    # Start from the best constant predictor; hidden layers keep their random init.
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = Y.mean(axis=0)
    state = AdamState(lr=cfg.lr, beta1=0.9, beta2=0.999)
    arrays = net.arrays()
    mse = np.inf
    for it in range(cfg.max_iters):
        state.lr = cfg.lr * cfg.final_lr_factor ** (it / cfg.max_iters)
        tape = Tape()
        pred = fnn_forward(net, X, tape)
        loss = tape.mean(tape.square(pred - Y))
        grads = param_gradients(tape, loss, net)
        mse = float(loss.value)
        if mse < cfg.threshold and it % cfg.check_every == 0:
            break
        adam_step(state, arrays, grads)
    else:
        mse = float(np.mean((fnn_forward(net, X) - Y) ** 2))
    if mse >= cfg.threshold:
        log.warning("%s surrogate reached MSE %.3e (threshold %.1e)", label, mse, cfg.threshold)
    return mse


def fit_trunk_surrogates(basis, coords, config=None):
    """Regress the POD modes and mean on their coordinates with Adam, then freeze.

    Returns a :class:`TrunkSurrogate` whose ``mse`` is the larger of the two
    fits' final mean squared errors.
    """
    cfg = config or SurrogateConfig()
    coords = _points(coords)
    if len(coords) != basis.modes.shape[0]:
        raise ValueError("one coordinate per POD grid point required")
    rng = np.random.default_rng(cfg.seed)
    dim = coords.shape[1]
    shift, scale = coord_normalization(coords)
    x = (coords - shift) / scale
    modes_net = FnnParams.init([dim, *cfg.hidden, basis.n_modes], rng, cfg.activation)
    mean_net = FnnParams.init([dim, *cfg.hidden, 1], rng, cfg.activation)
    mse_modes = _fit_regression(modes_net, x, basis.modes, cfg, "mode")
    mse_mean = _fit_regression(mean_net, x, basis.mean[:, None], cfg, "mean")
    return TrunkSurrogate(modes_net, mean_net, True, max(mse_modes, mse_mean), shift, scale)


def coord_normalization(coords):
    """Shift/scale mapping the bounding box of ``coords`` onto [-1, 1] per axis."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    half = np.where(hi > lo, 0.5 * (hi - lo), 1.0)
    return 0.5 * (lo + hi), half


# -- heads ------------------------------------------------------------------
class ParamHead:
    """FNN z -> fixed-length vector; coordinates are not used."""

    kind = "param"

    def __init__(self, net):
        self.net = net

    @classmethod
    def init(cls, latent_dim, n_out, rng, hidden=PARAM_HIDDEN, activation="leaky_relu"):
        return cls(FnnParams.init([latent_dim, *hidden, n_out], rng, activation))

    def forward(self, z, coords=None, tape=None):
        return fnn_forward(self.net, z, tape)

    def parameters(self):
        return self.net.arrays()

    def nets(self):
        return {"net": self.net}


class PlainFnnHead(ParamHead):
    """Fixed-resolution field: FNN z -> values at the training coordinates."""

    kind = "plain"

    @classmethod
    def init(cls, latent_dim, n_out, rng, hidden=PLAIN_HIDDEN, activation="leaky_relu"):
        return cls(FnnParams.init([latent_dim, *hidden, n_out], rng, activation))

    def forward(self, z, coords=None, tape=None):
        if coords is not None and len(coords) != self.net.out_dim:
            raise ValueError("plain FNN head only evaluates at its training resolution")
        return fnn_forward(self.net, z, tape)


class VanillaHead:
    """``G(z)(x) = sum_k b_k(z) t_k(x) + b0`` with trainable branch and trunk."""

    kind = "vanilla"

    def __init__(self, branch, trunk, b0, coord_shift=0.0, coord_scale=1.0):
        if branch.out_dim != trunk.out_dim:
            raise ValueError("branch and trunk must have the same number of outputs")
        self.branch = branch
        self.trunk = trunk
        self.b0 = np.asarray(b0, dtype=np.float64).reshape(1)
        self.coord_shift = np.asarray(coord_shift, dtype=np.float64)
        self.coord_scale = np.asarray(coord_scale, dtype=np.float64)

    @classmethod
    def init(cls, latent_dim, coords, rng, p=P_OUTPUTS):
        """``coords`` are the training coordinates; they fix the input normalization."""
        shift, scale = coord_normalization(coords)
        branch = FnnParams.init([latent_dim, *BRANCH_HIDDEN, p], rng, "leaky_relu")
        trunk = FnnParams.init([len(shift), *TRUNK_HIDDEN, p], rng, "tanh")
        return cls(branch, trunk, np.zeros(1), shift, scale)

    def forward(self, z, coords, tape=None):
        coords = (_points(coords) - self.coord_shift) / self.coord_scale
        if tape is None:
            return fnn_forward(self.branch, z) @ fnn_forward(self.trunk, coords).T + self.b0
        b = fnn_forward(self.branch, z, tape)
        t = fnn_forward(self.trunk, coords, tape)
        return tape.matmul(b, tape.transpose(t)) + tape.param(self.b0)

    def parameters(self):
        return self.branch.arrays() + self.trunk.arrays() + [self.b0]

    def nets(self):
        return {"branch": self.branch, "trunk": self.trunk}


class PodHead:
    """``G(z)(x) = sum_k b_k(z) phi_k(x) + mu(x)`` with a frozen trunk surrogate."""

    kind = "pod"

    def __init__(self, branch, surrogate):
        if branch.out_dim != surrogate.modes_net.out_dim:
            raise ValueError("branch outputs must match the number of POD modes")
        self.branch = branch
        self.surrogate = surrogate

    @classmethod
    def init(cls, latent_dim, surrogate, rng):
        p = surrogate.modes_net.out_dim
        return cls(FnnParams.init([latent_dim, *BRANCH_HIDDEN, p], rng, "leaky_relu"), surrogate)

    def forward(self, z, coords, tape=None):
        coords = _points(coords)
        if tape is None:
            phi = self.surrogate.modes(coords)
            mu = self.surrogate.mean(coords)[:, 0]
            return fnn_forward(self.branch, z) @ phi.T + mu
        # Frozen surrogate values enter the graph as constants.
        if self.surrogate.frozen:
            phi = tape.constant(self.surrogate.modes(coords))
            mu = tape.constant(self.surrogate.mean(coords).reshape(1, -1))
        else:
            phi = self.surrogate.modes(coords, tape)
            mu = tape.reshape(self.surrogate.mean(coords, tape), (1, len(coords)))
        b = fnn_forward(self.branch, z, tape)
        return tape.matmul(b, tape.transpose(phi)) + mu

    def parameters(self):
        own = self.branch.arrays()
        return own if self.surrogate.frozen else own + self.surrogate.arrays()

    def nets(self):
        return {
            "branch": self.branch,
            "modes": self.surrogate.modes_net,
            "mean": self.surrogate.mean_net,
        }


HEAD_KINDS = {"param": ParamHead, "plain": PlainFnnHead, "vanilla": VanillaHead, "pod": PodHead}
FIELD_KINDS = ("vanilla", "pod")


@dataclass
class Standardizer:
    """Affine maps between physical and standardized units for m and d."""

    m_shift: np.ndarray
    m_scale: np.ndarray
    d_shift: np.ndarray
    d_scale: np.ndarray

    @classmethod
    def identity(cls, per_dim_m=1, per_dim_d=1):
        return cls(np.zeros(per_dim_m), np.ones(per_dim_m), np.zeros(per_dim_d), np.ones(per_dim_d))

    @classmethod
    def fit(cls, params, responses, m_per_dim=True, d_per_dim=False):
        def stats(x, per_dim):
            if per_dim:
                sd = x.std(axis=0)
                return x.mean(axis=0), np.where(sd > 0, sd, 1.0)
            sd = x.std()
            return np.array([x.mean()]), np.array([sd if sd > 0 else 1.0])

        m_shift, m_scale = stats(np.asarray(params, float), m_per_dim)
        d_shift, d_scale = stats(np.asarray(responses, float), d_per_dim)
        return cls(m_shift, m_scale, d_shift, d_scale)

    def to_std(self, m, d):
        return (m - self.m_shift) / self.m_scale, (d - self.d_shift) / self.d_scale

    def to_phys(self, m, d):
        return m * self.m_scale + self.m_shift, d * self.d_scale + self.d_shift

    def as_dict(self):
        return {k: getattr(self, k).tolist() for k in ("m_shift", "m_scale", "d_shift", "d_scale")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("m_shift", "m_scale", "d_shift", "d_scale")))


@dataclass
class Generator:
    """Parameter head and response head sharing one latent vector."""

    latent_dim: int
    param_head: object
    response_head: object
    scaler: Standardizer
    param_coords: np.ndarray = None
    field_names: tuple = ("m", "d")
    meta: dict = field(default_factory=dict)

    def parameters(self):
        return self.param_head.parameters() + self.response_head.parameters()

    def _check(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.latent_dim:
            raise ValueError(f"latent vectors must have length {self.latent_dim}")
        return z

    def forward_std(self, z, coords, tape=None):
        """Standardized ``(m, d)`` for a batch of latent vectors (rows of ``z``)."""
        if tape is None:
            z = self._check(z)
        m = self.param_head.forward(z, self.param_coords, tape)
        d = self.response_head.forward(z, coords, tape)
        return m, d

    def joint_std(self, z, coords, tape=None):
        m, d = self.forward_std(z, coords, tape)
        if tape is None:
            return np.concatenate([m, d], axis=1)
        return tape.concat([m, d], axis=1)

    def __call__(self, z, coords):
        """Physical ``(m, d)``; rows correspond to rows of ``z``."""
        m, d = self.forward_std(z, coords)
        return self.scaler.to_phys(m, d)

    def forward_tape(self, tape, z, coords):
        """Physical ``(m, d)`` as tape nodes; ``z`` may be a Node."""
        m, d = self.forward_std(z, coords, tape)
        s = self.scaler
        m = m * tape.constant(s.m_scale) + tape.constant(s.m_shift)
        d = d * tape.constant(s.d_scale) + tape.constant(s.d_shift)
        return m, d

    def frozen_arrays(self):
        out = []
        for head in (self.param_head, self.response_head):
            if isinstance(head, PodHead) and head.surrogate.frozen:
                out += head.surrogate.arrays()
        return out


def build_generator(
    latent_dim,
    n_params,
    coords,
    rng,
    scaler,
    response_kind="vanilla",
    param_kind="param",
    response_surrogate=None,
    param_surrogate=None,
    param_coords=None,
    n_responses=None,
    param_activation="leaky_relu",
    p=P_OUTPUTS,
):
    """Assemble a generator from head kinds.

    ``param_kind`` is "param" for a vector of independent parameters or a
    field kind ("vanilla"/"pod") when the parameter is itself a field sampled
    at ``param_coords``.
    """
    if param_kind == "param":
        m_head = ParamHead.init(latent_dim, n_params, rng, activation=param_activation)
    elif param_kind == "vanilla":
        m_head = VanillaHead.init(latent_dim, _points(param_coords), rng, p)
    elif param_kind == "pod":
        m_head = PodHead.init(latent_dim, param_surrogate, rng)
    else:
        raise ValueError(f"unknown parameter head {param_kind!r}")

    if response_kind == "vanilla":
        d_head = VanillaHead.init(latent_dim, _points(coords), rng, p)
    elif response_kind == "pod":
        d_head = PodHead.init(latent_dim, response_surrogate, rng)
    elif response_kind == "plain":
        d_head = PlainFnnHead.init(latent_dim, n_responses, rng)
    else:
        raise ValueError(f"unknown response head {response_kind!r}")
    return Generator(
        latent_dim, m_head, d_head, scaler, None if param_coords is None else _points(param_coords)
    )


def _points(coords):
    coords = np.asarray(coords, dtype=np.float64)
    return coords[:, None] if coords.ndim == 1 else coords


# -- serialization ----------------------------------------------------------
def _net_meta(net):
    return {
        "sizes": net.sizes,
        "activation": net.activation,
        "slope": net.slope,
        "final_activation": net.final_activation,
    }


def _net_from(meta, arrays, prefix):
    n = len(meta["sizes"]) - 1
    weights = [arrays[f"{prefix}.W{k}"] for k in range(n)]
    biases = [arrays[f"{prefix}.b{k}"] for k in range(n)]
    return FnnParams(weights, biases, meta["activation"], meta["slope"], meta["final_activation"])


def _head_state(head, name):
    meta = {"kind": head.kind, "nets": {}}
    arrays = {}
    for key, net in head.nets().items():
        meta["nets"][key] = _net_meta(net)
        for k, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}.{key}.W{k}"] = w
            arrays[f"{name}.{key}.b{k}"] = b
    if isinstance(head, VanillaHead):
        arrays[f"{name}.b0"] = head.b0
        arrays[f"{name}.coord_shift"] = np.atleast_1d(head.coord_shift)
        arrays[f"{name}.coord_scale"] = np.atleast_1d(head.coord_scale)
    if isinstance(head, PodHead):
        meta["frozen"] = head.surrogate.frozen
        meta["surrogate_mse"] = head.surrogate.mse
        arrays[f"{name}.coord_shift"] = np.atleast_1d(head.surrogate.coord_shift)
        arrays[f"{name}.coord_scale"] = np.atleast_1d(head.surrogate.coord_scale)
    return meta, arrays


def _head_from(meta, arrays, name):
    nets = {k: _net_from(m, arrays, f"{name}.{k}") for k, m in meta["nets"].items()}
    kind = meta["kind"]
    if kind in ("param", "plain"):
        return HEAD_KINDS[kind](nets["net"])
    shift, scale = arrays[f"{name}.coord_shift"], arrays[f"{name}.coord_scale"]
    if kind == "vanilla":
        return VanillaHead(nets["branch"], nets["trunk"], arrays[f"{name}.b0"], shift, scale)
    surrogate = TrunkSurrogate(
        nets["modes"], nets["mean"], meta["frozen"], meta["surrogate_mse"], shift, scale
    )
    return PodHead(nets["branch"], surrogate)


def generator_state(gen):
    """``(meta, named_arrays)`` suitable for :func:`olgan.io.save_checkpoint`."""
    m_meta, m_arrays = _head_state(gen.param_head, "param_head")
    d_meta, d_arrays = _head_state(gen.response_head, "response_head")
    meta = {
        "model": "generator",
        "latent_dim": gen.latent_dim,
        "param_head": m_meta,
        "response_head": d_meta,
        "field_names": list(gen.field_names),
        "standardization": gen.scaler.as_dict(),
        "extra": gen.meta,
    }
    arrays = {**m_arrays, **d_arrays}
    if gen.param_coords is not None:
        arrays["param_coords"] = gen.param_coords
    return meta, arrays


def generator_from_state(meta, arrays):
    return Generator(
        meta["latent_dim"],
        _head_from(meta["param_head"], arrays, "param_head"),
        _head_from(meta["response_head"], arrays, "response_head"),
        Standardizer.from_dict(meta["standardization"]),
        arrays.get("param_coords"),
        tuple(meta.get("field_names", ("m", "d"))),
        meta.get("extra", {}),
    )
