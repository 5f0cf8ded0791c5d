"""Gendered-to-neutral shape adapter.

A small fully-connected network maps the shape coefficients of a gendered
body model to coefficients of the neutral model such that both meshes agree
at shared poses.  Training exploits that, at a fixed pose, vertices are an
affine function of the shape coefficients: the Jacobian is read off by
evaluating the model at the unit basis directions.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .body_model import JOINT_GROUPS, BodyModelDef, skin
from .errors import DimensionError, DivergenceError, ValidationError

log = logging.getLogger(__name__)

_EPS = 1e-12


@dataclass
class MlpAdapter:
    """Fully-connected network ``in -> hidden -> hidden -> out``.

    Hidden layers use ReLU.  With ``skip`` the input is added to the output,
    and an optional learnable linear ``bypass`` matrix maps input to output
    alongside the hidden stack::

        y = x + bypass @ x + W2 relu(W1 relu(W0 x + b0) + b1) + b2
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    skip: bool = True
    bypass: np.ndarray | None = None

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError("adapter needs one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(f"layer {i} expects {w.shape[1]} inputs, "
                                     f"previous layer gives {self.weights[i - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {i} has non-finite parameters")
        if self.activation not in ("relu", "identity"):
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.skip and self.widths[0] != self.widths[-1]:
            raise DimensionError("skip connection needs equal input and output width")
        if self.bypass is not None:
            self.bypass = np.asarray(self.bypass, dtype=np.float64)
            if self.bypass.shape != (self.widths[-1], self.widths[0]):
                raise DimensionError(f"bypass must be {self.widths[-1]} x {self.widths[0]}")
            if not np.all(np.isfinite(self.bypass)):
                raise ValidationError("bypass has non-finite entries")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @classmethod
    def init(cls, widths: Sequence[int] = (10, 64, 64, 10), *, seed: int | None = 0,
             skip: bool = True, bypass: bool = True, activation: str = "relu") -> "MlpAdapter":
        """He-initialised hidden layers; zero output layer and bypass (identity map with skip)."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            if last:
                weights.append(np.zeros((n_out, n_in)))
            else:
                weights.append(rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_out, n_in)))
            biases.append(np.zeros(n_out))
        D = np.zeros((widths[-1], widths[0])) if bypass else None
        return cls(weights, biases, activation=activation, skip=skip, bypass=D)

    @classmethod
    def zeros(cls, widths: Sequence[int] = (10, 64, 64, 10), *, skip: bool = False) -> "MlpAdapter":
        return cls([np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])],
                   [np.zeros(o) for o in widths[1:]], skip=skip)

    def parameters(self) -> list[np.ndarray]:
        """Views of every trainable array: W0, b0, W1, b1, ..., then the bypass if present."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        if self.bypass is not None:
            out.append(self.bypass)
        return out

    def copy(self) -> "MlpAdapter":
        return MlpAdapter([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                          activation=self.activation, skip=self.skip,
                          bypass=None if self.bypass is None else self.bypass.copy())

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else z

    def forward(self, x, *, return_cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.widths[0]:
            raise DimensionError(f"adapter expects {self.widths[0]} inputs, got {x.shape[-1]}")
        acts = [x]
        h = x
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = z if i == n - 1 else self._act(z)
            acts.append(h)
        y = h + x if self.skip else h
        if self.bypass is not None:
            y = y + x @ self.bypass.T
        return (y, acts) if return_cache else y

    __call__ = forward

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients w.r.t. :meth:`parameters` given dL/dy for the cached forward pass."""
        n = len(self.weights)
        grads: list[np.ndarray] = [None] * (2 * n)
        x = acts[0].reshape(-1, acts[0].shape[-1])
        g = grad_out.reshape(-1, grad_out.shape[-1])
        g_out = g
        for i in reversed(range(n)):
            if i < n - 1 and self.activation == "relu":
                g = g * (acts[i + 1].reshape(g.shape) > 0)
            h_in = acts[i].reshape(-1, acts[i].shape[-1])
            grads[2 * i] = g.T @ h_in
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i]
        if self.bypass is not None:
            grads.append(g_out.T @ x)
        return grads

    def to_dict(self) -> dict:
        doc = {
            "widths": list(self.widths),
            "weights": [w.reshape(-1).tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "activation": self.activation,
            "skip": self.skip,
        }
        if self.bypass is not None:
            doc["bypass"] = self.bypass.reshape(-1).tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MlpAdapter":
        try:
            widths = [int(w) for w in doc["widths"]]
            weights = [np.asarray(w, dtype=np.float64).reshape(o, i)
                       for w, i, o in zip(doc["weights"], widths[:-1], widths[1:])]
            biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
            bypass = doc.get("bypass")
            if bypass is not None:
                bypass = np.asarray(bypass, dtype=np.float64).reshape(widths[-1], widths[0])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed adapter document: {exc}", code="schema") from exc
        if len(weights) != len(widths) - 1:
            raise ValidationError("adapter document has wrong layer count", code="schema")
        return cls(weights, biases, activation=doc.get("activation", "relu"),
                   skip=bool(doc.get("skip", True)), bypass=bypass)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "MlpAdapter":
        return cls.from_dict(json.loads(Path(path).read_text()))


def adapter_forward(adapter: MlpAdapter, beta_gendered) -> np.ndarray:
    return adapter.forward(beta_gendered)


def _check_pair(gendered: BodyModelDef, neutral: BodyModelDef) -> None:
    if gendered.vertex_count != neutral.vertex_count:
        raise DimensionError(
            f"models disagree on vertex count ({gendered.vertex_count} vs {neutral.vertex_count})"
        )
    if gendered.joint_count != neutral.joint_count:
        raise DimensionError("models disagree on joint count")


def shape_jacobian(model: BodyModelDef, pose) -> tuple[np.ndarray, np.ndarray]:
    """Offset (..., V, 3) and Jacobian (..., V, 3, B) of the mesh w.r.t. shape at fixed pose.

    Exact because the skinned mesh is affine in the shape coefficients.
    """
    pose = np.asarray(pose, dtype=np.float64)
    nb = model.num_betas
    probes = np.vstack([np.zeros(nb), np.eye(nb)])  # (B+1, B)
    lead = pose.shape[:-2]
    verts = skin(model, pose[..., None, :, :], np.broadcast_to(probes, lead + probes.shape))
    base = verts[..., 0, :, :]
    jac = np.moveaxis(verts[..., 1:, :, :] - base[..., None, :, :], -3, -1)
    return base, jac


@dataclass
class MeshBatch:
    """Pre-evaluated quantities for a batch of (pose, gendered beta) samples."""

    target: np.ndarray       # gendered mesh, (B, V, 3)
    base: np.ndarray         # neutral mesh at zero shape, (B, V, 3)
    jac: np.ndarray          # neutral shape Jacobian, (B, V, 3, nb)
    beta: np.ndarray         # gendered coefficients, (B, nb)

    @classmethod
    def build(cls, gendered: BodyModelDef, neutral: BodyModelDef, pose, beta) -> "MeshBatch":
        _check_pair(gendered, neutral)
        pose = np.asarray(pose, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64)
        if pose.ndim == 2:
            pose, beta = pose[None], beta[None]
        if beta.shape[-1] != gendered.num_betas:
            raise DimensionError(f"gendered model takes {gendered.num_betas} coefficients")
        target = skin(gendered, pose, beta)
        base, jac = shape_jacobian(neutral, pose)
        return cls(target, base, jac, beta)

    def residual(self, beta_neutral: np.ndarray) -> np.ndarray:
        return self.target - self.base - (self.jac @ beta_neutral[:, None, :, None])[..., 0]


def _objective(res: np.ndarray, objective: str):
    """Scalar loss and dL/dres for residuals of shape (B, V, 3)."""
    n = res.shape[0] * res.shape[1]
    if objective == "l2":
        norms = np.linalg.norm(res, axis=-1)
        loss = norms.sum() / n
        safe = np.where(norms > _EPS, norms, 1.0)
        g = np.where((norms > _EPS)[..., None], res / safe[..., None], 0.0) / n
        return loss, g
    if objective == "mse":
        return float(np.sum(res * res) / n), 2.0 * res / n
    raise ValidationError(f"unknown objective {objective!r}")


def adapter_loss(adapter: MlpAdapter, gendered: BodyModelDef, neutral: BodyModelDef,
                 theta, beta_g, *, objective: str = "l2") -> float:
    """Mean per-vertex distance (mm) between the gendered mesh and the adapted neutral mesh.

    ``theta`` may be one pose (55, 3) or a batch (B, 55, 3) with matching ``beta_g``.
    ``objective="mse"`` returns the mean squared distance instead (mm^2).
    """
    batch = MeshBatch.build(gendered, neutral, theta, beta_g)
    res = batch.residual(adapter.forward(batch.beta))
    return _objective(res, objective)[0]


def batch_loss_and_grad(adapter: MlpAdapter, batch: MeshBatch, objective: str = "l2"):
    y, acts = adapter.forward(batch.beta, return_cache=True)
    res = batch.residual(y)
    loss, g_res = _objective(res, objective)
    # res = target - base - jac @ y
    B, V, _, K = batch.jac.shape
    g_y = -np.einsum("bvk,bv->bk", batch.jac.reshape(B, V * 3, K), g_res.reshape(B, V * 3))
    return loss, adapter.backward(acts, g_y)


def adapter_gradient(adapter: MlpAdapter, gendered: BodyModelDef, neutral: BodyModelDef,
                     theta, beta_g, *, objective: str = "l2"):
    """Exact gradients of :func:`adapter_loss` w.r.t. every weight and bias.

    Returns ``(loss, grads)`` with ``grads`` aligned to
    :meth:`MlpAdapter.parameters`.  Vertices with zero
    residual contribute a zero subgradient under the ``l2`` objective.
    """
    batch = MeshBatch.build(gendered, neutral, theta, beta_g)
    return batch_loss_and_grad(adapter, batch, objective)


class GaussianPoseSampler:
    """Zero-mean Gaussian axis-angle on the body joints; everything else at rest."""

    def __init__(self, sigma: float = 0.3, joints: Sequence[int] = JOINT_GROUPS["body"],
                 joint_count: int = 55):
        if sigma < 0:
            raise ValidationError("sigma must be nonnegative")
        self.sigma = sigma
        self.joints = np.asarray(joints, dtype=np.int64)
        self.joint_count = joint_count

    def __call__(self, rng: np.random.Generator, n: int) -> np.ndarray:
        pose = np.zeros((n, self.joint_count, 3))
        pose[:, self.joints] = rng.normal(0.0, self.sigma, size=(n, len(self.joints), 3))
        return pose


@dataclass
class AdapterTrainConfig:
    iterations: int = 2000
    step: float = 3e-3
    # hidden-stack step = step * hidden_step_scale; its curvature is far larger
    hidden_step_scale: float = 0.03
    # iterations during which only the linear bypass trains
    linear_warmup: int = 200
    batch_size: int = 8
    sigma: float = 0.3
    beta_sigma: float = 1.0
    tolerance: float = 1e-9
    widths: tuple[int, ...] = (10, 64, 64, 10)
    objective: str = "mse"
    heldout: int = 32
    eval_every: int = 25
    seed: int = 0

    def __post_init__(self):
        for name in ("iterations", "step", "hidden_step_scale", "batch_size", "tolerance",
                     "heldout", "eval_every"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.linear_warmup < 0:
            raise ValidationError("linear_warmup must be nonnegative")
        if self.sigma < 0 or self.beta_sigma < 0:
            raise ValidationError("sampler spreads must be nonnegative")


@dataclass
class FitResult:
    adapter: MlpAdapter
    error_mm: float
    iterations: int
    train_loss: list[float] = field(default_factory=list)
    best_error: list[float] = field(default_factory=list)
    initial_error_mm: float = float("nan")


def fit_adapter(gendered: BodyModelDef, neutral: BodyModelDef,
                pose_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
                config: AdapterTrainConfig | None = None,
                adapter: MlpAdapter | None = None) -> FitResult:
    """Train an adapter by fixed-step gradient descent on fresh samples.

    The training objective is ``config.objective`` (mean squared vertex
    distance by default); the reported error is always the mean per-vertex
    distance in mm on a held-out sample set.  Returns the best adapter seen.
    """
    config = config or AdapterTrainConfig()
    _check_pair(gendered, neutral)
    nb = gendered.num_betas
    if nb != neutral.num_betas:
        raise DimensionError("models disagree on shape coefficient count")
    if config.widths[0] != nb or config.widths[-1] != nb:
        raise DimensionError(f"adapter widths must start and end with {nb}")
    sampler = pose_sampler or GaussianPoseSampler(config.sigma, joint_count=gendered.joint_count)

    rng = np.random.default_rng(config.seed)
    train_rng, held_rng, init_seed = rng.spawn(2) + [int(rng.integers(2**31))]
    held = MeshBatch.build(gendered, neutral, sampler(held_rng, config.heldout),
                           held_rng.normal(0.0, config.beta_sigma, size=(config.heldout, nb)))

    def heldout_error(a: MlpAdapter) -> float:
        return _objective(held.residual(a.forward(held.beta)), "l2")[0]

    model = adapter.copy() if adapter is not None else MlpAdapter.init(config.widths, seed=init_seed)
    best = model.copy()
    best_err = heldout_error(model)
    initial = best_err
    train_loss, best_hist = [], [best_err]
    hidden_step = config.step * config.hidden_step_scale
    it = 0
    if best_err < config.tolerance:
        return FitResult(best, best_err, it, train_loss, best_hist, initial)
    for it in range(1, config.iterations + 1):
        poses = sampler(train_rng, config.batch_size)
        betas = train_rng.normal(0.0, config.beta_sigma, size=(config.batch_size, nb))
        batch = MeshBatch.build(gendered, neutral, poses, betas)
        loss, grads = batch_loss_and_grad(model, batch, config.objective)
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became {loss} at iteration {it}", iteration=it)
        train_loss.append(loss)
        params = model.parameters()
        warm = model.bypass is not None and it <= config.linear_warmup
        if model.bypass is not None:
            params[-1] -= config.step * grads[-1]
            params, grads = params[:-1], grads[:-1]
        if not warm:
            for p, g in zip(params, grads):
                p -= hidden_step * g
        if it % config.eval_every == 0 or it == config.iterations:
            err = heldout_error(model)
            if not math.isfinite(err):
                raise DivergenceError(f"held-out error became {err} at iteration {it}", iteration=it)
            if err < best_err:
                best, best_err = model.copy(), err
            best_hist.append(best_err)
            if best_err < config.tolerance:
                break
    log.info("adapter fit: %d iterations, held-out error %.6g mm", it, best_err)
    return FitResult(best, best_err, it, train_loss, best_hist, initial)


class LabelPolicy(enum.Enum):
    FULL_SMPLX = "full_smplx"
    SMPL_POSE_ONLY = "smpl_pose_only"


@dataclass(frozen=True)
class SupervisionMask:
    """Which parameters of an annotation contribute to the training loss."""

    joints: np.ndarray          # (55,) bool over pose slots
    betas: bool = False
    expression: bool = False

    @property
    def joint_count(self) -> int:
        return int(self.joints.sum())


def apply_label_policy(policy: LabelPolicy | str | None, annotation: Mapping) -> SupervisionMask:
    """Supervision mask for an annotation declaring ``param_space`` of ``smpl`` or ``smplx``.

    SMPL labels only supervise the global orientation and the 21 body joints;
    the policy defaults to whatever the annotation's parameter space allows.
    """
    joint_count = 55
    if not annotation:
        return SupervisionMask(np.zeros(joint_count, dtype=bool))
    space = annotation.get("param_space")
    if space not in ("smpl", "smplx"):
        raise ValidationError(f"unknown parameter space {space!r}", code="unknown_param_space")
    if policy is None:
        policy = LabelPolicy.FULL_SMPLX if space == "smplx" else LabelPolicy.SMPL_POSE_ONLY
    policy = LabelPolicy(policy)
    if policy is LabelPolicy.FULL_SMPLX:
        if space == "smpl":
            raise ValidationError("SMPL annotations cannot supervise the full SMPL-X parameter set",
                                  code="policy_mismatch")
        return SupervisionMask(np.ones(joint_count, dtype=bool), betas=True, expression=True)
    joints = np.zeros(joint_count, dtype=bool)
    joints[list(JOINT_GROUPS["global"] + JOINT_GROUPS["body"])] = True
    return SupervisionMask(joints)
