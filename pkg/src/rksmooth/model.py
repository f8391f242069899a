"""Dense neural-ODE classifier: head -> ODE block(s) -> linear classifier.

All weights live in one flat float64 vector ``theta``; the per-layer arrays
returned by :meth:`NeuralODEModel.layers` are views into it, so optimizers
and checkpoints only ever deal with the flat vector.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import CheckpointError, LabelRangeError, NonFiniteStateError
from .integrate import IntegrationSpec, check_weights, integrate, integrate_ensemble
from .tableau import ButcherTableau

CHECKPOINT_VERSION = 1

ACTIVATIONS = {
    "gelu": ad.gelu,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class SolverEnsemble:
    """Several tableaux on a shared grid whose trajectories are averaged."""

    tableaux: tuple[ButcherTableau, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "tableaux", tuple(self.tableaux))
        object.__setattr__(self, "weights", tuple(float(w) for w in check_weights(self.weights)))
        if len(self.tableaux) != len(self.weights):
            raise ValueError("one weight per ensemble member required")

    @property
    def stages(self) -> int:
        return sum(t.stages for t in self.tableaux)


Solver = Union[ButcherTableau, SolverEnsemble]


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 2
    num_classes: int = 2
    state_dim: int = 32
    hidden_dim: int = 64
    n_blocks: int = 1
    activation: str = "gelu"
    head_activation: str = "gelu"
    zero_init_rhs: bool = False
    n_steps: int = 8
    t0: float = 0.0
    t1: float = 1.0

    def __post_init__(self):
        for name in ("activation", "head_activation"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ValueError(f"{name} must be one of {sorted(ACTIVATIONS)}")
        for name in ("input_dim", "num_classes", "state_dim", "hidden_dim", "n_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0")

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        d, H = self.state_dim, self.hidden_dim
        shapes = [("head.w", (self.input_dim, d)), ("head.b", (d,))]
        for k in range(self.n_blocks):
            shapes += [
                (f"rhs{k}.w1", (d + 1, H)),
                (f"rhs{k}.b1", (H,)),
                (f"rhs{k}.w2", (H, d)),
                (f"rhs{k}.b2", (d,)),
            ]
        shapes += [("cls.w", (d, self.num_classes)), ("cls.b", (self.num_classes,))]
        return shapes

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout())


class NeuralODEModel:
    def __init__(self, config: ModelConfig, theta: np.ndarray | None = None, seed: int = 0):
        self.config = config
        self.seed = seed
        self.rhs_calls = 0
        if theta is None:
            theta = init_params(config, seed)
        theta = np.array(theta, dtype=np.float64)
        if theta.shape != (config.n_params,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({config.n_params},)")
        self.theta = theta

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @theta.setter
    def theta(self, value: np.ndarray):
        self._theta = np.ascontiguousarray(value, dtype=np.float64)
        self._views = _split(self._theta, self.config.layout())

    def layers(self) -> dict[str, np.ndarray]:
        return self._views

    def copy(self) -> "NeuralODEModel":
        return NeuralODEModel(self.config, self.theta.copy(), self.seed)

    # --- forward ------------------------------------------------------------

    def _rhs(self, w1, b1, w2, b2):
        act = ACTIVATIONS[self.config.activation]

        def f(t, z):
            self.rhs_calls += 1
            tcol = np.full((z.shape[0], 1), t)
            hidden = act(ad.concat([z, tcol]) @ w1 + b1)
            return hidden @ w2 + b2

        return f

    def _graph(self, x: Tensor, p: dict[str, Tensor], solver: Solver) -> Tensor:
        cfg = self.config
        z = ACTIVATIONS[cfg.head_activation](x @ p["head.w"] + p["head.b"])
        for k in range(cfg.n_blocks):
            f = self._rhs(p[f"rhs{k}.w1"], p[f"rhs{k}.b1"], p[f"rhs{k}.w2"], p[f"rhs{k}.b2"])
            z = self._ode_block(f, z, solver)
        return z @ p["cls.w"] + p["cls.b"]

    def _ode_block(self, f, z0, solver: Solver):
        cfg = self.config
        if isinstance(solver, SolverEnsemble):
            specs = [IntegrationSpec(t, cfg.t0, cfg.t1, cfg.n_steps) for t in solver.tableaux]
            return integrate_ensemble(f, specs, solver.weights, z0).final
        return integrate(f, IntegrationSpec(solver, cfg.t0, cfg.t1, cfg.n_steps), z0).final

    def forward(self, x, solver: Solver, tape: Tape | None = None, wrt: str = "theta") -> Tensor:
        """Logits for a batch ``x`` of shape ``(batch, input_dim)``.

        With a ``tape``, either the weights (``wrt="theta"``) or the inputs
        (``wrt="input"``) are recorded as differentiable leaves; the other
        side is held constant.
        """
        return self._forward(x, solver, tape, wrt)[0]

    def _forward(self, x, solver, tape, wrt):
        if wrt not in ("theta", "input"):
            raise ValueError(f"wrt must be 'theta' or 'input', got {wrt!r}")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"inputs must have shape (batch, {self.config.input_dim}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError("non-finite model input")
        if tape is not None and wrt == "theta":
            params = {k: tape.variable(v) for k, v in self._views.items()}
        else:
            params = {k: Tensor(v) for k, v in self._views.items()}
        xt = tape.variable(x) if tape is not None and wrt == "input" else Tensor(x)
        return self._graph(xt, params, solver), params, xt

    def logits(self, x, solver: Solver) -> np.ndarray:
        return self.forward(x, solver).value

    def _check_labels(self, labels, n):
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.config.num_classes):
            raise LabelRangeError(
                f"labels must lie in [0, {self.config.num_classes}), "
                f"got range [{labels.min()}, {labels.max()}]"
            )
        return labels.astype(np.int64)

    def loss_and_grad(self, x, labels, solver: Solver) -> tuple[float, np.ndarray]:
        """Mean cross-entropy and its gradient with respect to ``theta``."""
        labels = self._check_labels(labels, np.shape(x)[0])
        tape = Tape()
        logits, params, _ = self._forward(x, solver, tape, "theta")
        loss = ad.softmax_cross_entropy(logits, labels)
        ad.backward(tape, loss)
        grad = np.concatenate([params[k].grad.reshape(-1) for k, _ in self.config.layout()])
        return float(loss.value), grad

    def loss(self, x, labels, solver: Solver) -> float:
        labels = self._check_labels(labels, np.shape(x)[0])
        return float(ad.softmax_cross_entropy(self.forward(x, solver), labels).value)

    def input_grad(self, x, labels, solver: Solver) -> tuple[float, np.ndarray]:
        """Loss and its gradient with respect to the inputs (weights frozen)."""
        labels = self._check_labels(labels, np.shape(x)[0])
        tape = Tape()
        logits, _, xt = self._forward(x, solver, tape, "input")
        loss = ad.softmax_cross_entropy(logits, labels)
        ad.backward(tape, loss)
        return float(loss.value), xt.grad

    def predict(self, x, solver: Solver) -> np.ndarray:
        """Argmax class; ties go to the lowest index."""
        return np.argmax(self.logits(x, solver), axis=1)

    # --- persistence --------------------------------------------------------

    def to_checkpoint(self, strategy: dict | None = None) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "architecture": asdict(self.config),
            "seed": self.seed,
            "strategy": strategy,
            "theta": [float(v) for v in self.theta],
        }

    @classmethod
    def from_checkpoint(cls, doc: dict) -> "NeuralODEModel":
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
        config = ModelConfig(**doc["architecture"])
        return cls(config, np.array(doc["theta"], dtype=np.float64), doc.get("seed", 0))


def init_params(config: ModelConfig, seed: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer from a seeded generator."""
    rng = np.random.default_rng(seed)
    parts = []
    fan_in = {"head": config.input_dim, "cls": config.state_dim}
    for name, shape in config.layout():
        layer, kind = name.split(".")
        if layer.startswith("rhs"):
            fi = config.state_dim + 1 if kind in ("w1", "b1") else config.hidden_dim
        else:
            fi = fan_in[layer]
        bound = 1.0 / np.sqrt(fi)
        values = rng.uniform(-bound, bound, size=shape)
        if config.zero_init_rhs and layer.startswith("rhs") and kind in ("w2", "b2"):
            values = np.zeros(shape)
        parts.append(values.reshape(-1))
    return np.concatenate(parts)


def _split(theta: np.ndarray, layout: Sequence[tuple[str, tuple[int, ...]]]) -> dict[str, np.ndarray]:
    views, pos = {}, 0
    for name, shape in layout:
        n = int(np.prod(shape))
        views[name] = theta[pos:pos + n].reshape(shape)
        pos += n
    return views


def save_checkpoint(path, model: NeuralODEModel, strategy: dict | None = None) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    Path(path).write_text(json.dumps(model.to_checkpoint(strategy)))


def load_checkpoint(path) -> tuple[NeuralODEModel, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text())
    return NeuralODEModel.from_checkpoint(doc), doc
