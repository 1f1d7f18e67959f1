"""Poured-weight regressors and their training stack.

Three small MLPs share one trunk design (single ReLU hidden layer, linear
scalar output) and differ in their inputs:

  multimodal      2x(19->4) tactile encoders + wrist pos/vel + EE wrench -> 16
  tactile         2x(19->4) tactile encoders + wrist pos/vel            -> 10
  proprioceptive  EE wrench + wrist pos/vel                             ->  8

The tactile encoders are linear+ReLU and do not share weights. A fourth,
training-free baseline simply reads the vertical force of the conditioned EE
wrench. Training is plain minibatch Adam on MSE with a stepwise-decaying
learning rate; everything is numpy and deterministic under a seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import COL_FZ, COL_GT, COL_TA, COL_TB, COL_WRENCH, COL_WRIST_POS, COL_WRIST_VEL, TrialLog
from .sensor_sim import ConditionedFrame

ENCODER_OUT = 4

KIND_DIMS = {"multimodal": (16, 8), "tactile": (10, 4), "proprioceptive": (8, 4)}
ANALYTICAL_FZ = "analytical_fz"
KINDS = tuple(KIND_DIMS) + (ANALYTICAL_FZ,)


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str

    def __post_init__(self):
        if self.kind not in KIND_DIMS:
            raise ValueError(f"unknown trainable estimator kind {self.kind!r}")

    @property
    def input_dim(self) -> int:
        return KIND_DIMS[self.kind][0]

    @property
    def hidden(self) -> int:
        return KIND_DIMS[self.kind][1]

    @property
    def uses_tactile(self) -> bool:
        return self.kind in ("multimodal", "tactile")

    @property
    def uses_wrench(self) -> bool:
        return self.kind in ("multimodal", "proprioceptive")


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 5000
    lr0: float = 0.005
    lr_decay: float = 0.7
    lr_decay_every: int = 125
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def learning_rate(self, epoch: int) -> float:
        return self.lr0 * self.lr_decay ** (epoch // self.lr_decay_every)

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr0": self.lr0, "lr_decay": self.lr_decay,
                "lr_decay_every": self.lr_decay_every, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps}


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _xavier(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_out, fan_in))


def raw_inputs_from_rows(rows: np.ndarray) -> dict[str, np.ndarray]:
    """Split logged frame rows into the raw input groups."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    kin = np.stack([rows[:, COL_WRIST_POS], rows[:, COL_WRIST_VEL]], axis=1)
    return {"kin": kin, "wrench": rows[:, COL_WRENCH],
            "ta": rows[:, COL_TA], "tb": rows[:, COL_TB]}


def raw_inputs_from_frame(frame: ConditionedFrame) -> dict[str, np.ndarray]:
    return {"kin": np.array([[frame.wrist_pos, frame.wrist_vel]]),
            "wrench": frame.wrench.reshape(1, 6),
            "ta": frame.tactile[0].reshape(1, -1),
            "tb": frame.tactile[1].reshape(1, -1)}


class Model:
    """One trainable estimator: optional tactile encoders plus the MLP trunk."""

    def __init__(self, spec: EstimatorSpec, params: dict[str, np.ndarray],
                 seed: int | None = None,
                 train_config: TrainConfig | None = None):
        self.spec = spec
        self.params = params
        self.seed = seed
        self.train_config = train_config

    @classmethod
    def init(cls, spec: EstimatorSpec, seed: int) -> "Model":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        if spec.uses_tactile:
            for enc in ("a", "b"):
                params[f"enc_{enc}_w"] = _xavier(rng, ENCODER_OUT, 19)
                params[f"enc_{enc}_b"] = np.zeros(ENCODER_OUT)
        params["w1"] = _xavier(rng, spec.hidden, spec.input_dim)
        params["b1"] = np.zeros(spec.hidden)
        params["w2"] = _xavier(rng, 1, spec.hidden)[0]
        params["b2"] = np.zeros(1)
        return cls(spec, params, seed=seed)

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()},
                     seed=self.seed, train_config=self.train_config)

    # -- forward ------------------------------------------------------------

    def _encode(self, raw: dict) -> tuple:
        p = self.params
        za = raw["ta"] @ p["enc_a_w"].T + p["enc_a_b"]
        zb = raw["tb"] @ p["enc_b_w"].T + p["enc_b_b"]
        return za, relu(za), zb, relu(zb)

    def features(self, raw: dict) -> np.ndarray:
        """Assemble the feature vector for this estimator kind."""
        kind = self.spec.kind
        if kind == "proprioceptive":
            return np.concatenate([raw["wrench"], raw["kin"]], axis=1)
        _, ea, _, eb = self._encode(raw)
        if kind == "tactile":
            return np.concatenate([ea, eb, raw["kin"]], axis=1)
        return np.concatenate([ea, eb, raw["kin"], raw["wrench"]], axis=1)

    def forward(self, raw: dict) -> np.ndarray:
        p = self.params
        feats = self.features(raw)
        h = relu(feats @ p["w1"].T + p["b1"])
        return h @ p["w2"] + p["b2"][0]

    def forward_backward(self, raw: dict, y: np.ndarray) -> tuple[float, dict]:
        """MSE loss and its gradient for every parameter."""
        p = self.params
        kind = self.spec.kind
        if self.spec.uses_tactile:
            za, ea, zb, eb = self._encode(raw)
            if kind == "tactile":
                feats = np.concatenate([ea, eb, raw["kin"]], axis=1)
            else:
                feats = np.concatenate([ea, eb, raw["kin"], raw["wrench"]], axis=1)
        else:
            feats = np.concatenate([raw["wrench"], raw["kin"]], axis=1)

        z1 = feats @ p["w1"].T + p["b1"]
        h = relu(z1)
        out = h @ p["w2"] + p["b2"][0]
        err = out - y
        n = y.size
        loss = float(err @ err) / n

        dout = 2.0 * err / n
        grads = {
            "w2": h.T @ dout,
            "b2": np.array([dout.sum()]),
        }
        dz1 = np.outer(dout, p["w2"])
        dz1[z1 <= 0] = 0.0
        grads["w1"] = dz1.T @ feats
        grads["b1"] = dz1.sum(axis=0)
        if self.spec.uses_tactile:
            dfeat = dz1 @ p["w1"]
            dea = dfeat[:, :ENCODER_OUT]
            deb = dfeat[:, ENCODER_OUT:2 * ENCODER_OUT]
            dza = np.where(za > 0, dea, 0.0)
            dzb = np.where(zb > 0, deb, 0.0)
            grads["enc_a_w"] = dza.T @ raw["ta"]
            grads["enc_a_b"] = dza.sum(axis=0)
            grads["enc_b_w"] = dzb.T @ raw["tb"]
            grads["enc_b_b"] = dzb.sum(axis=0)
        return loss, grads

    # -- prediction interfaces ----------------------------------------------

    def predict_rows(self, rows: np.ndarray) -> np.ndarray:
        return self.forward(raw_inputs_from_rows(rows))

    def predict_frame(self, frame: ConditionedFrame) -> float:
        return float(self.forward(raw_inputs_from_frame(frame))[0])

    __call__ = predict_frame

    # -- persistence ----------------------------------------------------------

    def to_dict(self) -> dict:
        p = self.params
        d = {
            "kind": self.spec.kind,
            "dims": {"input": self.spec.input_dim, "hidden": self.spec.hidden},
            "layers": [
                {"w": p["w1"].tolist(), "b": p["b1"].tolist()},
                {"w": [p["w2"].tolist()], "b": p["b2"].tolist()},
            ],
            "encoders": None,
            "seed": self.seed,
            "train_config": self.train_config.to_dict() if self.train_config else None,
        }
        if self.spec.uses_tactile:
            d["encoders"] = {
                "a": {"w": p["enc_a_w"].tolist(), "b": p["enc_a_b"].tolist()},
                "b": {"w": p["enc_b_w"].tolist(), "b": p["enc_b_b"].tolist()},
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        spec = EstimatorSpec(d["kind"])
        params = {
            "w1": np.asarray(d["layers"][0]["w"], dtype=float),
            "b1": np.asarray(d["layers"][0]["b"], dtype=float),
            "w2": np.asarray(d["layers"][1]["w"], dtype=float).reshape(-1),
            "b2": np.asarray(d["layers"][1]["b"], dtype=float).reshape(1),
        }
        if d.get("encoders"):
            for enc in ("a", "b"):
                params[f"enc_{enc}_w"] = np.asarray(d["encoders"][enc]["w"], dtype=float)
                params[f"enc_{enc}_b"] = np.asarray(d["encoders"][enc]["b"], dtype=float)
        tc = TrainConfig(**d["train_config"]) if d.get("train_config") else None
        model = cls(spec, params, seed=d.get("seed"), train_config=tc)
        model.validate_shapes()
        return model

    def validate_shapes(self) -> None:
        spec, p = self.spec, self.params
        if p["w1"].shape != (spec.hidden, spec.input_dim):
            raise ValueError(f"trunk weight shape {p['w1'].shape} does not match "
                             f"kind {spec.kind!r} ({spec.hidden}x{spec.input_dim})")
        for key, value in p.items():
            if not np.all(np.isfinite(value)):
                raise ValueError(f"parameter {key} contains non-finite values")

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class AnalyticalFz:
    """Training-free baseline: the conditioned vertical EE force is already
    the weight change since the baseline capture, which is the poured weight."""

    kind = ANALYTICAL_FZ

    def predict_rows(self, rows: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(rows, dtype=float))[:, COL_FZ].copy()

    def predict_frame(self, frame: ConditionedFrame) -> float:
        return float(frame.wrench[2])

    __call__ = predict_frame


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params: dict, grads: dict, lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for key, g in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            params[key] -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


@dataclass
class TrainResult:
    final: Model
    best: Model
    train_curve: list = field(default_factory=list)
    val_curve: list = field(default_factory=list)

    @property
    def best_val_mse(self) -> float:
        return min(self.val_curve)


def stack_training_data(logs: list[TrialLog]) -> tuple[dict, np.ndarray]:
    if not logs:
        raise ValueError("empty trial set")
    rows = np.concatenate([log.frames for log in logs], axis=0)
    return raw_inputs_from_rows(rows), rows[:, COL_GT].copy()


def _take(raw: dict, idx: np.ndarray) -> dict:
    return {k: v[idx] for k, v in raw.items()}


def train(train_logs: list[TrialLog], val_logs: list[TrialLog],
          spec: EstimatorSpec, cfg: TrainConfig | None = None,
          seed: int = 0, verbose: bool = False) -> TrainResult:
    """Minibatch Adam training; returns both the final weights and the
    checkpoint with the lowest validation MSE."""
    cfg = cfg or TrainConfig()
    raw, y = stack_training_data(train_logs)
    raw_val, y_val = stack_training_data(val_logs)
    n = y.size
    rng = np.random.default_rng(seed)
    model = Model.init(spec, seed=seed)
    model.train_config = cfg
    adam = Adam(model.params, cfg)
    result = TrainResult(final=model, best=model.copy())
    best_val = np.inf
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate(epoch)
        perm = rng.permutation(n)
        total = 0.0
        seen = 0
        for at in range(0, n, cfg.batch_size):
            idx = perm[at:at + cfg.batch_size]
            loss, grads = model.forward_backward(_take(raw, idx), y[idx])
            adam.update(model.params, grads, lr)
            total += loss * idx.size
            seen += idx.size
        result.train_curve.append(total / seen)
        val_err = model.forward(raw_val) - y_val
        val_mse = float(val_err @ val_err) / y_val.size
        result.val_curve.append(val_mse)
        if val_mse < best_val:
            best_val = val_mse
            result.best = model.copy()
        if verbose and (epoch % 100 == 0 or epoch == cfg.epochs - 1):
            print(f"epoch {epoch:4d} lr {lr:.5f} train {result.train_curve[-1]:.6f} "
                  f"val {val_mse:.6f}")
    return result


def evaluate_mse(predictor, logs: list[TrialLog]) -> float:
    """Mean squared error against ground truth over all frames of all trials."""
    if not logs:
        raise ValueError("empty trial set")
    rows = np.concatenate([log.frames for log in logs], axis=0)
    err = predictor.predict_rows(rows) - rows[:, COL_GT]
    return float(err @ err) / err.size


def analytical_fz(frame: ConditionedFrame) -> float:
    """Baseline poured-weight estimate from one conditioned frame."""
    return AnalyticalFz().predict_frame(frame)
