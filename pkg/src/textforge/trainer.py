"""Optimizers, the training loop with holdout selection, and checkpoints.

One root seed drives everything through fixed spawn keys: (0,) for parameter
init, (1, epoch[, source]) for batch shuffling. Shuffle streams are derived
per epoch rather than advanced across epochs, so a resumed run replays the
exact schedule of an uninterrupted one.
"""

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import binio
from .errors import CorruptFile, EmptySplit, NoGradient

F32 = np.float32

CKPT_MAGIC = b"TXFG"
CKPT_VERSION = 1


def seed_sequence(seed: int, *key):
    return np.random.SeedSequence(seed, spawn_key=key)


def derive_rng(seed: int, *key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *key)))


class SGD:
    kind = "sgd"

    def __init__(self, params, lr=0.1):
        self.params = list(params)
        self.lr = float(lr)

    def _live(self):
        live = [p for p in self.params if p.trainable and p.grad is not None]
        if not live:
            raise NoGradient("no parameter carries a gradient")
        return live

    def step(self):
        live = self._live()
        lr = F32(self.lr)
        for p in live:
            p.tensor.data = p.data - lr * p.grad
        for p in live:
            p.grad = None

    def state_payload(self):
        return {"kind": self.kind, "lr": self.lr, "state": {}}

    def load_state(self, payload):
        self.lr = float(payload["lr"])


class Adam:
    kind = "adam"

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self._moments = {}  # param name -> [m, v, t]

    _live = SGD._live

    def step(self):
        live = self._live()
        lr = F32(self.lr)
        b1 = F32(self.beta1)
        b2 = F32(self.beta2)
        one = F32(1.0)
        eps = F32(self.eps)
        for p in live:
            st = self._moments.get(p.name)
            if st is None:
                st = [np.zeros_like(p.data), np.zeros_like(p.data), 0]
                self._moments[p.name] = st
            g = p.grad
            st[2] += 1
            st[0] = b1 * st[0] + (one - b1) * g
            st[1] = b2 * st[1] + (one - b2) * (g * g)
            m_hat = st[0] / F32(1.0 - self.beta1 ** st[2])
            v_hat = st[1] / F32(1.0 - self.beta2 ** st[2])
            p.tensor.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        for p in live:
            p.grad = None

    def state_payload(self):
        state = {name: {"m": st[0], "v": st[1], "t": st[2]}
                 for name, st in self._moments.items()}
        return {"kind": self.kind, "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps, "state": state}

    def load_state(self, payload):
        self.lr = float(payload["lr"])
        self.beta1 = float(payload["beta1"])
        self.beta2 = float(payload["beta2"])
        self.eps = float(payload["eps"])
        self._moments = {name: [st["m"], st["v"], int(st["t"])]
                         for name, st in payload["state"].items()}


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    score: float
    metrics: dict = field(default_factory=dict)


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_score: float
    stopped_early: bool

    def payload(self):
        return {
            "epochs_run": len(self.history),
            "best_epoch": self.best_epoch,
            "best_score": self.best_score if self.best_epoch >= 0 else None,
            "stopped_early": self.stopped_early,
            "history": [asdict(r) for r in self.history],
        }


def _snapshot_params(model):
    return {name: p.data.copy() for name, p in model.named_parameters().items()}


def _load_params(model, saved):
    for name, p in model.named_parameters().items():
        p.data = saved[name]


def train(pipe, ckpt_path: str = "", resume: Optional[dict] = None, echo=None) -> TrainResult:
    """Run the training loop; the pipeline supplies batches and evaluation.

    Keeps the best-scoring epoch's parameters and applies them to the model
    before returning. Checkpoints (when a path is given) store the current
    parameters, so resuming reproduces the uninterrupted schedule exactly.
    """
    model = pipe.model
    opt = pipe.optimizer
    cfg = pipe.settings

    history = []
    best_epoch = -1
    best_score = float("-inf")
    best_params = _snapshot_params(model)
    start_epoch = 0
    stopped_early = False

    if resume is not None:
        start_epoch = resume["epoch"] + 1
        best_epoch = resume["best_epoch"]
        best_score = resume["best_score"]
        history = [EpochRecord(**rec) for rec in resume["history"]]
        _load_params(model, resume["params"])
        best_params = dict(resume["best_params"])
        opt.load_state(resume["optimizer"])

    for epoch in range(start_epoch, cfg.epochs):
        batches = pipe.train_batches(epoch)
        if not batches:
            raise EmptySplit("no training batches")
        total = 0.0
        for batch in batches:
            loss = pipe.train_loss(batch)
            loss.backward()
            opt.step()
            total += float(loss.data)
        score, metrics = pipe.evaluate()
        record = EpochRecord(epoch, total / len(batches), score, metrics)
        history.append(record)
        if echo:
            shown = " ".join("%s=%.4f" % (k, v) for k, v in metrics.items())
            echo("epoch %d: train_loss=%.6f score=%.4f %s" % (epoch, record.train_loss, score, shown))
        if score > best_score:
            best_score = score
            best_epoch = epoch
            best_params = _snapshot_params(model)
        if ckpt_path:
            save_checkpoint(ckpt_path, checkpoint_payload(
                pipe, opt, epoch, best_epoch, best_score, history, best_params))
        if cfg.patience > 0 and (epoch - best_epoch) >= cfg.patience:
            stopped_early = True
            break

    if best_epoch >= 0:
        _load_params(model, best_params)
    return TrainResult(history, best_epoch, best_score, stopped_early)


def checkpoint_payload(pipe, opt, epoch, best_epoch, best_score, history, best_params) -> dict:
    meta = pipe.snapshot_meta()
    return {
        "container": "checkpoint",
        "task": meta["task"],
        "config": meta["config"],
        "seed": pipe.settings.seed,
        "epoch": epoch,
        "best_epoch": best_epoch,
        "best_score": best_score,
        "history": [asdict(rec) for rec in history],
        "vocabs": meta["vocabs"],
        "labels": meta["labels"],
        "params": _snapshot_params(pipe.model),
        "best_params": best_params,
        "optimizer": opt.state_payload(),
    }


def save_checkpoint(path: str, payload: dict) -> None:
    binio.write_container(path, CKPT_MAGIC, CKPT_VERSION, payload)


def load_checkpoint(path: str) -> dict:
    payload = binio.read_container(path, CKPT_MAGIC, CKPT_VERSION)
    if not isinstance(payload, dict) or payload.get("container") != "checkpoint":
        raise CorruptFile("%s: not a checkpoint file" % path)
    return payload
