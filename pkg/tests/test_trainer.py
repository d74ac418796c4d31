"""Optimizer arithmetic, the training loop's selection logic, checkpoints."""

import json
import struct
from types import SimpleNamespace

import numpy as np
import pytest

import corpora
from textforge import binio, ops
from textforge.errors import (CorruptFile, EmptySplit, NoGradient,
                              VersionMismatch)
from textforge.pipeline import instantiate_task
from textforge.registry import parse_task_config
from textforge.tensor import Parameter
from textforge.trainer import (CKPT_MAGIC, CKPT_VERSION, SGD, Adam, derive_rng,
                               load_checkpoint, save_checkpoint, train)

F32 = np.float32


def make_param(value, name="p"):
    return Parameter(np.array(value, dtype=F32), name=name)


class TestSGD:
    def test_update_rule_exact(self):
        p = make_param([1.0])
        p.grad = np.array([2.0], dtype=F32)
        SGD([p], lr=0.1).step()
        # 1 - 0.1 * 2 in float32 rounds to the float32 nearest of 0.8
        assert p.data[0] == np.float32(0.8)
        assert p.grad is None

    def test_lr_zero_is_identity(self):
        p = make_param([3.0, -1.0])
        before = p.data.copy()
        p.grad = np.ones(2, dtype=F32)
        SGD([p], lr=0.0).step()
        assert np.array_equal(p.data, before)

    def test_skips_params_without_grad(self):
        live = make_param([1.0], "live")
        idle = make_param([5.0], "idle")
        live.grad = np.array([1.0], dtype=F32)
        SGD([live, idle], lr=0.1).step()
        assert idle.data[0] == np.float32(5.0)
        assert live.data[0] != np.float32(1.0)

    def test_no_gradient_anywhere(self):
        p = make_param([1.0])
        with pytest.raises(NoGradient):
            SGD([p], lr=0.1).step()

    def test_skips_non_trainable(self):
        p = make_param([1.0])
        p.trainable = False
        p.grad = np.ones(1, dtype=F32)
        with pytest.raises(NoGradient):
            SGD([p], lr=0.1).step()


class TestAdam:
    def test_first_step_moves_by_about_lr(self):
        p = make_param([1.0])
        p.grad = np.array([2.0], dtype=F32)
        Adam([p], lr=0.001).step()
        # bias correction makes the first step -lr * g / (|g| + eps)
        assert p.data[0] == pytest.approx(1.0 - 0.001, abs=1e-6)
        assert p.grad is None

    def test_direction_follows_sign_of_grad(self):
        p = make_param([1.0, 1.0])
        p.grad = np.array([0.5, -0.5], dtype=F32)
        Adam([p], lr=0.01).step()
        assert p.data[0] < 1.0 < p.data[1]

    def test_state_round_trip_preserves_trajectory(self):
        def run_steps(opt, p, grads):
            for g in grads:
                p.grad = np.array([g], dtype=F32)
                opt.step()

        pa = make_param([1.0])
        oa = Adam([pa], lr=0.01)
        run_steps(oa, pa, [1.0, -0.5])
        state = binio.decode(binio.encode(oa.state_payload()))

        pb = make_param([float(pa.data[0])])
        ob = Adam([pb], lr=0.5)  # wrong hyperparams, must be overwritten
        ob.load_state(state)
        run_steps(oa, pa, [0.25])
        run_steps(ob, pb, [0.25])
        assert pa.data[0] == pb.data[0]

    def test_no_gradient_anywhere(self):
        with pytest.raises(NoGradient):
            Adam([make_param([1.0])]).step()


class StubPipe:
    """Minimal training-loop host: quadratic loss, scripted eval scores."""

    def __init__(self, scores, epochs, patience=0):
        self.param = make_param([4.0])
        self.model = SimpleNamespace(
            named_parameters=lambda: {"p": self.param})
        self.optimizer = SGD([self.param], lr=0.1)
        self.settings = SimpleNamespace(epochs=epochs, patience=patience, seed=0)
        self.scores = list(scores)
        self.calls = 0

    def train_batches(self, epoch):
        return [epoch]

    def train_loss(self, batch):
        return ops.reshape(ops.mul(self.param.tensor, self.param.tensor), ())

    def evaluate(self):
        score = self.scores[self.calls]
        self.calls += 1
        return score, {"score": score}


class TestTrainLoop:
    def test_keeps_best_epoch_params(self):
        pipe = StubPipe(scores=[0.5, 0.9, 0.3], epochs=3)
        snapshots = []
        orig = pipe.evaluate
        def spying_evaluate():
            snapshots.append(pipe.param.data.copy())
            return orig()
        pipe.evaluate = spying_evaluate
        result = train(pipe)
        assert result.best_epoch == 1
        assert result.best_score == 0.9
        assert not result.stopped_early
        assert [r.epoch for r in result.history] == [0, 1, 2]
        # model ends at the epoch-1 snapshot, not the final one
        assert pipe.param.data[0] == snapshots[1][0]
        assert pipe.param.data[0] != snapshots[2][0]

    def test_patience_stops_early(self):
        pipe = StubPipe(scores=[0.5, 0.9, 0.7, 0.6, 0.6], epochs=5, patience=2)
        result = train(pipe)
        assert result.stopped_early
        assert [r.epoch for r in result.history] == [0, 1, 2, 3]
        assert result.best_epoch == 1

    def test_patience_zero_never_stops(self):
        pipe = StubPipe(scores=[0.9, 0.1, 0.1, 0.1], epochs=4, patience=0)
        result = train(pipe)
        assert not result.stopped_early
        assert len(result.history) == 4

    def test_ties_do_not_replace_best(self):
        pipe = StubPipe(scores=[0.7, 0.7, 0.7], epochs=3)
        result = train(pipe)
        assert result.best_epoch == 0

    def test_empty_batches_rejected(self):
        pipe = StubPipe(scores=[0.5], epochs=1)
        pipe.train_batches = lambda epoch: []
        with pytest.raises(EmptySplit):
            train(pipe)

    def test_payload_shape(self):
        result = train(StubPipe(scores=[0.5, 0.6], epochs=2))
        payload = result.payload()
        assert payload["epochs_run"] == 2
        assert payload["best_epoch"] == 1
        assert payload["best_score"] == 0.6
        assert payload["stopped_early"] is False
        assert payload["history"][0]["metrics"] == {"score": 0.5}

    def test_echo_receives_formatted_lines(self):
        lines = []
        train(StubPipe(scores=[0.5], epochs=1), echo=lines.append)
        assert len(lines) == 1
        assert lines[0].startswith("epoch 0:")
        assert "score=0.5000" in lines[0]


def build_pipe(tmp_path, epochs, subdir, seed=0):
    d = tmp_path / subdir
    d.mkdir(exist_ok=True)
    cfg = parse_task_config(json.dumps(corpora.doc_config(
        str(d), n_train=24, n_eval=8, seed=seed, epochs=epochs, batch_size=8)))
    return instantiate_task(cfg)


class TestResume:
    def test_resume_matches_uninterrupted(self, tmp_path):
        straight = build_pipe(tmp_path, epochs=4, subdir="a")
        res_straight = train(straight)

        short = build_pipe(tmp_path, epochs=2, subdir="b")
        ckpt = str(tmp_path / "b" / "model.ckpt")
        train(short, ckpt_path=ckpt)
        payload = load_checkpoint(ckpt)
        resumed = build_pipe(tmp_path, epochs=4, subdir="b")
        res_resumed = train(resumed, resume=payload)

        hist_a = [(r.epoch, r.train_loss, r.score) for r in res_straight.history]
        hist_b = [(r.epoch, r.train_loss, r.score) for r in res_resumed.history]
        assert hist_a == hist_b
        named_a = straight.model.named_parameters()
        named_b = resumed.model.named_parameters()
        for name, pa in named_a.items():
            assert np.array_equal(pa.data, named_b[name].data), name


class TestCheckpointFiles:
    def _checkpoint(self, tmp_path):
        pipe = build_pipe(tmp_path, epochs=1, subdir="ck")
        ckpt = str(tmp_path / "ck" / "model.ckpt")
        train(pipe, ckpt_path=ckpt)
        return ckpt

    def test_save_load_save_is_byte_identical(self, tmp_path):
        ckpt = self._checkpoint(tmp_path)
        payload = load_checkpoint(ckpt)
        again = str(tmp_path / "again.ckpt")
        save_checkpoint(again, payload)
        first = open(ckpt, "rb").read()
        second = open(again, "rb").read()
        assert first == second

    def test_flipped_byte_rejected(self, tmp_path):
        ckpt = self._checkpoint(tmp_path)
        blob = bytearray(open(ckpt, "rb").read())
        blob[len(blob) // 2] ^= 0xFF
        open(ckpt, "wb").write(bytes(blob))
        with pytest.raises(CorruptFile):
            load_checkpoint(ckpt)

    def test_truncation_rejected(self, tmp_path):
        ckpt = self._checkpoint(tmp_path)
        blob = open(ckpt, "rb").read()
        open(ckpt, "wb").write(blob[:len(blob) - 7])
        with pytest.raises(CorruptFile):
            load_checkpoint(ckpt)

    def test_wrong_magic_rejected(self, tmp_path):
        ckpt = self._checkpoint(tmp_path)
        blob = open(ckpt, "rb").read()
        open(ckpt, "wb").write(b"NOPE" + blob[4:])
        with pytest.raises(CorruptFile):
            load_checkpoint(ckpt)

    def test_future_version_rejected(self, tmp_path):
        ckpt = self._checkpoint(tmp_path)
        blob = bytearray(open(ckpt, "rb").read())
        blob[4:8] = struct.pack("<I", CKPT_VERSION + 1)
        open(ckpt, "wb").write(bytes(blob))
        with pytest.raises(VersionMismatch):
            load_checkpoint(ckpt)

    def test_wrong_container_rejected(self, tmp_path):
        path = str(tmp_path / "not_ckpt.bin")
        binio.write_container(path, CKPT_MAGIC, CKPT_VERSION, {"container": "module"})
        with pytest.raises(CorruptFile):
            load_checkpoint(path)

    def test_payload_contents(self, tmp_path):
        ckpt = self._checkpoint(tmp_path)
        payload = load_checkpoint(ckpt)
        assert payload["task"] == "doc_classification"
        assert payload["epoch"] == 0
        assert payload["seed"] == 0
        assert set(payload["params"]) == set(payload["best_params"])
        assert payload["optimizer"]["kind"] == "adam"
        assert "config" in payload and "vocabs" in payload and "labels" in payload


class TestSeedStreams:
    def test_derivation_is_stable_and_keyed(self):
        a = derive_rng(7, 1, 0).integers(0, 1 << 30, size=4)
        b = derive_rng(7, 1, 0).integers(0, 1 << 30, size=4)
        c = derive_rng(7, 1, 1).integers(0, 1 << 30, size=4)
        d = derive_rng(8, 1, 0).integers(0, 1 << 30, size=4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a, d)
