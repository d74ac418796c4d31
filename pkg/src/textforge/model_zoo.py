"""Model zoo: token embeddings, representations, decoders and output layers.

Every model decomposes into the same four stages. Each stage is a LayerModule
that owns its parameters, can be saved and loaded on its own, and states its
output shape up front so wiring mistakes fail at construction or on the first
forward rather than deep inside a training run.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import binio, kernels, ops
from .data_handler import Batch, VocabBundle
from .errors import (CorruptFile, DimMismatch, IncompatibleShare, MalformedLine, MultiTaskArity,
                     NoStyleSelected, ShapeMismatch)
from .tensor import Parameter, Tensor
from .vocab import Vocabulary

F32 = np.float32

MODULE_MAGIC = b"TXFG"
MODULE_VERSION = 1


def _uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, size=shape).astype(F32)


def _affine_pair(rng, fan_in, fan_out):
    scale = float(np.sqrt(1.0 / fan_in))
    w = _uniform(rng, (fan_in, fan_out), scale)
    b = np.zeros((fan_out,), dtype=F32)
    return w, b


class LayerModule:
    """Base for the four model stages and their shareable children."""

    kind = "module"

    def __init__(self, name, config):
        self.name = name
        self.config = dict(config)
        self._params = {}

    def add_param(self, local_name, array):
        param = Parameter(array, name=local_name)
        self._params[local_name] = param
        return param

    def children(self):
        return {}

    def named_parameters(self, prefix=""):
        """Depth-first (own params, then children), deterministic order."""
        out = {}
        for local, param in self._params.items():
            out[prefix + local if prefix else local] = param
        for child_name, child in self.children().items():
            child_prefix = (prefix + child_name + ".") if prefix else (child_name + ".")
            out.update(child.named_parameters(child_prefix))
        return out

    def parameters(self):
        seen = set()
        params = []
        for param in self.named_parameters().values():
            if id(param) not in seen:
                seen.add(id(param))
                params.append(param)
        return params


def save_module(module: LayerModule, path: str):
    """Write one module (kind, name, config, parameters) to its own file."""
    payload = {
        "container": "module",
        "class": type(module).__name__,
        "kind": module.kind,
        "name": module.name,
        "config": _config_payload(module.config),
        "params": {name: p.data for name, p in module.named_parameters().items()},
    }
    binio.write_container(path, MODULE_MAGIC, MODULE_VERSION, payload)


def load_module_into(module: LayerModule, path: str):
    """Load a saved module's parameters into a structurally equal instance."""
    payload = binio.read_container(path, MODULE_MAGIC, MODULE_VERSION)
    if payload.get("container") != "module":
        raise CorruptFile("%s: not a module file" % path)
    if payload.get("class") != type(module).__name__:
        raise IncompatibleShare("saved module is %s, not %s"
                                % (payload.get("class"), type(module).__name__))
    params = module.named_parameters()
    saved = payload["params"]
    if set(saved) != set(params):
        raise IncompatibleShare("parameter names differ between file and module")
    for name, param in params.items():
        if saved[name].shape != param.data.shape:
            raise ShapeMismatch("param %s: file shape %s vs module %s"
                                % (name, saved[name].shape, param.data.shape))
        param.data = saved[name]
    return module


def _config_payload(config):
    out = {}
    for key, value in config.items():
        out[key] = list(value) if isinstance(value, (list, tuple)) else value
    return out


def load_pretrained_embeddings(path: str, vocab: Vocabulary, dim: int, rng) -> np.ndarray:
    """Initialize a word table, overlaying vectors found in a text file.

    File lines are "token v1 ... v_dim" space separated. Tokens outside the
    vocabulary are skipped; the padding row is zeroed either way.
    """
    table = _uniform(rng, (len(vocab), dim), 0.1)
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) < 2:
                raise MalformedLine("%s line %d: expected token and values" % (path, line_no))
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DimMismatch("%s line %d: %d values for dim %d"
                                  % (path, line_no, len(values), dim))
            idx = vocab.index.get(token)
            if idx is None:
                continue
            try:
                table[idx] = np.array([float(v) for v in values], dtype=F32)
            except ValueError:
                raise MalformedLine("%s line %d: non-numeric value" % (path, line_no))
    table[Vocabulary.PAD_ID] = 0.0
    return table


class TokenEmbedding(LayerModule):
    """Concatenation of the selected per-token feature embeddings.

    Styles: word vectors (optionally warm-started from a file), a char CNN
    with highway layers, gazetteer feature embeddings and capitalization
    embeddings. A dim of 0 disables a style; at least one must be active.
    Draw order at init is word, char table, char filters by width, highway
    layers, gazetteer, capitalization.
    """

    kind = "embedding"

    def __init__(self, name, config, vocabs: VocabBundle, rng):
        super().__init__(name, config)
        word_dim = config["word_dim"]
        char_dim = config["char_dim"]
        gaz_dim = config["gaz_dim"]
        cap_dim = config["cap_dim"]
        if word_dim <= 0 and char_dim <= 0 and gaz_dim <= 0 and cap_dim <= 0:
            raise NoStyleSelected("embedding config enables no feature style")

        self.word_dim = max(word_dim, 0)
        self.char_dim = max(char_dim, 0)
        self.gaz_dim = max(gaz_dim, 0)
        self.cap_dim = max(cap_dim, 0)
        self.char_widths = list(config["char_filter_widths"])
        self.char_filters = config["char_num_filters"]
        self.highway_layers = config["char_highway_layers"]

        if self.word_dim:
            pretrained = config.get("pretrained_path") or ""
            if pretrained:
                table = load_pretrained_embeddings(pretrained, vocabs.token, self.word_dim, rng)
            else:
                table = _uniform(rng, (len(vocabs.token), self.word_dim), 0.1)
                table[Vocabulary.PAD_ID] = 0.0
            self.word_table = self.add_param("word.table", table)
        self.char_out = 0
        if self.char_dim:
            if not self.char_widths or min(self.char_widths) < 1:
                raise ShapeMismatch("char filter widths must be >= 1")
            table = _uniform(rng, (len(vocabs.char), self.char_dim), 0.1)
            table[Vocabulary.PAD_ID] = 0.0
            self.char_table = self.add_param("char.table", table)
            self.char_conv = []
            for w in self.char_widths:
                scale = float(np.sqrt(1.0 / (w * self.char_dim)))
                filt = self.add_param("char.conv%d" % w,
                                      _uniform(rng, (w, self.char_dim, self.char_filters), scale))
                self.char_conv.append(filt)
            self.char_out = self.char_filters * len(self.char_widths)
            self.highway = []
            for layer in range(self.highway_layers):
                wt, bt = _affine_pair(rng, self.char_out, self.char_out)
                wg, bg = _affine_pair(rng, self.char_out, self.char_out)
                self.highway.append((
                    self.add_param("char.hw%d.wt" % layer, wt),
                    self.add_param("char.hw%d.bt" % layer, bt),
                    self.add_param("char.hw%d.wg" % layer, wg),
                    self.add_param("char.hw%d.bg" % layer, bg),
                ))
        if self.gaz_dim:
            table = _uniform(rng, (len(vocabs.gaz), self.gaz_dim), 0.1)
            table[Vocabulary.PAD_ID] = 0.0
            self.gaz_table = self.add_param("gaz.table", table)
        if self.cap_dim:
            table = _uniform(rng, (len(vocabs.cap), self.cap_dim), 0.1)
            table[Vocabulary.PAD_ID] = 0.0
            self.cap_table = self.add_param("cap.table", table)

        self.out_dim = self.word_dim + self.char_out + self.gaz_dim + self.cap_dim

    def _char_forward(self, char_ids):
        b, t, c = char_ids.shape
        flat_ids = char_ids.reshape(b * t, c)
        emb = ops.embedding_lookup(self.char_table.tensor, flat_ids)  # [b*t, c, cd]
        full = np.ones((b * t, c), dtype=F32)
        pooled = [ops.conv1d_maxpool(emb, filt.tensor, full) for filt in self.char_conv]
        out = ops.concat(pooled, axis=-1) if len(pooled) > 1 else pooled[0]
        one = Tensor(np.ones_like(out.data))
        for wt, bt, wg, bg in self.highway:
            hidden = ops.relu(ops.linear(out, wt.tensor, bt.tensor))
            gate = ops.sigmoid(ops.linear(out, wg.tensor, bg.tensor))
            out = ops.add(ops.mul(gate, hidden), ops.mul(ops.sub(one, gate), out))
        return ops.reshape(out, (b, t, self.char_out))

    def forward(self, batch: Batch) -> Tensor:
        b, t = batch.token_ids.shape
        parts = []
        if self.word_dim:
            parts.append(ops.embedding_lookup(self.word_table.tensor, batch.token_ids))
        if self.char_dim:
            parts.append(self._char_forward(batch.char_ids))
        if self.gaz_dim:
            parts.append(ops.embedding_lookup(self.gaz_table.tensor, batch.dense_feats["gaz"]))
        if self.cap_dim:
            parts.append(ops.embedding_lookup(self.cap_table.tensor, batch.dense_feats["cap"]))
        out = ops.concat(parts, axis=-1) if len(parts) > 1 else parts[0]
        if out.shape != (b, t, self.out_dim):
            raise ShapeMismatch("embedding produced %s, contract (%d, %d, %d)"
                                % (out.shape, b, t, self.out_dim))
        return out


class BiLSTMModule(LayerModule):
    """Shared bidirectional LSTM trunk. Forget gate biases start at 1."""

    kind = "representation"

    def __init__(self, name, config, in_dim, rng):
        super().__init__(name, config)
        hidden = config["hidden_dim"]
        self.in_dim = in_dim
        self.hidden_dim = hidden
        self.out_dim = 2 * hidden
        for direction in ("fwd", "bwd"):
            ih_scale = float(np.sqrt(1.0 / in_dim))
            hh_scale = float(np.sqrt(1.0 / hidden))
            self.add_param("%s.w_ih" % direction, _uniform(rng, (in_dim, 4 * hidden), ih_scale))
            self.add_param("%s.w_hh" % direction, _uniform(rng, (hidden, 4 * hidden), hh_scale))
            bias = np.zeros((4 * hidden,), dtype=F32)
            bias[hidden:2 * hidden] = 1.0
            self.add_param("%s.bias" % direction, bias)

    def forward(self, emb: Tensor, mask) -> Tensor:
        p = self._params
        fwd = ops.lstm_seq(emb, p["fwd.w_ih"].tensor, p["fwd.w_hh"].tensor,
                           p["fwd.bias"].tensor, mask, reverse=False)
        bwd = ops.lstm_seq(emb, p["bwd.w_ih"].tensor, p["bwd.w_hh"].tensor,
                           p["bwd.bias"].tensor, mask, reverse=True)
        return ops.concat([fwd, bwd], axis=-1)


def _check_rep_input(emb, in_dim, who):
    if emb.shape[-1] != in_dim:
        raise ShapeMismatch("%s expected input dim %d, got %d" % (who, in_dim, emb.shape[-1]))


class DocNNRepresentation(LayerModule):
    """Parallel word-level convolutions, max pooled over time, concatenated."""

    kind = "representation"
    sequence_output = False

    def __init__(self, name, config, in_dim, rng):
        super().__init__(name, config)
        self.in_dim = in_dim
        self.widths = list(config["filter_widths"])
        self.num_filters = config["num_filters"]
        if not self.widths or min(self.widths) < 1:
            raise ShapeMismatch("filter widths must be >= 1")
        self.filters = []
        for w in self.widths:
            scale = float(np.sqrt(1.0 / (w * in_dim)))
            self.filters.append(self.add_param(
                "conv%d" % w, _uniform(rng, (w, in_dim, self.num_filters), scale)))
        self.out_dim = self.num_filters * len(self.widths)

    def forward(self, emb: Tensor, mask) -> Tensor:
        _check_rep_input(emb, self.in_dim, "docnn")
        b, t = emb.shape[0], emb.shape[1]
        if t == 0:
            # a zero-length sequence has the fixed zero representation
            return Tensor(np.zeros((b, self.out_dim), dtype=F32))
        pooled = [ops.conv1d_maxpool(emb, filt.tensor, mask) for filt in self.filters]
        return ops.concat(pooled, axis=-1) if len(pooled) > 1 else pooled[0]


class BiLSTMAttnRepresentation(LayerModule):
    """BiLSTM trunk pooled by additive self attention over valid positions."""

    kind = "representation"
    sequence_output = False

    def __init__(self, name, config, in_dim, rng):
        super().__init__(name, config)
        self.in_dim = in_dim
        self.bilstm = BiLSTMModule("bilstm", {"hidden_dim": config["hidden_dim"]}, in_dim, rng)
        attn = config["attention_dim"]
        scale = float(np.sqrt(1.0 / self.bilstm.out_dim))
        self.add_param("attn.w1", _uniform(rng, (self.bilstm.out_dim, attn), scale))
        self.add_param("attn.w2", _uniform(rng, (attn,), float(np.sqrt(1.0 / attn))))
        self.out_dim = self.bilstm.out_dim

    def children(self):
        return {"bilstm": self.bilstm}

    def forward(self, emb: Tensor, mask) -> Tensor:
        _check_rep_input(emb, self.in_dim, "bilstm_attn")
        b, t = emb.shape[0], emb.shape[1]
        if t == 0:
            return Tensor(np.zeros((b, self.out_dim), dtype=F32))
        hidden = self.bilstm.forward(emb, mask)
        return ops.self_attention(hidden, self._params["attn.w1"].tensor,
                                  self._params["attn.w2"].tensor, mask)


class BiLSTMTaggerRepresentation(LayerModule):
    """BiLSTM trunk kept per-token for word tagging."""

    kind = "representation"
    sequence_output = True

    def __init__(self, name, config, in_dim, rng):
        super().__init__(name, config)
        self.in_dim = in_dim
        self.bilstm = BiLSTMModule("bilstm", {"hidden_dim": config["hidden_dim"]}, in_dim, rng)
        self.out_dim = self.bilstm.out_dim

    def children(self):
        return {"bilstm": self.bilstm}

    def forward(self, emb: Tensor, mask) -> Tensor:
        _check_rep_input(emb, self.in_dim, "bilstm_tagger")
        b, t = emb.shape[0], emb.shape[1]
        if t == 0:
            return Tensor(np.zeros((b, 0, self.out_dim), dtype=F32))
        return self.bilstm.forward(emb, mask)


class MLPDecoder(LayerModule):
    """Affine stack with relu between hidden layers, projecting to classes."""

    kind = "decoder"

    def __init__(self, name, config, in_dim, n_classes, rng):
        super().__init__(name, config)
        self.in_dim = in_dim
        self.n_classes = n_classes
        dims = [in_dim] + list(config["hidden_dims"]) + [n_classes]
        self.n_layers = len(dims) - 1
        for i in range(self.n_layers):
            w, b = _affine_pair(rng, dims[i], dims[i + 1])
            self.add_param("w%d" % i, w)
            self.add_param("b%d" % i, b)

    def forward(self, rep: Tensor) -> Tensor:
        if rep.shape[-1] != self.in_dim:
            raise ShapeMismatch("decoder expected input dim %d, got %d"
                                % (self.in_dim, rep.shape[-1]))
        out = rep
        for i in range(self.n_layers):
            out = ops.linear(out, self._params["w%d" % i].tensor, self._params["b%d" % i].tensor)
            if i < self.n_layers - 1:
                out = ops.relu(out)
        return out


@dataclass
class ModelOutput:
    preds: np.ndarray
    scores: np.ndarray
    loss: Optional[Tensor]


class DocClassificationOutput(LayerModule):
    kind = "output"
    sequence_output = False

    def __init__(self, name="doc_classification", config=None):
        super().__init__(name, config or {})

    def forward(self, logits: Tensor, labels, mask) -> ModelOutput:
        if logits.data.ndim != 2:
            raise ShapeMismatch("doc output expects [b, c] logits, got %s" % (logits.shape,))
        preds = kernels.argmax_last(logits.data)
        scores = kernels.softmax(logits.data, axis=-1)
        loss = None
        if labels is not None:
            loss = ops.softmax_cross_entropy(logits, labels)
        return ModelOutput(preds, scores, loss)


class WordTaggingOutput(LayerModule):
    kind = "output"
    sequence_output = True

    def __init__(self, name="word_tagging", config=None):
        super().__init__(name, config or {})

    def forward(self, logits: Tensor, labels, mask) -> ModelOutput:
        if logits.data.ndim != 3:
            raise ShapeMismatch("word output expects [b, t, c] logits, got %s" % (logits.shape,))
        b, t, c = logits.data.shape
        preds = kernels.argmax_last(logits.data)
        scores = kernels.softmax(logits.data, axis=-1)
        loss = None
        if labels is not None:
            flat = ops.reshape(logits, (b * t, c))
            loss = ops.softmax_cross_entropy(flat, labels.reshape(-1), mask.reshape(-1))
        return ModelOutput(preds, scores, loss)


class SingleTaskModel:
    """Embedding -> representation -> decoder -> output."""

    def __init__(self, embedding, representation, decoder, output):
        self.embedding = embedding
        self.representation = representation
        self.decoder = decoder
        self.output = output
        if getattr(representation, "sequence_output", False) != output.sequence_output:
            raise ShapeMismatch("representation and output layer disagree on sequence shape")

    def children(self):
        return {"embedding": self.embedding, "representation": self.representation,
                "decoder": self.decoder, "output": self.output}

    def named_parameters(self, prefix=""):
        out = {}
        for name, module in self.children().items():
            sub = (prefix + name + ".") if prefix else (name + ".")
            out.update(module.named_parameters(sub))
        return out

    def parameters(self):
        seen = set()
        params = []
        for param in self.named_parameters().values():
            if id(param) not in seen:
                seen.add(id(param))
                params.append(param)
        return params

    def forward(self, batch: Batch, compute_loss=True) -> ModelOutput:
        emb = self.embedding.forward(batch)
        rep = self.representation.forward(emb, batch.mask)
        logits = self.decoder.forward(rep)
        if self.output.sequence_output:
            labels = batch.word_labels if compute_loss else None
        else:
            labels = batch.doc_labels if compute_loss else None
        return self.output.forward(logits, labels, batch.mask)


class MultiTaskModel:
    """Named single-task models with some modules shared by reference."""

    def __init__(self, tasks, shared_paths, loss_weights):
        if len(tasks) < 2:
            raise MultiTaskArity("multi-task model needs at least 2 tasks")
        self.task_names = list(tasks)
        self.tasks = dict(tasks)
        self.shared_paths = list(shared_paths)
        self.loss_weights = dict(loss_weights)

    def task_for(self, task_id: int) -> str:
        return self.task_names[task_id]

    def forward(self, batch: Batch, compute_loss=True):
        name = self.task_for(batch.task_id)
        return name, self.tasks[name].forward(batch, compute_loss)

    def named_parameters(self):
        out = {}
        for name in self.task_names:
            out.update(self.tasks[name].named_parameters(name + "."))
        return out

    def parameters(self):
        seen = set()
        params = []
        for param in self.named_parameters().values():
            if id(param) not in seen:
                seen.add(id(param))
                params.append(param)
        return params


def get_module(model, path: str):
    node = model
    for piece in path.split("."):
        kids = node.children()
        if piece not in kids:
            raise IncompatibleShare("no module %r under %s" % (piece, type(node).__name__))
        node = kids[piece]
    return node


def set_module(model, path: str, module):
    pieces = path.split(".")
    parent = model
    for piece in pieces[:-1]:
        parent = get_module(parent, piece)
    if pieces[-1] not in parent.children():
        raise IncompatibleShare("no module %r under %s" % (pieces[-1], type(parent).__name__))
    setattr(parent, pieces[-1], module)


def _shapes(module):
    return {name: p.data.shape for name, p in module.named_parameters().items()}


def compose_multitask(task_models, shared_paths, loss_weights=None) -> MultiTaskModel:
    """Join single-task models, replacing modules at shared paths by reference.

    The first task's module wins; the others must be structurally identical
    (same class, config and parameter shapes).
    """
    names = list(task_models)
    if len(names) < 2:
        raise MultiTaskArity("compose_multitask needs at least 2 tasks, got %d" % len(names))
    first = task_models[names[0]]
    for path in shared_paths:
        ref = get_module(first, path)
        for other in names[1:]:
            mod = get_module(task_models[other], path)
            if type(mod) is not type(ref):
                raise IncompatibleShare("%s: %s vs %s at shared path"
                                        % (path, type(ref).__name__, type(mod).__name__))
            if mod.config != ref.config:
                raise IncompatibleShare("%s: configs differ between tasks" % path)
            if _shapes(mod) != _shapes(ref):
                raise IncompatibleShare("%s: parameter shapes differ between tasks" % path)
            set_module(task_models[other], path, ref)
    weights = {name: 1.0 for name in names}
    if loss_weights:
        weights.update(loss_weights)
    return MultiTaskModel({name: task_models[name] for name in names}, shared_paths, weights)


def assign_parameter_names(model):
    """Give every parameter its path-like name; names must be unique."""
    named = model.named_parameters()
    by_id = {}
    for name, param in named.items():
        if id(param) not in by_id:
            by_id[id(param)] = name
            param.name = name
    return named
