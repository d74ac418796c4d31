"""Static inference graphs: the format, validation, and the interpreter.

A graph is a topologically ordered op list over named value slots with the
trained weights embedded as constants. The interpreter executes exactly the
same forward kernels as eager mode, minus tape bookkeeping, lifted to a
batch of one, so exported outputs match eager outputs bit for bit.
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import binio, kernels
from .errors import (CorruptGraph, CorruptFile, IdOutOfRange, InputTypeMismatch,
                     VersionMismatch)
from .featurizer import (GAZ_NONE, FeaturizedExample, Featurizer,
                         FeaturizerSettings, capitalization, char_ids)
from .vocab import Vocabulary

F32 = np.float32

GRAPH_MAGIC = b"TXGR"
GRAPH_VERSION = 1

OPCODES = frozenset((
    "LookupTokens",
    "LookupChars",
    "EmbedGather",
    "MatMulAdd",
    "Tanh",
    "Sigmoid",
    "Relu",
    "Conv1DMaxPool",
    "LSTMSeq",
    "Concat",
    "SelfAttention",
    "Softmax",
    "ArgMax",
    "Highway",
))

SLOT_KINDS = ("f32", "i64", "str")


@dataclass
class GraphOp:
    opcode: str
    inputs: tuple
    outputs: tuple
    attrs: dict = field(default_factory=dict)


@dataclass
class StaticGraph:
    version: int
    attrs: dict            # graph-level: featurizer settings, task, label names
    slots: dict            # slot name -> kind
    consts: dict           # slot name -> ndarray payload
    vocab_tables: dict     # vocab name -> entry list (token/char/gaz/cap)
    ops: list
    inputs: list
    outputs: list

    @property
    def baked(self):
        return bool(self.vocab_tables)


def validate_graph(graph: StaticGraph) -> None:
    """Topology and naming checks; raises CorruptGraph on any violation."""
    for name, kind in graph.slots.items():
        if kind not in SLOT_KINDS:
            raise CorruptGraph("slot %r has unknown kind %r" % (name, kind))
    for name in graph.consts:
        if name not in graph.slots:
            raise CorruptGraph("const %r is not a declared slot" % name)
    for name in graph.inputs:
        if name not in graph.slots:
            raise CorruptGraph("input %r is not a declared slot" % name)

    produced = set(graph.consts) | set(graph.inputs)
    for op in graph.ops:
        if op.opcode not in OPCODES:
            raise CorruptGraph("unknown opcode %r" % op.opcode)
        for slot in op.inputs:
            if slot not in produced:
                raise CorruptGraph("op %s reads %r before it is produced"
                                   % (op.opcode, slot))
        for slot in op.outputs:
            if slot in produced:
                raise CorruptGraph("slot %r has more than one producer" % slot)
            if slot not in graph.slots:
                raise CorruptGraph("op %s writes undeclared slot %r" % (op.opcode, slot))
            produced.add(slot)
        if op.opcode in ("LookupTokens", "LookupChars"):
            vocab = op.attrs.get("vocab", "")
            if vocab not in graph.vocab_tables:
                raise CorruptGraph("op %s needs vocab table %r" % (op.opcode, vocab))
    for name in graph.outputs:
        if name not in produced:
            raise CorruptGraph("graph output %r is never produced" % name)


def serialize(graph: StaticGraph) -> bytes:
    payload = {
        "attrs": graph.attrs,
        "slots": graph.slots,
        "consts": graph.consts,
        "vocabs": graph.vocab_tables,
        "ops": [{"opcode": op.opcode, "inputs": list(op.inputs),
                 "outputs": list(op.outputs), "attrs": op.attrs}
                for op in graph.ops],
        "inputs": list(graph.inputs),
        "outputs": list(graph.outputs),
    }
    head = GRAPH_MAGIC + struct.pack("<I", graph.version)
    body = binio.encode(payload)
    crc = zlib.crc32(head + body)
    return head + body + struct.pack("<I", crc)


def deserialize(data: bytes) -> StaticGraph:
    if len(data) < 12 or data[:4] != GRAPH_MAGIC:
        raise CorruptGraph("not a graph payload")
    version = struct.unpack("<I", data[4:8])[0]
    if version != GRAPH_VERSION:
        raise VersionMismatch("graph format version %d, expected %d"
                              % (version, GRAPH_VERSION))
    crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptGraph("checksum mismatch")
    try:
        payload = binio.decode(data[8:-4])
    except CorruptFile as exc:
        raise CorruptGraph("undecodable body: %s" % exc)
    try:
        ops = [GraphOp(o["opcode"], tuple(o["inputs"]), tuple(o["outputs"]), o["attrs"])
               for o in payload["ops"]]
        graph = StaticGraph(
            version=version,
            attrs=payload["attrs"],
            slots=payload["slots"],
            consts=payload["consts"],
            vocab_tables=payload["vocabs"],
            ops=ops,
            inputs=payload["inputs"],
            outputs=payload["outputs"],
        )
    except (KeyError, TypeError) as exc:
        raise CorruptGraph("malformed graph payload: %s" % exc)
    validate_graph(graph)
    return graph


def load_graph(path: str) -> StaticGraph:
    with open(path, "rb") as handle:
        return deserialize(handle.read())


def save_graph(graph: StaticGraph, path: str) -> None:
    with open(path, "wb") as handle:
        handle.write(serialize(graph))


def _gather(table, ids):
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IdOutOfRange("id outside [0, %d)" % table.shape[0])
    return table[ids]


class Executor:
    """Precompiled interpreter for one graph; safe for repeated run calls.

    Each op becomes a closure with its constant operands already bound, so a
    run is a plain loop over closures with a dict of live values. No tape, no
    gradient buffers; scratch values die with the call.
    """

    def __init__(self, graph: StaticGraph):
        validate_graph(graph)
        self.graph = graph
        self._vocabs = {name: Vocabulary(entries)
                        for name, entries in graph.vocab_tables.items()}
        self._steps = [self._compile(op) for op in graph.ops]

    def _resolve(self, slot):
        """Return a fetcher for an op input: consts bind now, the rest at run."""
        consts = self.graph.consts
        if slot in consts:
            value = consts[slot]
            return lambda env: value
        return lambda env: env[slot]

    def _compile(self, op: GraphOp):
        get = [self._resolve(s) for s in op.inputs]
        out = op.outputs[0]
        code = op.opcode

        if code == "LookupTokens":
            vocab = self._vocabs[op.attrs["vocab"]]
            def step(env, get=get, out=out, vocab=vocab):
                tokens = get[0](env)
                env[out] = np.array([vocab.lookup(t) for t in tokens], dtype=np.int64)
        elif code == "LookupChars":
            vocab = self._vocabs[op.attrs["vocab"]]
            max_chars = op.attrs["max_chars"]
            def step(env, get=get, out=out, vocab=vocab, max_chars=max_chars):
                tokens = get[0](env)
                rows = [char_ids(t, vocab, max_chars) for t in tokens]
                env[out] = np.array(rows, dtype=np.int64).reshape(len(tokens), max_chars)
        elif code == "EmbedGather":
            def step(env, get=get, out=out):
                env[out] = _gather(get[1](env), get[0](env))
        elif code == "MatMulAdd":
            # lift to a batch of one so the GEMM shapes match training exactly
            def step(env, get=get, out=out):
                x = get[0](env)
                env[out] = kernels.linear(x[None], get[1](env), get[2](env))[0]
        elif code == "Tanh":
            def step(env, get=get, out=out):
                env[out] = np.tanh(get[0](env))
        elif code == "Sigmoid":
            def step(env, get=get, out=out):
                env[out] = kernels.sigmoid(get[0](env))
        elif code == "Relu":
            def step(env, get=get, out=out):
                env[out] = np.maximum(get[0](env), F32(0.0))
        elif code == "Conv1DMaxPool":
            def step(env, get=get, out=out):
                x = get[0](env)
                filters = get[1](env)
                f = filters.shape[2]
                if x.ndim == 2:
                    t = x.shape[0]
                    if t == 0:
                        env[out] = np.zeros((f,), dtype=F32)
                    else:
                        mask = np.ones((1, t), dtype=F32)
                        env[out] = kernels.conv_maxpool(x[None], filters, mask)[0][0]
                else:
                    n, c = x.shape[0], x.shape[1]
                    if n == 0:
                        env[out] = np.zeros((0, f), dtype=F32)
                    else:
                        mask = np.ones((n, c), dtype=F32)
                        env[out] = kernels.conv_maxpool(x, filters, mask)[0]
        elif code == "LSTMSeq":
            reverse = bool(op.attrs["reverse"])
            def step(env, get=get, out=out, reverse=reverse):
                x = get[0](env)
                w_ih, w_hh, bias = get[1](env), get[2](env), get[3](env)
                h = w_hh.shape[0]
                t = x.shape[0]
                if t == 0:
                    env[out] = np.zeros((0, h), dtype=F32)
                else:
                    mask = np.ones((1, t), dtype=F32)
                    env[out] = kernels.lstm_seq(x[None], w_ih, w_hh, bias, mask,
                                                reverse=reverse)[0][0]
        elif code == "Concat":
            axis = op.attrs.get("axis", -1)
            def step(env, get=get, out=out, axis=axis):
                env[out] = np.concatenate([g(env) for g in get], axis=axis)
        elif code == "SelfAttention":
            def step(env, get=get, out=out):
                x = get[0](env)
                w1, w2 = get[1](env), get[2](env)
                t = x.shape[0]
                if t == 0:
                    env[out] = np.zeros((x.shape[1],), dtype=F32)
                else:
                    mask = np.ones((1, t), dtype=F32)
                    env[out] = kernels.self_attention(x[None], w1, w2, mask)[0][0]
        elif code == "Highway":
            def step(env, get=get, out=out):
                x = get[0](env)
                layer = (get[1](env), get[2](env), get[3](env), get[4](env))
                env[out] = kernels.highway(x, [layer])
        elif code == "Softmax":
            def step(env, get=get, out=out):
                env[out] = kernels.softmax(get[0](env), axis=-1)
        elif code == "ArgMax":
            def step(env, get=get, out=out):
                env[out] = kernels.argmax_last(get[0](env))
        else:  # unreachable after validate_graph
            raise CorruptGraph("unknown opcode %r" % code)
        return step

    def run_feed(self, feed: dict) -> dict:
        env = dict(feed)
        for step in self._steps:
            step(env)
        return {name: env[name] for name in self.graph.outputs}


def prepare_feed(graph: StaticGraph, inp) -> dict:
    """Turn a caller-level input into the slot feed the graph expects.

    Baked graphs consume raw strings (text, a token list, or a featurized
    example); unbaked graphs consume a dict of integer id arrays.
    """
    if graph.baked:
        if isinstance(inp, dict):
            raise InputTypeMismatch("this graph consumes raw tokens, not id tensors")
        if isinstance(inp, str):
            settings = FeaturizerSettings(lowercase=bool(graph.attrs["lowercase"]),
                                          max_chars=int(graph.attrs["max_chars"]))
            feats = Featurizer(settings).featurize(inp, ())
        elif isinstance(inp, FeaturizedExample):
            feats = inp
        elif isinstance(inp, (list, tuple)) and all(isinstance(t, str) for t in inp):
            feats = None
        else:
            raise InputTypeMismatch("unsupported input of type %s" % type(inp).__name__)
        if feats is None:
            tokens = list(inp)
            gaz = [GAZ_NONE] * len(tokens)
            cap = [capitalization(t) for t in tokens]
        else:
            tokens = feats.token_texts()
            gaz = list(feats.gaz_labels)
            cap = list(feats.cap_labels)
        feed = {}
        for name in graph.inputs:
            if name == "tokens":
                feed[name] = tokens
            elif name == "gaz_labels":
                feed[name] = gaz
            elif name == "cap_labels":
                feed[name] = cap
            else:
                raise InputTypeMismatch("graph expects unknown input %r" % name)
        return feed

    if not isinstance(inp, dict):
        raise InputTypeMismatch(
            "this graph consumes token ids; bake vocabularies to feed raw tokens")
    feed = {}
    for name in graph.inputs:
        if name not in inp:
            raise InputTypeMismatch("missing graph input %r" % name)
        feed[name] = np.asarray(inp[name], dtype=np.int64)
    return feed


def run(executor: Executor, inp) -> dict:
    """Single-example inference: raw input in, prediction and scores out."""
    feed = prepare_feed(executor.graph, inp)
    return executor.run_feed(feed)
