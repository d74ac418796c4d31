"""Builtin component registrations and the factories that build them.

The registry is populated here by explicit calls at import time; nothing is
discovered by scanning. Factories receive resolved ComponentConfigs plus the
build-time context they need (vocabularies, inferred dims, the init rng).
"""

from . import model_zoo, trainer
from .errors import SchemaViolation, ShapeMismatch
from .registry import (BOOL, COMPONENT, FLOAT, INT, LIST_INT, LIST_STRING, STRING,
                       ComponentConfig, Field, register_component)

DOC_TASK = "doc_classification"
WORD_TASK = "word_tagging"
JOINT_TASK = "joint_doc_word"

# paths shared by reference between the two heads of the joint model
JOINT_SHARED_PATHS = ("embedding", "representation.bilstm")


def _register_builtins():
    register_component("featurizer", "basic", (
        Field("lowercase", BOOL, default=True),
        Field("max_chars", INT, default=20),
    ))

    register_component("data_handler", "tsv", (
        Field("train_path", STRING),
        Field("eval_path", STRING),
        Field("test_path", STRING, default=""),
        Field("batch_size", INT, default=16),
        Field("min_freq", INT, default=1),
    ))
    register_component("data_handler", "tsv_pair", (
        Field("train_paths", LIST_STRING),
        Field("eval_paths", LIST_STRING),
        Field("test_paths", LIST_STRING, default=[]),
        Field("batch_size", INT, default=16),
        Field("min_freq", INT, default=1),
    ))

    register_component("embedding", "token", (
        Field("word_dim", INT, default=64),
        Field("pretrained_path", STRING, default=""),
        Field("char_dim", INT, default=0),
        Field("char_filter_widths", LIST_INT, default=[3]),
        Field("char_num_filters", INT, default=16),
        Field("char_highway_layers", INT, default=1),
        Field("gaz_dim", INT, default=0),
        Field("cap_dim", INT, default=0),
    ))

    register_component("representation", "docnn", (
        Field("filter_widths", LIST_INT, default=[3, 4, 5]),
        Field("num_filters", INT, default=100),
        Field("input_dim", INT, default=-1),
    ))
    register_component("representation", "bilstm_attn", (
        Field("hidden_dim", INT, default=64),
        Field("attention_dim", INT, default=64),
        Field("input_dim", INT, default=-1),
    ))
    register_component("representation", "bilstm_tagger", (
        Field("hidden_dim", INT, default=64),
        Field("input_dim", INT, default=-1),
    ))

    register_component("decoder", "mlp", (
        Field("hidden_dims", LIST_INT, default=[]),
    ))

    register_component("output", "doc_classification", ())
    register_component("output", "word_tagging", ())

    register_component("optimizer", "sgd", (
        Field("lr", FLOAT, default=0.1),
    ))
    register_component("optimizer", "adam", (
        Field("lr", FLOAT, default=0.001),
        Field("beta1", FLOAT, default=0.9),
        Field("beta2", FLOAT, default=0.999),
        Field("eps", FLOAT, default=1e-8),
    ))

    register_component("trainer", "standard", (
        Field("epochs", INT, default=10),
        Field("patience", INT, default=0),
        Field("seed", INT, default=0),
    ))

    register_component("exporter", "graph", (
        Field("out_path", STRING, default="model.graph"),
        Field("bake_vocab", BOOL, default=True),
    ))

    register_component("model", "single", (
        Field("embedding", COMPONENT, default={"token": {}}, child_kind="embedding"),
        Field("representation", COMPONENT, child_kind="representation"),
        Field("decoder", COMPONENT, default={"mlp": {}}, child_kind="decoder"),
        Field("output", COMPONENT, child_kind="output"),
    ))
    register_component("model", "joint", (
        Field("embedding", COMPONENT, default={"token": {}}, child_kind="embedding"),
        Field("doc_representation", COMPONENT, default={"bilstm_attn": {}},
              child_kind="representation"),
        Field("word_representation", COMPONENT, default={"bilstm_tagger": {}},
              child_kind="representation"),
        Field("doc_decoder", COMPONENT, default={"mlp": {}}, child_kind="decoder"),
        Field("word_decoder", COMPONENT, default={"mlp": {}}, child_kind="decoder"),
        Field("doc_loss_weight", FLOAT, default=1.0),
        Field("word_loss_weight", FLOAT, default=1.0),
    ))

    def task_fields():
        return (
            Field("featurizer", COMPONENT, default={"basic": {}}, child_kind="featurizer"),
            Field("data", COMPONENT, child_kind="data_handler"),
            Field("model", COMPONENT, child_kind="model"),
            Field("optimizer", COMPONENT, default={"adam": {}}, child_kind="optimizer"),
            Field("trainer", COMPONENT, default={"standard": {}}, child_kind="trainer"),
            Field("export", COMPONENT, default={"graph": {}}, child_kind="exporter"),
        )

    register_component("task", DOC_TASK, task_fields())
    register_component("task", WORD_TASK, task_fields())
    register_component("task", JOINT_TASK, task_fields())


_register_builtins()


_REP_CLASSES = {
    "docnn": model_zoo.DocNNRepresentation,
    "bilstm_attn": model_zoo.BiLSTMAttnRepresentation,
    "bilstm_tagger": model_zoo.BiLSTMTaggerRepresentation,
}

_OUTPUT_CLASSES = {
    "doc_classification": model_zoo.DocClassificationOutput,
    "word_tagging": model_zoo.WordTaggingOutput,
}


def build_embedding(cfg: ComponentConfig, vocabs, rng) -> model_zoo.TokenEmbedding:
    return model_zoo.TokenEmbedding("embedding", cfg.params, vocabs, rng)


def build_representation(cfg: ComponentConfig, in_dim: int, rng):
    declared = cfg.params.get("input_dim", -1)
    if declared >= 0 and declared != in_dim:
        raise ShapeMismatch("representation %s declares input dim %d but the embedding "
                            "produces %d" % (cfg.name, declared, in_dim))
    return _REP_CLASSES[cfg.name]("representation", cfg.params, in_dim, rng)


def build_decoder(cfg: ComponentConfig, in_dim: int, n_classes: int, rng) -> model_zoo.MLPDecoder:
    return model_zoo.MLPDecoder("decoder", cfg.params, in_dim, n_classes, rng)


def build_output(cfg: ComponentConfig):
    return _OUTPUT_CLASSES[cfg.name]()


def build_optimizer(cfg: ComponentConfig, params):
    if cfg.name == "sgd":
        return trainer.SGD(params, lr=cfg.params["lr"])
    return trainer.Adam(params, lr=cfg.params["lr"], beta1=cfg.params["beta1"],
                        beta2=cfg.params["beta2"], eps=cfg.params["eps"])


def build_single_task_model(model_cfg: ComponentConfig, task_kind: str, vocabs,
                            n_classes: int, rng) -> model_zoo.SingleTaskModel:
    if model_cfg.name != "single":
        raise SchemaViolation("task %s needs the single-head model, got %r"
                              % (task_kind, model_cfg.name))
    out_cfg = model_cfg.child("output")
    if out_cfg.name != task_kind:
        raise SchemaViolation("task %s configured with output layer %r"
                              % (task_kind, out_cfg.name))
    embedding = build_embedding(model_cfg.child("embedding"), vocabs, rng)
    rep = build_representation(model_cfg.child("representation"), embedding.out_dim, rng)
    decoder = build_decoder(model_cfg.child("decoder"), rep.out_dim, n_classes, rng)
    output = build_output(out_cfg)
    model = model_zoo.SingleTaskModel(embedding, rep, decoder, output)
    model_zoo.assign_parameter_names(model)
    return model


def build_joint_model(model_cfg: ComponentConfig, vocabs, n_doc: int, n_word: int,
                      rng) -> model_zoo.MultiTaskModel:
    """Two heads over one embedding + BiLSTM trunk, shared by reference.

    The doc head owns the attention pooling; the word head consumes the raw
    per-token states, so only the trunk below the pooling can be shared.
    """
    if model_cfg.name != "joint":
        raise SchemaViolation("joint task needs the joint model, got %r" % model_cfg.name)
    doc_rep_cfg = model_cfg.child("doc_representation")
    word_rep_cfg = model_cfg.child("word_representation")
    if doc_rep_cfg.name != "bilstm_attn":
        raise SchemaViolation("joint doc head needs bilstm_attn, got %r" % doc_rep_cfg.name)
    if word_rep_cfg.name != "bilstm_tagger":
        raise SchemaViolation("joint word head needs bilstm_tagger, got %r" % word_rep_cfg.name)

    emb_cfg = model_cfg.child("embedding")

    doc_emb = build_embedding(emb_cfg, vocabs, rng)
    doc_rep = build_representation(doc_rep_cfg, doc_emb.out_dim, rng)
    doc_dec = build_decoder(model_cfg.child("doc_decoder"), doc_rep.out_dim, n_doc, rng)
    doc_model = model_zoo.SingleTaskModel(
        doc_emb, doc_rep, doc_dec, model_zoo.DocClassificationOutput())

    word_emb = build_embedding(emb_cfg, vocabs, rng)
    word_rep = build_representation(word_rep_cfg, word_emb.out_dim, rng)
    word_dec = build_decoder(model_cfg.child("word_decoder"), word_rep.out_dim, n_word, rng)
    word_model = model_zoo.SingleTaskModel(
        word_emb, word_rep, word_dec, model_zoo.WordTaggingOutput())

    mtm = model_zoo.compose_multitask(
        {"doc": doc_model, "word": word_model},
        list(JOINT_SHARED_PATHS),
        {"doc": model_cfg.params["doc_loss_weight"],
         "word": model_cfg.params["word_loss_weight"]})
    model_zoo.assign_parameter_names(mtm)
    return mtm
