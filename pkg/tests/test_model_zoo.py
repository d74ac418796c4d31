"""Model stage contracts: shapes, init conventions, sharing, persistence."""

import numpy as np
import pytest

from textforge import ops
from textforge.data_handler import Batch, VocabBundle
from textforge.errors import (CorruptFile, DimMismatch, IncompatibleShare,
                              MalformedLine, MultiTaskArity, NoStyleSelected,
                              ShapeMismatch)
from textforge.featurizer import CAP_CLASSES, GAZ_NONE
from textforge.model_zoo import (BiLSTMAttnRepresentation, BiLSTMModule,
                                 BiLSTMTaggerRepresentation,
                                 DocClassificationOutput, DocNNRepresentation,
                                 MLPDecoder, MultiTaskModel, SingleTaskModel,
                                 TokenEmbedding, WordTaggingOutput,
                                 assign_parameter_names, compose_multitask,
                                 get_module, load_module_into,
                                 load_pretrained_embeddings, save_module,
                                 set_module)
from textforge.tensor import Tensor
from textforge.vocab import Vocabulary

F32 = np.float32


def make_vocabs():
    return VocabBundle(
        token=Vocabulary(["alarm", "play", "set", "the"]),
        char=Vocabulary(list("aelmprsty")),
        gaz=Vocabulary([GAZ_NONE, "city"]),
        cap=Vocabulary(list(CAP_CLASSES)),
    )


def emb_config(word=6, char=0, gaz=0, cap=0, widths=(2, 3), filters=5, highway=1):
    return {
        "word_dim": word, "char_dim": char, "gaz_dim": gaz, "cap_dim": cap,
        "char_filter_widths": list(widths), "char_num_filters": filters,
        "char_highway_layers": highway,
    }


def make_batch(vocabs, b=2, t=3, max_chars=4, rng=None, pad_last=0,
               doc_labels=None, word_labels=None):
    rng = rng or np.random.default_rng(3)
    token_ids = rng.integers(2, len(vocabs.token), size=(b, t)).astype(np.int64)
    char_ids = rng.integers(2, len(vocabs.char), size=(b, t, max_chars)).astype(np.int64)
    gaz = rng.integers(2, len(vocabs.gaz), size=(b, t)).astype(np.int64)
    cap = rng.integers(2, len(vocabs.cap), size=(b, t)).astype(np.int64)
    mask = np.ones((b, t), dtype=F32)
    lengths = np.full(b, t, dtype=np.int64)
    if pad_last:
        token_ids[-1, t - pad_last:] = 0
        char_ids[-1, t - pad_last:] = 0
        gaz[-1, t - pad_last:] = 0
        cap[-1, t - pad_last:] = 0
        mask[-1, t - pad_last:] = 0.0
        lengths[-1] = t - pad_last
    return Batch(token_ids=token_ids, char_ids=char_ids,
                 dense_feats={"gaz": gaz, "cap": cap},
                 lengths=lengths, mask=mask,
                 doc_labels=doc_labels, word_labels=word_labels)


class TestTokenEmbedding:
    def test_out_dim_sums_enabled_styles(self):
        vocabs = make_vocabs()
        rng = np.random.default_rng(0)
        emb = TokenEmbedding("embedding", emb_config(word=6, char=2, gaz=2, cap=3), vocabs, rng)
        # word 6 + char 5 filters x 2 widths + gaz 2 + cap 3
        assert emb.out_dim == 6 + 10 + 2 + 3
        out = emb.forward(make_batch(vocabs))
        assert out.shape == (2, 3, emb.out_dim)

    def test_no_style_selected(self):
        with pytest.raises(NoStyleSelected):
            TokenEmbedding("embedding", emb_config(word=0), make_vocabs(),
                           np.random.default_rng(0))

    def test_pad_rows_start_zero(self):
        vocabs = make_vocabs()
        emb = TokenEmbedding("embedding", emb_config(word=4, char=2, gaz=2, cap=2),
                             vocabs, np.random.default_rng(1))
        for pname in ("word.table", "char.table", "gaz.table", "cap.table"):
            table = emb.named_parameters()[pname].data
            assert not table[0].any(), pname
            assert table[1].any(), pname  # unk row is trained, not pinned to zero

    def test_word_only_is_plain_lookup(self):
        vocabs = make_vocabs()
        emb = TokenEmbedding("embedding", emb_config(word=5), vocabs,
                             np.random.default_rng(2))
        batch = make_batch(vocabs)
        out = emb.forward(batch)
        expected = emb.named_parameters()["word.table"].data[batch.token_ids]
        assert np.array_equal(out.data, expected)

    def test_same_seed_same_init(self):
        vocabs = make_vocabs()
        cfg = emb_config(word=4, char=3, gaz=2, cap=2)
        a = TokenEmbedding("e", cfg, vocabs, np.random.default_rng(7))
        b = TokenEmbedding("e", cfg, vocabs, np.random.default_rng(7))
        for name, pa in a.named_parameters().items():
            assert np.array_equal(pa.data, b.named_parameters()[name].data), name

    def test_char_widths_must_be_positive(self):
        with pytest.raises(ShapeMismatch):
            TokenEmbedding("e", emb_config(word=0, char=2, widths=(0,)), make_vocabs(),
                           np.random.default_rng(0))


class TestPretrainedEmbeddings:
    def _write(self, tmp_path, lines):
        path = tmp_path / "vectors.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return str(path)

    def test_overlay_and_skip_oov(self, tmp_path):
        vocab = Vocabulary(["alarm", "play"])
        path = self._write(tmp_path, [
            "alarm 1.0 2.0 3.0",
            "zebra 9.0 9.0 9.0",
            "",
            "<pad> 5.0 5.0 5.0",
        ])
        table = load_pretrained_embeddings(path, vocab, 3, np.random.default_rng(0))
        assert table.shape == (4, 3)
        assert table[vocab.index["alarm"]].tolist() == [1.0, 2.0, 3.0]
        assert not table[Vocabulary.PAD_ID].any()  # pad pinned to zero over the file row
        assert table[vocab.index["play"]].any()    # untouched rows keep random init

    def test_malformed_line(self, tmp_path):
        vocab = Vocabulary(["alarm"])
        with pytest.raises(MalformedLine):
            load_pretrained_embeddings(self._write(tmp_path, ["alarm"]), vocab, 3,
                                       np.random.default_rng(0))
        with pytest.raises(MalformedLine):
            load_pretrained_embeddings(self._write(tmp_path, ["alarm 1.0 oops 3.0"]),
                                       vocab, 3, np.random.default_rng(0))

    def test_dim_mismatch(self, tmp_path):
        vocab = Vocabulary(["alarm"])
        with pytest.raises(DimMismatch):
            load_pretrained_embeddings(self._write(tmp_path, ["alarm 1.0 2.0"]), vocab, 3,
                                       np.random.default_rng(0))


def _emb_tensor(rng, b, t, d):
    return Tensor((rng.standard_normal((b, t, d)) * 0.5).astype(F32))


class TestRepresentations:
    def test_docnn_shape_and_padding_invariance(self):
        rng = np.random.default_rng(4)
        rep = DocNNRepresentation("rep", {"filter_widths": [2, 3], "num_filters": 4}, 5, rng)
        assert rep.out_dim == 8
        emb = _emb_tensor(rng, 1, 3, 5)
        out = rep.forward(emb, np.ones((1, 3), dtype=F32))
        padded = Tensor(np.concatenate([emb.data, np.zeros((1, 2, 5), dtype=F32)], axis=1))
        mask = np.array([[1, 1, 1, 0, 0]], dtype=F32)
        out_p = rep.forward(padded, mask)
        assert np.array_equal(out.data, out_p.data)

    def test_docnn_empty_sequence_is_zero(self):
        rep = DocNNRepresentation("rep", {"filter_widths": [2], "num_filters": 4}, 5,
                                  np.random.default_rng(4))
        out = rep.forward(Tensor(np.zeros((2, 0, 5), dtype=F32)), np.zeros((2, 0), dtype=F32))
        assert out.shape == (2, 4)
        assert not out.data.any()

    def test_bilstm_attn_shape_and_padding_invariance(self):
        rng = np.random.default_rng(5)
        rep = BiLSTMAttnRepresentation("rep", {"hidden_dim": 3, "attention_dim": 2}, 4, rng)
        assert rep.out_dim == 6
        emb = _emb_tensor(rng, 1, 4, 4)
        out = rep.forward(emb, np.ones((1, 4), dtype=F32))
        padded = Tensor(np.concatenate([emb.data, np.zeros((1, 3, 4), dtype=F32)], axis=1))
        mask = np.array([[1, 1, 1, 1, 0, 0, 0]], dtype=F32)
        out_p = rep.forward(padded, mask)
        assert out.shape == (1, 6)
        assert np.array_equal(out.data, out_p.data)

    def test_tagger_shape_and_masked_tail(self):
        rng = np.random.default_rng(6)
        rep = BiLSTMTaggerRepresentation("rep", {"hidden_dim": 3}, 4, rng)
        emb = _emb_tensor(rng, 2, 5, 4)
        mask = np.ones((2, 5), dtype=F32)
        mask[1, 3:] = 0.0
        out = rep.forward(emb, mask)
        assert out.shape == (2, 5, 6)
        # masked steps hold state: fwd half repeats the last valid hidden,
        # bwd half never left its zero init
        assert np.array_equal(out.data[1, 3, :3], out.data[1, 2, :3])
        assert not out.data[1, 3:, 3:].any()
        # padding invariance at fixed batch shape: the valid prefix is bitwise
        # unaffected by extra masked steps
        short = rep.forward(Tensor(emb.data[:, :3]), np.ones((2, 3), dtype=F32))
        assert np.array_equal(out.data[1, :3], short.data[1])

    def test_tagger_empty_sequence(self):
        rep = BiLSTMTaggerRepresentation("rep", {"hidden_dim": 3}, 4,
                                         np.random.default_rng(6))
        out = rep.forward(Tensor(np.zeros((2, 0, 4), dtype=F32)), np.zeros((2, 0), dtype=F32))
        assert out.shape == (2, 0, 6)

    def test_input_dim_checked(self):
        rep = DocNNRepresentation("rep", {"filter_widths": [2], "num_filters": 4}, 5,
                                  np.random.default_rng(4))
        with pytest.raises(ShapeMismatch):
            rep.forward(Tensor(np.zeros((1, 3, 7), dtype=F32)), np.ones((1, 3), dtype=F32))

    def test_forget_gate_bias_starts_at_one(self):
        mod = BiLSTMModule("bilstm", {"hidden_dim": 4}, 3, np.random.default_rng(0))
        for direction in ("fwd", "bwd"):
            bias = mod.named_parameters()["%s.bias" % direction].data
            assert bias[4:8].tolist() == [1.0] * 4
            assert not bias[:4].any() and not bias[8:].any()


class TestMLPDecoder:
    def test_single_affine_when_no_hidden(self):
        dec = MLPDecoder("decoder", {"hidden_dims": []}, 4, 3, np.random.default_rng(0))
        names = set(dec.named_parameters())
        assert names == {"w0", "b0"}
        out = dec.forward(Tensor(np.ones((2, 4), dtype=F32)))
        assert out.shape == (2, 3)

    def test_hidden_stack_shapes(self):
        dec = MLPDecoder("decoder", {"hidden_dims": [6, 5]}, 4, 3, np.random.default_rng(0))
        shapes = {n: p.shape for n, p in dec.named_parameters().items()}
        assert shapes["w0"] == (4, 6)
        assert shapes["w1"] == (6, 5)
        assert shapes["w2"] == (5, 3)
        # works on sequence logits too
        out = dec.forward(Tensor(np.ones((2, 7, 4), dtype=F32)))
        assert out.shape == (2, 7, 3)

    def test_input_dim_checked(self):
        dec = MLPDecoder("decoder", {"hidden_dims": []}, 4, 3, np.random.default_rng(0))
        with pytest.raises(ShapeMismatch):
            dec.forward(Tensor(np.ones((2, 5), dtype=F32)))


class TestOutputLayers:
    def test_doc_output(self):
        logits = Tensor(np.array([[2.0, 1.0, -1.0], [0.0, 3.0, 0.0]], dtype=F32))
        out = DocClassificationOutput().forward(logits, None, np.ones((2, 1), dtype=F32))
        assert out.preds.tolist() == [0, 1]
        np.testing.assert_allclose(out.scores.sum(axis=-1), 1.0, atol=1e-6)
        assert out.loss is None
        with_loss = DocClassificationOutput().forward(logits, np.array([0, 1]), None)
        assert with_loss.loss is not None and with_loss.loss.data.size == 1

    def test_word_output_ignores_padded_positions(self):
        rng = np.random.default_rng(9)
        core = rng.standard_normal((1, 3, 2)).astype(F32)
        tail = rng.standard_normal((1, 2, 2)).astype(F32) * 100
        labels = np.array([[0, 1, 0]], dtype=np.int64)
        out = WordTaggingOutput().forward(Tensor(core), labels, np.ones((1, 3), dtype=F32))
        padded_logits = np.concatenate([core, tail], axis=1)
        padded_labels = np.array([[0, 1, 0, 0, 0]], dtype=np.int64)
        mask = np.array([[1, 1, 1, 0, 0]], dtype=F32)
        out_p = WordTaggingOutput().forward(Tensor(padded_logits), padded_labels, mask)
        assert float(out.loss.data) == float(out_p.loss.data)

    def test_rank_checked(self):
        with pytest.raises(ShapeMismatch):
            DocClassificationOutput().forward(Tensor(np.zeros((1, 2, 3), dtype=F32)), None, None)
        with pytest.raises(ShapeMismatch):
            WordTaggingOutput().forward(Tensor(np.zeros((1, 2), dtype=F32)), None, None)


def build_doc_model(vocabs, rng, n_classes=3, attn=False):
    emb = TokenEmbedding("embedding", emb_config(word=4), vocabs, rng)
    if attn:
        rep = BiLSTMAttnRepresentation("representation",
                                       {"hidden_dim": 3, "attention_dim": 2},
                                       emb.out_dim, rng)
    else:
        rep = DocNNRepresentation("representation",
                                  {"filter_widths": [2], "num_filters": 4}, emb.out_dim, rng)
    dec = MLPDecoder("decoder", {"hidden_dims": []}, rep.out_dim, n_classes, rng)
    return SingleTaskModel(emb, rep, dec, DocClassificationOutput())


def build_word_model(vocabs, rng, n_tags=2, hidden=3):
    emb = TokenEmbedding("embedding", emb_config(word=4), vocabs, rng)
    rep = BiLSTMTaggerRepresentation("representation", {"hidden_dim": hidden},
                                     emb.out_dim, rng)
    dec = MLPDecoder("decoder", {"hidden_dims": []}, rep.out_dim, n_tags, rng)
    return SingleTaskModel(emb, rep, dec, WordTaggingOutput())


class TestSingleTaskModel:
    def test_stage_wiring_and_param_paths(self):
        vocabs = make_vocabs()
        model = build_doc_model(vocabs, np.random.default_rng(0))
        names = set(model.named_parameters())
        assert "embedding.word.table" in names
        assert "representation.conv2" in names
        assert "decoder.w0" in names
        batch = make_batch(vocabs, doc_labels=np.array([0, 1], dtype=np.int64))
        out = model.forward(batch)
        assert out.preds.shape == (2,)
        assert out.scores.shape == (2, 3)
        assert out.loss is not None

    def test_sequence_shape_disagreement_rejected(self):
        vocabs = make_vocabs()
        rng = np.random.default_rng(0)
        emb = TokenEmbedding("embedding", emb_config(word=4), vocabs, rng)
        rep = DocNNRepresentation("representation",
                                  {"filter_widths": [2], "num_filters": 4}, emb.out_dim, rng)
        dec = MLPDecoder("decoder", {"hidden_dims": []}, rep.out_dim, 2, rng)
        with pytest.raises(ShapeMismatch):
            SingleTaskModel(emb, rep, dec, WordTaggingOutput())

    def test_compute_loss_false_skips_loss(self):
        vocabs = make_vocabs()
        model = build_doc_model(vocabs, np.random.default_rng(0))
        batch = make_batch(vocabs, doc_labels=np.array([0, 1], dtype=np.int64))
        assert model.forward(batch, compute_loss=False).loss is None


class TestModulePersistence:
    def test_round_trip(self, tmp_path):
        vocabs = make_vocabs()
        emb = TokenEmbedding("embedding", emb_config(word=4, char=2), vocabs,
                             np.random.default_rng(1))
        path = str(tmp_path / "emb.mod")
        save_module(emb, path)
        twin = TokenEmbedding("embedding", emb_config(word=4, char=2), vocabs,
                              np.random.default_rng(99))
        load_module_into(twin, path)
        for name, param in emb.named_parameters().items():
            assert np.array_equal(param.data, twin.named_parameters()[name].data), name

    def test_class_mismatch(self, tmp_path):
        rng = np.random.default_rng(0)
        dec = MLPDecoder("decoder", {"hidden_dims": []}, 4, 3, rng)
        path = str(tmp_path / "dec.mod")
        save_module(dec, path)
        rep = DocNNRepresentation("rep", {"filter_widths": [2], "num_filters": 4}, 5, rng)
        with pytest.raises(IncompatibleShare):
            load_module_into(rep, path)

    def test_param_name_set_mismatch(self, tmp_path):
        rng = np.random.default_rng(0)
        dec = MLPDecoder("decoder", {"hidden_dims": []}, 4, 3, rng)
        path = str(tmp_path / "dec.mod")
        save_module(dec, path)
        deeper = MLPDecoder("decoder", {"hidden_dims": [5]}, 4, 3, rng)
        with pytest.raises(IncompatibleShare):
            load_module_into(deeper, path)

    def test_shape_mismatch(self, tmp_path):
        rng = np.random.default_rng(0)
        dec = MLPDecoder("decoder", {"hidden_dims": []}, 4, 3, rng)
        path = str(tmp_path / "dec.mod")
        save_module(dec, path)
        wider = MLPDecoder("decoder", {"hidden_dims": []}, 6, 3, rng)
        with pytest.raises(ShapeMismatch):
            load_module_into(wider, path)

    def test_wrong_container_kind(self, tmp_path):
        from textforge import binio
        from textforge.model_zoo import MODULE_MAGIC, MODULE_VERSION
        path = str(tmp_path / "other.mod")
        binio.write_container(path, MODULE_MAGIC, MODULE_VERSION, {"container": "other"})
        rng = np.random.default_rng(0)
        dec = MLPDecoder("decoder", {"hidden_dims": []}, 4, 3, rng)
        with pytest.raises(CorruptFile):
            load_module_into(dec, path)


def build_joint(vocabs, seed=0):
    rng = np.random.default_rng(seed)
    doc = build_doc_model(vocabs, rng, n_classes=3, attn=True)
    word = build_word_model(vocabs, rng, n_tags=2)
    return compose_multitask({"doc": doc, "word": word},
                             ("embedding", "representation.bilstm"))


class TestMultiTask:
    def test_shared_modules_are_same_object(self):
        vocabs = make_vocabs()
        model = build_joint(vocabs)
        doc, word = model.tasks["doc"], model.tasks["word"]
        assert get_module(doc, "embedding") is get_module(word, "embedding")
        assert get_module(doc, "representation.bilstm") is get_module(word, "representation.bilstm")
        assert get_module(doc, "decoder") is not get_module(word, "decoder")

    def test_parameters_count_shared_once(self):
        vocabs = make_vocabs()
        model = build_joint(vocabs)
        named = model.named_parameters()
        unique = model.parameters()
        shared = [n for n, p in named.items()
                  if sum(1 for q in named.values() if q is p) == 2]
        assert len(unique) == len(named) - len(shared) // 2
        assert any(n.startswith("doc.embedding.") for n in shared)
        assert any(n.startswith("word.representation.bilstm.") for n in shared)

    def test_doc_loss_reaches_trunk_not_word_head(self):
        vocabs = make_vocabs()
        model = build_joint(vocabs)
        batch = make_batch(vocabs, doc_labels=np.array([0, 1], dtype=np.int64))
        batch.task_id = 0
        name, out = model.forward(batch)
        assert name == "doc"
        out.loss.backward()
        named = model.named_parameters()
        assert named["doc.embedding.word.table"].grad is not None
        assert named["word.decoder.w0"].grad is None
        assert named["word.representation.bilstm.fwd.w_ih"].grad is not None  # shared trunk

    def test_incompatible_share_on_config_diff(self):
        vocabs = make_vocabs()
        rng = np.random.default_rng(0)
        doc = build_doc_model(vocabs, rng, attn=True)
        word = build_word_model(vocabs, rng, hidden=5)  # different trunk width
        with pytest.raises(IncompatibleShare):
            compose_multitask({"doc": doc, "word": word},
                              ("embedding", "representation.bilstm"))

    def test_arity_checked(self):
        vocabs = make_vocabs()
        doc = build_doc_model(vocabs, np.random.default_rng(0))
        with pytest.raises(MultiTaskArity):
            compose_multitask({"doc": doc}, ())
        with pytest.raises(MultiTaskArity):
            MultiTaskModel({"doc": doc}, (), {})

    def test_task_dispatch_and_weights(self):
        vocabs = make_vocabs()
        model = build_joint(vocabs)
        assert model.task_for(0) == "doc"
        assert model.task_for(1) == "word"
        assert model.loss_weights == {"doc": 1.0, "word": 1.0}
        batch = make_batch(vocabs, word_labels=np.zeros((2, 3), dtype=np.int64))
        batch.task_id = 1
        name, out = model.forward(batch)
        assert name == "word"
        assert out.preds.shape == (2, 3)

    def test_assign_parameter_names_first_wins(self):
        vocabs = make_vocabs()
        model = build_joint(vocabs)
        assign_parameter_names(model)
        named = model.named_parameters()
        shared = named["doc.embedding.word.table"]
        assert shared is named["word.embedding.word.table"]
        assert shared.name == "doc.embedding.word.table"
        assert named["word.decoder.w0"].name == "word.decoder.w0"

    def test_get_set_module_errors(self):
        vocabs = make_vocabs()
        doc = build_doc_model(vocabs, np.random.default_rng(0))
        with pytest.raises(IncompatibleShare):
            get_module(doc, "nonsense")
        with pytest.raises(IncompatibleShare):
            set_module(doc, "representation.nonsense", doc.decoder)
