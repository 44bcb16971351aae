import numpy as np
import pytest
import torch

import htla.model as model_mod
from htla.data import Sample, resolve_label_ids
from htla.hierarchy import parse_taxonomy
from htla.model import (
    FitResult,
    HTLAModel,
    TrainConfig,
    encode_samples,
    evaluate_model,
    fit,
)
from htla.numerics import parse_checkpoint, restore_parameters
from htla.text_encoder import build_vocab


def tiny_config(**kw):
    base = dict(d_h=8, d_p=3, n_layers=1, n_text_heads=2, n_graph_heads=2,
                max_len=8, batch_size=4, dropout_rate=0.0, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def tiny_setup(**kw):
    tax = parse_taxonomy("Root\tscience\tarts\nscience\tphysics\tbiology\narts\tmusic")
    corpus = ["atoms and quarks", "cells divide", "violin solo", "paint and canvas"]
    vocab = build_vocab(corpus)
    model = HTLAModel(tiny_config(**kw), vocab, tax)
    samples = resolve_label_ids(
        [
            Sample(text="atoms and quarks", labels=["science", "physics"]),
            Sample(text="cells divide", labels=["science", "biology"]),
            Sample(text="violin solo", labels=["arts", "music"]),
            Sample(text="paint and canvas", labels=["arts"]),
        ],
        tax,
    )
    ids, mask, Y = encode_samples(vocab, samples, model.cfg.max_len, tax.num_labels)
    return model, tax, (ids, mask, Y)


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.d_h == 64 and cfg.lr == 1e-3 and cfg.patience == 6

    def test_head_divisibility(self):
        with pytest.raises(ValueError, match="divisible"):
            TrainConfig(d_h=10, n_text_heads=4)

    def test_positive_fields(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)

    def test_round_trip_dict(self):
        cfg = TrainConfig(d_h=32, n_text_heads=4, n_graph_heads=4)
        assert TrainConfig(**cfg.to_dict()) == cfg


class TestForward:
    def test_shapes(self):
        model, tax, (ids, mask, Y) = tiny_setup()
        out = model.forward(ids, mask)
        M, K = ids.shape[0], tax.num_labels
        assert out.logits.shape == (M, K)
        assert out.probs.shape == (M, K)
        assert out.binary.shape == (M, K)
        assert out.h_text.shape == (M, model.cfg.d_h)
        assert out.L.shape == (K, model.cfg.d_h)

    def test_zero_classifier_gives_half_probs(self):
        model, _, (ids, mask, _) = tiny_setup()
        with torch.no_grad():
            model.W_c.value.zero_()
            model.b.value.zero_()
        out = model.forward(ids, mask)
        np.testing.assert_allclose(out.probs.detach().numpy(), 0.5, atol=1e-15)
        assert (out.binary == 1).all()  # 0.5 threshold is inclusive

    def test_matches_per_label_construction(self):
        # literal route: logit_i is element i of W_c^T (h + f_i) + b
        model, tax, (ids, mask, _) = tiny_setup()
        out = model.forward(ids, mask)
        W = model.W_c.value.detach().numpy()
        b = model.b.value.detach().numpy()
        h = out.h_text.detach().numpy()
        L = out.L.detach().numpy()
        expected = np.empty_like(out.logits.detach().numpy())
        for m in range(h.shape[0]):
            for i in range(tax.num_labels):
                expected[m, i] = (W.T @ (h[m] + L[i]) + b)[i]
        np.testing.assert_allclose(out.logits.detach().numpy(), expected, atol=1e-12)

    def test_determinism_eval_mode(self):
        model, _, (ids, mask, _) = tiny_setup()
        a = model.forward(ids, mask).logits
        b = model.forward(ids, mask).logits
        assert torch.equal(a, b)

    def test_seed_changes_parameters(self):
        m0, _, _ = tiny_setup(seed=0)
        m1, _, _ = tiny_setup(seed=1)
        assert not torch.equal(m0.W_c.value, m1.W_c.value)

    def test_very_negative_logits_predict_nothing(self):
        model, _, (ids, mask, _) = tiny_setup()
        with torch.no_grad():
            model.W_c.value.zero_()
            model.b.value.fill_(-10.0)
        out = model.forward(ids, mask)
        assert out.binary.sum() == 0


class TestTrainStep:
    def test_returns_finite_losses(self):
        model, _, (ids, mask, Y) = tiny_setup()
        stats = model.train_step(ids, mask, Y)
        assert np.isfinite(stats["loss_total"])
        assert stats["loss_total"] == pytest.approx(stats["loss_bce"] + stats["loss_tla"])

    def test_tla_disabled_zeroes_component(self):
        model, _, (ids, mask, Y) = tiny_setup(tla_enabled=False)
        stats = model.train_step(ids, mask, Y)
        assert stats["loss_tla"] == 0.0
        assert stats["loss_total"] == stats["loss_bce"]

    def test_deterministic_loss_trace(self):
        traces = []
        for _ in range(2):
            model, _, (ids, mask, Y) = tiny_setup()
            traces.append([model.train_step(ids, mask, Y)["loss_total"] for _ in range(4)])
        assert traces[0] == traces[1]

    def test_loss_decreases_over_steps(self):
        model, _, (ids, mask, Y) = tiny_setup()
        first = model.train_step(ids, mask, Y)["loss_total"]
        for _ in range(49):
            last = model.train_step(ids, mask, Y)["loss_total"]
        assert last < first

    def test_grads_cleared_after_step(self):
        model, _, (ids, mask, Y) = tiny_setup()
        model.train_step(ids, mask, Y)
        for p in model.parameters().values():
            assert p.grad is None or p.grad.abs().sum() == 0


class TestFit:
    def test_patience_stops_after_exact_budget(self, monkeypatch):
        model, _, data = tiny_setup()
        scores = iter([0.9] + [0.1] * 50)  # epoch 1 best, then monotone worse
        monkeypatch.setattr(
            model_mod, "evaluate_model", lambda *a, **k: (0.5, next(scores))
        )
        res = fit(model, data, data, tiny_config(patience=6, max_epochs=50))
        assert len(res.history) == 7  # 1 best + 6 non-improving
        assert res.stopped_early and res.best_epoch == 1

    def test_plateau_counts_as_no_improvement(self, monkeypatch):
        model, _, data = tiny_setup()
        monkeypatch.setattr(model_mod, "evaluate_model", lambda *a, **k: (0.5, 0.7))
        res = fit(model, data, data, tiny_config(patience=3, max_epochs=50))
        assert len(res.history) == 4
        assert res.best_epoch == 1

    def test_max_epochs_one(self):
        model, _, data = tiny_setup()
        res = fit(model, data, data, tiny_config(max_epochs=1))
        assert len(res.history) == 1 and not res.stopped_early
        rec = res.history[0]
        assert set(rec) == {"epoch", "loss_bce", "loss_tla", "val_micro_f1",
                            "val_macro_f1", "seconds"}

    def test_best_state_restored(self, monkeypatch):
        model, _, data = tiny_setup()
        scores = iter([0.9] + [0.1] * 50)
        monkeypatch.setattr(
            model_mod, "evaluate_model", lambda *a, **k: (0.5, next(scores))
        )
        res = fit(model, data, data, tiny_config(patience=2, max_epochs=10))
        ids, mask, _ = data
        after = model.forward(ids, mask).logits
        fresh, _, _ = tiny_setup()
        restore_parameters(fresh.parameters(), parse_checkpoint(res.best_state))
        np.testing.assert_array_equal(
            after.detach().numpy(), fresh.forward(ids, mask).logits.detach().numpy()
        )

    def test_empty_split_rejected(self):
        model, _, (ids, mask, Y) = tiny_setup()
        empty = (ids[:0], mask[:0], Y[:0])
        with pytest.raises(ValueError, match="empty training"):
            fit(model, empty, (ids, mask, Y))
        with pytest.raises(ValueError, match="empty validation"):
            fit(model, (ids, mask, Y), empty)


class TestCheckpointing:
    def test_round_trip_bit_identical_logits(self, tmp_path):
        from htla.numerics import load_checkpoint, save_checkpoint

        model, _, (ids, mask, Y) = tiny_setup()
        model.train_step(ids, mask, Y)
        before = model.forward(ids, mask).logits.detach().numpy()
        path = tmp_path / "model.bin"
        save_checkpoint(path, model.parameters())
        clone, _, _ = tiny_setup(seed=99)
        restore_parameters(clone.parameters(), load_checkpoint(path))
        after = clone.forward(ids, mask).logits.detach().numpy()
        np.testing.assert_array_equal(before, after)


class TestAblations:
    def test_flags_change_outputs(self):
        base, _, (ids, mask, _) = tiny_setup()
        ref = base.forward(ids, mask).logits
        for flag in ("use_name_embedding", "use_node_embedding", "use_enhancer"):
            variant, _, _ = tiny_setup(**{flag: False})
            assert not torch.equal(variant.forward(ids, mask).logits, ref), flag


class TestEvaluateModel:
    def test_perfect_model_scores_one(self):
        model, tax, (ids, mask, Y) = tiny_setup()
        for _ in range(200):
            model.train_step(ids, mask, Y)
        mi, ma = evaluate_model(model, ids, mask, Y)
        assert mi == 1.0 and ma > 0.0

    def test_batched_predict_matches_single_shot(self):
        model, _, (ids, mask, _) = tiny_setup()
        full = model.predict(ids, mask, batch_size=64)
        split = model.predict(ids, mask, batch_size=2)
        np.testing.assert_allclose(
            full.logits.numpy(), split.logits.numpy(), atol=1e-12
        )
