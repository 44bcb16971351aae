import numpy as np
import pytest
import torch

from htla.numerics import grad_check
from htla.text_encoder import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    TextEncoder,
    TextEncoderConfig,
    batch_tensors,
    build_vocab,
    load_vocab,
    save_vocab,
    tokenize,
    word_tokens,
)


def make_encoder(vocab_size=12, d_h=16, n_layers=2, n_heads=4, max_len=16, seed=0):
    rng = torch.Generator().manual_seed(seed)
    enc = TextEncoder(vocab_size, TextEncoderConfig(d_h=d_h, n_layers=n_layers,
                                                   n_heads=n_heads, max_len=max_len), rng)
    return enc


class TestVocab:
    def test_frequency_order(self):
        v = build_vocab(["a b", "a"], min_freq=1)
        assert v.id("a") < v.id("b")
        assert set(v.id_to_token[:4]) == {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}

    def test_min_freq_cutoff(self):
        v = build_vocab(["a b", "a"], min_freq=2)
        assert v.id("b") == UNK_ID
        assert v.id("a") != UNK_ID

    def test_max_vocab_cap(self):
        rng = np.random.default_rng(0)
        docs = [" ".join(f"w{rng.integers(500)}" for _ in range(30)) for _ in range(200)]
        v = build_vocab(docs, min_freq=1, max_vocab=100)
        assert len(v) <= 100 + 4

    def test_empty_corpus(self):
        with pytest.raises(ValueError, match="empty corpus"):
            build_vocab([])

    def test_word_tokens(self):
        assert word_tokens("Hello, World! x2") == ["hello", "world", "x2"]

    def test_save_load_round_trip(self, tmp_path):
        v = build_vocab(["alpha beta gamma", "alpha beta"])
        path = tmp_path / "vocab.txt"
        save_vocab(path, v)
        v2 = load_vocab(path)
        assert v2.id_to_token == v.id_to_token


class TestTokenize:
    def test_basic(self):
        v = build_vocab(["hello world"])
        seq = tokenize(v, "hello world", 5)
        assert seq.ids == [CLS_ID, v.id("hello"), v.id("world"), SEP_ID, PAD_ID]
        assert seq.attention_mask == [1, 1, 1, 1, 0]

    def test_empty_text(self):
        v = build_vocab(["x"])
        seq = tokenize(v, "", 4)
        assert seq.ids == [CLS_ID, SEP_ID, PAD_ID, PAD_ID]
        assert seq.attention_mask == [1, 1, 0, 0]

    def test_unknown_word(self):
        v = build_vocab(["x"])
        seq = tokenize(v, "zzz", 4)
        assert seq.ids[1] == UNK_ID

    def test_truncation_keeps_earliest(self):
        v = build_vocab(["a b c d"])
        seq = tokenize(v, "a b c d", 4)
        assert seq.ids == [CLS_ID, v.id("a"), v.id("b"), SEP_ID]

    def test_max_len_too_small(self):
        v = build_vocab(["x"])
        with pytest.raises(ValueError):
            tokenize(v, "x", 1)


class TestEncodeBatch:
    def test_shape_contract(self):
        enc = make_encoder()
        ids = torch.randint(0, 12, (2, 8))
        ids[:, 0] = CLS_ID
        mask = torch.ones(2, 8, dtype=torch.float64)
        H, h_text = enc.encode_batch(ids, mask)
        assert H.shape == (2, 8, 16)
        assert h_text.shape == (2, 16)

    def test_determinism(self):
        enc = make_encoder()
        ids = torch.tensor([[CLS_ID, 5, 6, SEP_ID], [CLS_ID, 5, 6, SEP_ID]])
        mask = torch.ones(2, 4, dtype=torch.float64)
        _, h = enc.encode_batch(ids, mask)
        assert torch.equal(h[0], h[1])

    def test_too_long_sequence(self):
        enc = make_encoder(max_len=8)
        ids = torch.zeros(1, 9, dtype=torch.long)
        with pytest.raises(ValueError, match="position table"):
            enc.encode_batch(ids, torch.ones(1, 9, dtype=torch.float64))

    def test_padding_invariance(self):
        enc = make_encoder(max_len=16)
        short = torch.tensor([[CLS_ID, 5, 7, SEP_ID]])
        long = torch.tensor([[CLS_ID, 5, 7, SEP_ID] + [PAD_ID] * 8])
        _, h_short = enc.encode_batch(short, torch.ones(1, 4, dtype=torch.float64))
        mask_long = torch.tensor([[1.0, 1, 1, 1] + [0.0] * 8], dtype=torch.float64)
        _, h_long = enc.encode_batch(long, mask_long)
        np.testing.assert_allclose(h_short.detach().numpy(), h_long.detach().numpy(), atol=1e-10)

    def test_pad_embedding_perturbation_irrelevant(self):
        enc = make_encoder()
        ids = torch.tensor([[CLS_ID, 5, SEP_ID, PAD_ID, PAD_ID]])
        mask = torch.tensor([[1.0, 1, 1, 0, 0]], dtype=torch.float64)
        _, h0 = enc.encode_batch(ids, mask)
        with torch.no_grad():
            enc.token_emb.value[PAD_ID] += 10.0
        _, h1 = enc.encode_batch(ids, mask)
        np.testing.assert_allclose(h0.detach().numpy(), h1.detach().numpy(), atol=1e-10)

    def test_batch_permutation(self):
        enc = make_encoder()
        ids = torch.tensor([[CLS_ID, 4, SEP_ID], [CLS_ID, 7, SEP_ID], [CLS_ID, 9, SEP_ID]])
        mask = torch.ones(3, 3, dtype=torch.float64)
        _, h = enc.encode_batch(ids, mask)
        perm = torch.tensor([2, 0, 1])
        _, hp = enc.encode_batch(ids[perm], mask[perm])
        np.testing.assert_allclose(hp.detach().numpy(), h[perm].detach().numpy(), atol=1e-12)

    def test_gradient_reaches_every_parameter(self):
        enc = make_encoder(vocab_size=10, d_h=8, n_layers=1, n_heads=2, max_len=8)
        ids = torch.tensor([[CLS_ID, 4, 5, SEP_ID], [CLS_ID, 6, 7, SEP_ID]])
        mask = torch.ones(2, 4, dtype=torch.float64)
        params = {"text.token_emb": enc.token_emb}
        params.update(enc.parameters("text"))
        readout = torch.randn(8, generator=torch.Generator().manual_seed(3), dtype=torch.float64)

        def loss():
            _, h = enc.encode_batch(ids, mask)
            return (h * readout).sum() + (h**2).sum()

        err = grad_check(loss, params, max_samples=40)
        assert err < 1e-4
        loss().backward()
        for name, p in params.items():
            assert p.grad is not None and p.grad.abs().sum() > 0, name


class TestBatchTensors:
    def test_mixed_lengths_rejected(self):
        from htla.text_encoder import TokenSequence

        with pytest.raises(ValueError):
            batch_tensors([TokenSequence([1, 2], [1, 1]), TokenSequence([1], [1])])
