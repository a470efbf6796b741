import numpy as np
import pytest

from varnamer.bpe import PAD_ID
from varnamer.model import (
    ModelConfig,
    ModelError,
    TransformerEncoder,
    load_checkpoint,
    param_count,
    preset,
    save_checkpoint,
)


def small_config(**overrides):
    base = dict(layers=2, heads=2, hidden=16, ffn_dim=32, max_seq=32,
                vocab_size=280, dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


def test_param_count_matches_allocation_exactly():
    rng = np.random.default_rng(0)
    for _ in range(10):
        heads = int(rng.integers(1, 5))
        hidden = heads * int(rng.integers(2, 9))
        config = ModelConfig(
            layers=int(rng.integers(1, 4)),
            heads=heads,
            hidden=hidden,
            ffn_dim=int(rng.integers(4, 40)),
            max_seq=int(rng.integers(4, 64)),
            vocab_size=int(rng.integers(261, 600)),
            dropout=0.1,
        )
        model = TransformerEncoder(config, seed=1)
        assert model.num_params() == param_count(config)


def test_tiny_config_formula_cross_check():
    config = ModelConfig(layers=1, heads=1, hidden=4, ffn_dim=16, max_seq=8,
                         vocab_size=260, dropout=0.0)
    # embeddings 260*4 + 8*4; attn 4*16+16; ffn 2*4*16+16+4; norms 16;
    # embed norm 8; head bias 260
    expected = (260 * 4 + 8 * 4) + (4 * 16 + 16 + 2 * 4 * 16 + 16 + 4 + 16) + 8 + 260
    assert param_count(config) == expected
    assert TransformerEncoder(config, seed=0).num_params() == expected


def test_paper_presets_land_near_published_sizes():
    base = param_count(preset("varbert-base", 50_000))
    small = param_count(preset("varbert-small", 50_000))
    assert abs(base - 125e6) / 125e6 < 0.05
    assert abs(small - 45e6) / 45e6 < 0.05
    assert preset("varbert-small", 50_000).max_seq == 1024
    assert preset("varbert-base", 50_000).max_seq == 512


def test_preset_unknown_name():
    with pytest.raises(ModelError, match="unknown preset"):
        preset("varbert-giant", 100)


def test_config_validation():
    with pytest.raises(ModelError, match="divisible"):
        small_config(hidden=10, heads=3)
    with pytest.raises(ModelError, match="max_seq"):
        small_config(max_seq=1)
    with pytest.raises(ModelError, match="positive"):
        small_config(layers=0)


def test_forward_is_deterministic_in_eval_mode():
    model = TransformerEncoder(small_config(), seed=2)
    ids = np.array([2, 261, 262, 263, 3])
    a = model.forward(ids).data
    b = model.forward(ids).data
    assert np.array_equal(a, b)


def test_forward_softmax_rows_sum_to_one():
    model = TransformerEncoder(small_config(), seed=3)
    logits = model.forward(np.array([2, 261, 262, 3])).data
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    sums = (e / e.sum(axis=-1, keepdims=True)).sum(axis=-1)
    assert np.abs(sums - 1.0).max() < 1e-6


def test_pad_tail_permutation_does_not_change_real_logits():
    model = TransformerEncoder(small_config(), seed=4)
    ids = np.array([[2, 261, 262, 3, PAD_ID, PAD_ID, PAD_ID]])
    mask = np.array([[True] * 4 + [False] * 3])
    base = model.forward(ids, mask).data[0, :4]
    scrambled = ids.copy()
    scrambled[0, 4:] = [270, 275, 279]  # garbage in the pad tail
    other = model.forward(scrambled, mask).data[0, :4]
    assert np.array_equal(base, other)


def test_token_swap_equivariance_with_zeroed_positions():
    model = TransformerEncoder(small_config(), seed=5)
    model.params["embed.pos"].data[:] = 0.0
    a = np.array([261, 262, 263, 264])
    b = np.array([261, 264, 263, 262])  # swap positions 1 and 3
    la = model.forward(a).data
    lb = model.forward(b).data
    assert np.allclose(la[1], lb[3], atol=1e-6)
    assert np.allclose(la[3], lb[1], atol=1e-6)
    assert np.allclose(la[0], lb[0], atol=1e-6)


def test_sequence_length_guard():
    model = TransformerEncoder(small_config(max_seq=8), seed=6)
    with pytest.raises(ModelError, match="truncate"):
        model.forward(np.arange(9) + 261)


def test_token_id_guard():
    model = TransformerEncoder(small_config(), seed=6)
    with pytest.raises(ModelError, match="out of range"):
        model.forward(np.array([2, 280, 3]))


def test_training_forward_requires_rng():
    model = TransformerEncoder(small_config(dropout=0.1), seed=6)
    with pytest.raises(ModelError, match="rng"):
        model.forward(np.array([2, 3]), training=True)


def test_checkpoint_round_trip_bitwise(tmp_path):
    for dtype in (np.float32, np.float64):
        model = TransformerEncoder(small_config(), seed=7, dtype=dtype)
        path = tmp_path / f"m_{np.dtype(dtype).name}.ckpt"
        save_checkpoint(path, model, vocab_hash="abc123", meta={"note": "t"})
        loaded, opt, header = load_checkpoint(path, expected_vocab_hash="abc123")
        assert opt is None
        assert header["meta"]["note"] == "t"
        assert loaded.dtype == np.dtype(dtype)
        for name, tensor in model.params.items():
            assert np.array_equal(tensor.data, loaded.params[name].data)
        ids = np.array([2, 261, 3])
        assert np.array_equal(model.forward(ids).data, loaded.forward(ids).data)


def test_checkpoint_vocab_hash_mismatch_fails(tmp_path):
    model = TransformerEncoder(small_config(), seed=8)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, vocab_hash="right")
    with pytest.raises(ModelError, match="different vocabulary"):
        load_checkpoint(path, expected_vocab_hash="wrong")


def test_checkpoint_optimizer_state_round_trip(tmp_path):
    model = TransformerEncoder(small_config(), seed=9)
    state = {
        "step": 17,
        "m": {k: np.full_like(p.data, 0.5) for k, p in model.params.items()},
        "v": {k: np.full_like(p.data, 0.25) for k, p in model.params.items()},
    }
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, vocab_hash="h", optimizer_state=state)
    _loaded, opt, _ = load_checkpoint(path)
    assert opt["step"] == 17
    for k in state["m"]:
        assert np.array_equal(opt["m"][k], state["m"][k])
        assert np.array_equal(opt["v"][k], state["v"][k])


def test_checkpoint_write_is_atomic(tmp_path):
    model = TransformerEncoder(small_config(), seed=10)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, vocab_hash="h")
    leftovers = [p for p in tmp_path.iterdir() if p.suffix == ".tmp"]
    assert not leftovers


def test_batched_and_single_forward_agree():
    model = TransformerEncoder(small_config(), seed=11)
    ids = np.array([2, 261, 262, 3])
    single = model.forward(ids).data
    batched = model.forward(ids[None, :]).data[0]
    assert np.array_equal(single, batched)
