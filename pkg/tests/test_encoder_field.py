import numpy as np
import pytest

from unic import field as fld
from unic import nn
from unic.encoder import (init_codebook, init_encoder, sample_latent,
                          sample_latent_np)
from unic.errors import NumericError
from unic.nn.gradcheck import check_gradients

from conftest import rng


def make_encoder(C=4, K=3, hidden=16, input_dim=20, dtype=np.float32, seed=0):
    r = nn.make_rng(seed)
    enc = init_encoder(input_dim, hidden, C, K, r, dtype=dtype)
    cb = init_codebook(C, K, r, dtype=dtype)
    return enc, cb


# -- encoder ------------------------------------------------------------------


def test_encoder_output_shape():
    enc, _ = make_encoder(C=128, K=8, hidden=32, input_dim=10)
    x = nn.Tensor(np.zeros((1, 10), dtype=np.float32))
    assert enc.encode(x).data.shape == (1, 128, 8)
    assert enc.encode_np(np.zeros(10, dtype=np.float32)).shape == (1, 128, 8)


def test_encoder_zero_weights_zero_logits():
    enc, _ = make_encoder()
    for layer in enc.layers:
        layer.weight.data[...] = 0
        layer.bias.data[...] = 0
    out = enc.encode_np(np.ones(20, dtype=np.float32))
    assert np.all(out == 0)


def test_encoder_eval_deterministic():
    enc, _ = make_encoder()
    x = rng(20, 0).normal(0, 1, 20).astype(np.float32)
    assert np.array_equal(enc.encode_np(x), enc.encode_np(x))


def test_encoder_rejects_bad_width():
    enc, _ = make_encoder(input_dim=20)
    with pytest.raises(Exception):
        enc.encode_np(np.zeros(21, dtype=np.float32))


# -- latent sampling ----------------------------------------------------------------


def test_eval_sampling_picks_argmax_codebook_entry():
    enc, cb = make_encoder(C=2, K=4)
    logits = np.zeros((1, 2, 4), dtype=np.float32)
    logits[0, 0, 1] = 9.0
    logits[0, 1, 3] = 9.0
    z = sample_latent_np(logits, cb.data)
    assert z[0, 0] == cb.data[0, 1]
    assert z[0, 1] == cb.data[1, 3]


def test_eval_sampling_argmax_invariance():
    enc, cb = make_encoder(C=6, K=5)
    logits = rng(21, 0).normal(0, 2, (3, 6, 5)).astype(np.float32)
    base = sample_latent_np(logits, cb.data)
    assert np.array_equal(base, sample_latent_np(logits * 3.0, cb.data))
    # any strictly monotone transform preserves the argmax
    assert np.array_equal(base, sample_latent_np(np.tanh(logits) + 7.0,
                                                 cb.data))


def test_uniform_codebook_collapses_to_constant():
    enc, cb = make_encoder(C=3, K=4)
    cb.data[...] = 0.625
    logits = rng(21, 1).normal(0, 1, (2, 3, 4)).astype(np.float32)
    assert np.all(sample_latent_np(logits, cb.data) == 0.625)
    z = sample_latent(nn.Tensor(logits), cb, training=True, rng=rng(21, 2))
    assert np.allclose(z.data, 0.625, atol=1e-6)


def test_train_sampling_hits_exactly_one_entry_per_channel():
    enc, cb = make_encoder(C=5, K=4)
    logits = nn.Tensor(rng(21, 3).normal(0, 1, (2, 5, 4)).astype(np.float32))
    z = sample_latent(logits, cb, training=True, rng=rng(21, 4))
    for n in range(2):
        for c in range(5):
            assert z.data[n, c] in cb.data[c], (n, c)


def test_latent_dim_independent_of_categories():
    for K in (2, 5, 9):
        enc, cb = make_encoder(C=7, K=K, input_dim=12)
        logits = enc.encode_np(np.zeros(12, dtype=np.float32))
        assert sample_latent_np(logits, cb.data).shape == (1, 7)


def test_encoder_codebook_gradients():
    enc, cb = make_encoder(C=4, K=3, hidden=8, input_dim=6, dtype=np.float64)
    x = rng(21, 5).normal(0, 1, (2, 6))
    params = enc.parameters() + [cb]

    def loss_fn(cache):
        r = rng(21, 6)
        logits = enc.encode(nn.Tensor(x), training=True, rng=r)
        z = sample_latent(logits, cb, training=True, rng=r, cache=cache)
        return nn.tsum(nn.mul(z, z))

    err, ok = check_gradients(loss_fn, params, eps=1e-5)
    assert ok, f"max relative gradient error {err:.3e}"


# -- deformation field -----------------------------------------------------------------


def make_field(C=8, hidden=16, dtype=np.float32, seed=0, bands=0):
    return fld.init_field(C, hidden, nn.make_rng(seed), dtype=dtype,
                          positional_encoding=bands)


def test_query_width():
    f = make_field(C=128)
    assert f.query_dim == 131
    f = make_field(C=32)
    assert f.query_dim == 35


def test_build_queries_layout():
    garment = np.array([[0.0, 0.0, 0.0]], dtype=np.float32)
    z = np.zeros(8, dtype=np.float32)
    q = fld.build_queries(garment, z)
    assert q.shape == (1, 11)
    assert np.all(q == 0)
    garment = rng(22, 0).normal(0, 1, (5, 3)).astype(np.float32)
    z = rng(22, 1).normal(0, 1, 8).astype(np.float32)
    q = fld.build_queries(garment, z)
    assert np.array_equal(q[:, :3], garment)
    assert np.all(q[:, 3:] == z)


def test_queries_permutation_equivariant():
    garment = rng(22, 2).normal(0, 1, (7, 3)).astype(np.float32)
    z = rng(22, 3).normal(0, 1, 8).astype(np.float32)
    perm = rng(22, 4).permutation(7)
    assert np.array_equal(fld.build_queries(garment, z)[perm],
                          fld.build_queries(garment[perm], z))


def test_decode_batched_equals_row_serial():
    f = make_field()
    q = rng(22, 5).normal(0, 1, (9, f.query_dim)).astype(np.float32)
    full = fld.decode(f, q)
    rows = np.concatenate([fld.decode(f, q[i:i + 1]) for i in range(9)])
    assert np.max(np.abs(full - rows)) < 1e-6


def test_decode_duplicate_rows_identical():
    f = make_field()
    q = np.tile(rng(22, 6).normal(0, 1, (1, f.query_dim)).astype(np.float32),
                (4, 1))
    out = fld.decode(f, q)
    assert np.all(out == out[0])


def test_decode_worker_split_parity():
    f = make_field()
    q = rng(22, 7).normal(0, 1, (50, f.query_dim)).astype(np.float32)
    a = f.forward_np(q, workers=1)
    b = f.forward_np(q, workers=4)
    assert np.array_equal(a, b)


def test_decode_rejects_bad_width():
    f = make_field()
    with pytest.raises(Exception):
        fld.decode(f, np.zeros((2, f.query_dim + 1), dtype=np.float32))


def test_zero_init_head_displaces_nothing():
    f = make_field()
    garment = rng(22, 8).normal(0, 1, (6, 3)).astype(np.float32)
    z = rng(22, 9).normal(0, 1, 8).astype(np.float32)
    assert np.all(fld.decode(f, fld.build_queries(garment, z)) == 0)
    out = fld.step(garment, z, f)
    assert np.array_equal(out, garment)


def test_step_constant_displacement_and_composition():
    f = make_field()
    f.layers[-1].bias.data[...] = np.array([0, 0.01, 0], dtype=np.float32)
    garment = rng(22, 10).normal(0, 1, (6, 3)).astype(np.float32)
    z = rng(22, 11).normal(0, 1, 8).astype(np.float32)
    one = fld.step(garment, z, f)
    assert np.allclose(one - garment, [0, 0.01, 0], atol=1e-7)
    two = fld.step(one, z, f)
    assert np.allclose(two - garment, [0, 0.02, 0], atol=1e-6)


def test_step_counts_one_query_per_vertex(monkeypatch):
    f = make_field()
    seen = []
    original = fld.DeformationField.forward_np

    def counting(self, q, workers=1):
        seen.append(q.shape[0])
        return original(self, q, workers)

    monkeypatch.setattr(fld.DeformationField, "forward_np", counting)
    garment = np.zeros((13, 3), dtype=np.float32)
    fld.step(garment, np.zeros(8, dtype=np.float32), f)
    assert seen == [13]


def test_root_frame_round_trip():
    r = rng(22, 12)
    from unic.motion import axis_angle_to_rot
    R = axis_angle_to_rot(r.normal(0, 1, 3), 0.8)
    root = r.normal(0, 1, 3)
    pts = r.normal(0, 1, (10, 3))
    local = fld.to_root_frame(pts, R, root)
    back = local @ R.T + root
    assert np.max(np.abs(back - pts)) < 1e-12
    delta = r.normal(0, 1, (10, 3))
    assert np.max(np.abs(fld.from_root_frame_delta(delta @ R, R) - delta)) < 1e-12


def test_step_flags_non_finite():
    f = make_field()
    garment = np.zeros((3, 3), dtype=np.float32)
    garment[1, 1] = np.nan
    with pytest.raises(NumericError):
        fld.step(garment, np.zeros(8, dtype=np.float32), f, frame_index=7)


def test_positional_encoding_widens_queries():
    f = make_field(C=8, bands=2)
    # 3 raw coords + 2 bands * sin/cos * 3 coords
    assert f.query_dim == 8 + 3 + 12
    enc = fld.encode_coords(np.zeros((4, 3)), 2)
    assert enc.shape == (4, 15)


# -- rollout -----------------------------------------------------------------------------


def test_rollout_empty_motion_returns_initial(fitted, idle_ds):
    from unic.train import prepare_clip

    clip = prepare_clip(idle_ds)
    states = fld.rollout(clip.garment[0], clip.pairs[:0], fitted.model_)
    assert len(states) == 1
    assert np.array_equal(states[0], clip.garment[0])


def test_rollout_matches_manual_steps(fitted, idle_ds):
    from unic.train import prepare_clip

    model = fitted.model_
    clip = prepare_clip(idle_ds)
    n = 10
    roots = clip.roots[1:n + 1]
    states = fld.rollout(clip.garment[0], clip.pairs[1:n + 1], model,
                         roots=roots)
    g = clip.garment[0]
    for t in range(n):
        logits = model.encoder.encode_np(clip.pairs[1 + t])
        z = model.sample_np(logits)[0]
        g = fld.step(g, z, model.field, root=roots[t],
                     positional_encoding=model.hyper.positional_encoding)
        assert np.array_equal(states[t + 1], g), t


def test_rollout_eval_mode_deterministic(fitted, idle_ds):
    from unic.train import rollout_dataset

    a = rollout_dataset(fitted.model_, idle_ds)
    b = rollout_dataset(fitted.model_, idle_ds)
    assert np.array_equal(a, b)
