import numpy as np
import pytest

from affordseg.core import AffordanceTensor, CoverageMask, RgbRaster
from affordseg.mapgen import Sample
from affordseg.refnet import (
    EarlyStopping,
    ModelConfig,
    ModelParams,
    OptimizerState,
    TrainConfig,
    backward,
    batch_loss_and_grad,
    decode_checkpoint,
    encode_checkpoint,
    evaluate_loss,
    forward,
    forward_batch,
    init_params,
    layer_shapes,
    load_checkpoint,
    rmsprop_step,
    save_checkpoint,
    train,
)

from oracles import relative_error

SMALL = ModelConfig(k=1, depth=2, base_channels=2, seed=3)


def random_image(rng, h=16, w=16):
    return RgbRaster(rng.random((h, w, 3)))


def random_sample(rng, h=16, w=16, mask=None):
    y = rng.choice([0.0, 0.5, 1.0], size=(15, h, w), p=[0.6, 0.1, 0.3])
    m = np.ones((h, w), np.uint8) if mask is None else mask
    return Sample(random_image(rng, h, w), AffordanceTensor(y), CoverageMask(m), "s")


def test_forward_shape_and_range(rng):
    cfg = ModelConfig(seed=1)
    probs, _ = forward(init_params(cfg), cfg, random_image(rng, 32, 24))
    assert probs.values.shape == (15, 32, 24)
    assert np.all((probs.values > 0) & (probs.values < 1))


def test_zero_weights_give_one_half(rng):
    params = init_params(SMALL)
    zero = ModelParams(SMALL, {n: np.zeros_like(a) for n, a in params.arrays.items()})
    probs, _ = forward(zero, SMALL, random_image(rng))
    assert np.all(probs.values == 0.5)


def test_forward_deterministic(rng):
    img = random_image(rng)
    a, _ = forward(init_params(SMALL), SMALL, img)
    b, _ = forward(init_params(SMALL), SMALL, img)
    assert np.array_equal(a.values, b.values)


def test_batch_matches_single(rng):
    params = init_params(SMALL)
    imgs = [random_image(rng) for _ in range(3)]
    out, _ = forward_batch(params, np.stack([i.chw() for i in imgs]))
    for i, img in enumerate(imgs):
        single, _ = forward(params, SMALL, img)
        assert np.allclose(out[i], single.values, atol=1e-14)


def test_input_size_must_divide(rng):
    with pytest.raises(ValueError):
        forward(init_params(SMALL), SMALL, random_image(rng, 18, 16))


def test_parameter_count_grows_with_k():
    counts = [init_params(ModelConfig(k=k)).count() for k in (1, 3, 5)]
    assert counts[0] < counts[1] < counts[2]
    shapes = layer_shapes(ModelConfig(k=3))
    assert shapes["head.w"] == (15, 45, 1, 1)


def _signs(cache):
    return [z > 0 for z in cache.preactivations()]


def test_backward_matches_finite_differences(rng):
    """Central differences at step 1e-5; coordinates where a relu flips
    between the two evaluations are skipped and replaced."""
    params = init_params(SMALL)
    for name in params.names():
        if name.endswith(".b"):
            params.arrays[name] += rng.normal(0, 0.1, size=params[name].shape)
    x = random_image(rng).chw()[None]
    w_out = rng.normal(size=(1, 15, 16, 16))

    def f(p):
        out, cache = forward_batch(p, x)
        return float((out * w_out).sum()), _signs(cache)

    out, cache = forward_batch(params, x)
    grads, gx = backward(cache, w_out, need_input_grad=True)
    h = 1e-5
    for name in params.names():
        arr = params.arrays[name]
        checked, tries = 0, 0
        while checked < min(20, arr.size) and tries < 400:
            tries += 1
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            fp, sp = f(params)
            arr[idx] = old - h
            fm, sm = f(params)
            arr[idx] = old
            if any((a != b).any() for a, b in zip(sp, sm)):
                continue
            num = (fp - fm) / (2 * h)
            assert relative_error(grads[name][idx], num) < 1e-4, (name, idx)
            checked += 1
        assert checked >= min(20, arr.size), name
    # input gradient
    for _ in range(20):
        idx = (0,) + tuple(rng.integers(0, s) for s in x.shape[1:])
        old = x[idx]
        x[idx] = old + h
        fp, sp = f(params)
        x[idx] = old - h
        fm, sm = f(params)
        x[idx] = old
        if any((a != b).any() for a, b in zip(sp, sm)):
            continue
        assert relative_error(gx[idx], (fp - fm) / (2 * h)) < 1e-4


def test_zero_grad_out_gives_zero_grads(rng):
    params = init_params(SMALL)
    out, cache = forward_batch(params, random_image(rng).chw()[None])
    grads = backward(cache, np.zeros_like(out))
    assert all(not g.any() for g in grads.values())


def test_stale_cache_rejected(rng):
    params = init_params(SMALL)
    out, cache = forward_batch(params, random_image(rng).chw()[None])
    grads = backward(cache, np.ones_like(out))
    rmsprop_step(params, grads, OptimizerState.for_params(params))
    with pytest.raises(ValueError, match="stale"):
        backward(cache, np.ones_like(out))


def test_rmsprop_hand_example():
    params = init_params(ModelConfig(k=1, depth=1, base_channels=1))
    for a in params.arrays.values():
        a[...] = 0.0
    grads = {n: np.ones_like(a) for n, a in params.arrays.items()}
    state = OptimizerState.for_params(params, lr=1e-3, rho=0.9, eps=1e-8)
    rmsprop_step(params, grads, state)
    for name in params.names():
        assert np.allclose(state.mean_square[name], 0.1)
        assert np.allclose(params[name], -1e-3 / (np.sqrt(0.1) + 1e-8))
        assert params[name].flat[0] == pytest.approx(-0.0031623, abs=1e-7)


def test_rmsprop_frozen_untouched(rng):
    params = init_params(SMALL)
    before = params.copy()
    grads = {n: rng.normal(size=a.shape) for n, a in params.arrays.items()}
    frozen = {n for n in params.names() if n.startswith("enc")}
    state = OptimizerState.for_params(params)
    rmsprop_step(params, grads, state, frozen)
    for n in params.names():
        assert np.array_equal(params[n], before[n]) == (n in frozen)


def test_early_stopping_sequence():
    es = EarlyStopping(patience=5)
    losses = [0.5, 0.4, 0.41, 0.42, 0.43, 0.44, 0.45, 0.3]
    stopped_at = None
    for epoch, loss in enumerate(losses, 1):
        es.update(loss, {"epoch": epoch})
        if es.should_stop:
            stopped_at = epoch
            break
    assert stopped_at == 7
    assert es.best_epoch == 2 and es.best_state == {"epoch": 2}


def test_early_stopping_requires_strict_improvement():
    es = EarlyStopping(patience=2)
    es.update(0.5)
    es.update(0.5)
    assert es.best_epoch == 1
    es.update(0.5)
    assert es.should_stop


def test_overfits_single_image(rng):
    y = np.zeros((15, 16, 16))
    y[0, :8] = 1.0
    y[14, 8:] = 1.0
    y[3, :, :8] = 1.0
    img = np.zeros((16, 16, 3))
    img[:8] = [0.9, 0.2, 0.1]
    img[8:] = [0.1, 0.3, 0.8]
    img[:, :8, 1] += 0.5
    s = Sample(RgbRaster(img), AffordanceTensor(y), CoverageMask(np.ones((16, 16), np.uint8)), "one")
    cfg = ModelConfig(k=1, depth=2, base_channels=4, seed=0)
    params, hist = train(cfg, [s], [s], TrainConfig(epochs_max=400, batch_size=1, patience=400, lr=1e-2))
    assert evaluate_loss(params, [s]) < 0.05
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


def test_training_deterministic(rng):
    data = [random_sample(rng) for _ in range(4)]
    tc = TrainConfig(epochs_max=2, batch_size=2, seed=5)
    p1, h1 = train(SMALL, data, data[:2], tc)
    p2, h2 = train(SMALL, data, data[:2], tc)
    assert h1 == h2
    assert all(np.array_equal(p1[n], p2[n]) for n in p1.names())


def test_frozen_encoder_training_keeps_encoder(rng):
    data = [random_sample(rng) for _ in range(2)]
    init = init_params(SMALL)
    params, _ = train(SMALL, data, data, TrainConfig(epochs_max=2, batch_size=1, encoder_train=False))
    for n in init.names():
        assert np.array_equal(params[n], init[n]) == n.startswith("enc")


def test_zero_mask_batch_leaves_params(rng):
    s = random_sample(rng, mask=np.zeros((16, 16), np.uint8))
    params = init_params(SMALL)
    x, y, m = s.image.chw()[None], s.target.values[None], s.mask.valid[None].astype(float)
    with pytest.warns(UserWarning):
        loss, grads = batch_loss_and_grad(params, x, y, m)
    before = params.copy()
    rmsprop_step(params, grads, OptimizerState.for_params(params))
    assert loss == 0.0
    assert all(np.array_equal(params[n], before[n]) for n in params.names())


def test_masked_equals_unmasked_on_full_masks(rng):
    data = [random_sample(rng) for _ in range(3)]
    a, ha = train(SMALL, data, data, TrainConfig(epochs_max=2, batch_size=2, loss_mode="masked"))
    b, hb = train(SMALL, data, data, TrainConfig(epochs_max=2, batch_size=2, loss_mode="unmasked"))
    assert ha == hb
    assert all(np.array_equal(a[n], b[n]) for n in a.names())


def test_masked_loss_ignores_unlabeled_region(rng):
    m = np.zeros((16, 16), np.uint8)
    m[:8] = 1
    s = random_sample(rng, mask=m)
    params = init_params(SMALL)
    x, y, mm = s.image.chw()[None], s.target.values[None].copy(), m[None].astype(float)
    l1, g1 = batch_loss_and_grad(params, x, y, mm)
    y[:, :, 8:] = 1.0 - y[:, :, 8:]
    l2, g2 = batch_loss_and_grad(params, x, y, mm)
    assert l1 == l2
    assert all(np.array_equal(g1[n], g2[n]) for n in g1)


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(ModelConfig(k=2, depth=2, base_channels=3, seed=9))
    path = tmp_path / "w.afpw"
    save_checkpoint(params, path)
    back = load_checkpoint(path)
    assert back.config == params.config
    assert all(np.array_equal(back[n], params[n]) for n in params.names())
    blob = path.read_bytes()
    assert blob[:4] == b"AFPW" and blob[4] == 1
    with pytest.raises(ValueError):
        decode_checkpoint(blob[:-8])
    with pytest.raises(ValueError):
        decode_checkpoint(b"XXXX" + blob[4:])
    assert encode_checkpoint(back) == blob
