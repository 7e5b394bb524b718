"""Randomized gradcheck cases shared by the tensor tests and the acceptance run.

Every case returns (inputs, fn) where fn rebuilds a scalar loss from the inputs;
non-scalar op outputs are projected onto a fixed random tensor.
"""

from __future__ import annotations

import numpy as np

from audron.features import Batch
from audron.model import AudronModel, ModelConfig
from audron.tensor import Parameter, Tensor, float64_mode, gradcheck, ops


def _dims(rng, lo=1, hi=6, n=1):
    return [int(v) for v in rng.integers(lo, hi + 1, size=n)]


def _projected(build, rng):
    out = build()
    if out.size == 1:
        return build
    proj = Tensor(rng.normal(size=out.shape))
    return lambda: ops.sum(ops.mul(build(), proj))


def op_cases(seed: int) -> dict:
    """name -> (inputs, loss fn); call inside float64_mode."""
    rng = np.random.default_rng(seed)

    def p(*shape):
        return Parameter(rng.normal(size=shape))

    cases = {}
    n, f, o = _dims(rng, 2, 6, 3)
    x, a = p(n, f), p(n, f)
    cases["add"] = ((x, a), lambda: ops.add(x, a))
    bias = p(f)
    cases["add_bias"] = ((x, bias), lambda: ops.add(x, bias))
    cases["mul"] = ((x, a), lambda: ops.mul(x, a))
    w, b = p(o, f), p(o)
    cases["linear"] = ((x, w, b), lambda: ops.linear(x, w, b))
    m = p(f, o)
    cases["matmul"] = ((x, m), lambda: ops.matmul(x, m))
    bb, t = _dims(rng, 1, 4, 2)
    ba, bm = p(bb, t, f), p(bb, f, o)
    cases["matmul_batched"] = ((ba, bm), lambda: ops.matmul(ba, bm))

    cin, cout = _dims(rng, 1, 4, 2)
    k = int(rng.integers(1, 4))
    length = int(rng.integers(k + 2, 13))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x1, w1, b1 = p(2, cin, length), p(cout, cin, k), p(cout)
    cases["conv1d"] = ((x1, w1, b1), lambda: ops.conv1d(x1, w1, b1, stride=stride, pad=pad))
    cases["conv1d_edge"] = ((x1, w1, b1), lambda: ops.conv1d(x1, w1, b1, stride=stride, pad=pad + 1, pad_mode="edge"))
    xt, wt, bt = p(2, cin, int(rng.integers(2, 6))), p(cin, cout, k + 1), p(cout)
    cases["conv_transpose1d"] = ((xt, wt, bt), lambda: ops.conv_transpose1d(xt, wt, bt, stride=stride + 1,
                                                                            output_padding=stride))
    h2, w2 = _dims(rng, 3, 6, 2)
    x2, k2, b2 = p(2, cin, h2, w2), p(cout, cin, 3, 3), p(cout)
    cases["conv2d"] = ((x2, k2, b2), lambda: ops.conv2d(x2, k2, b2, stride=stride, pad=pad))
    # distinct values so the max is unique under +-h perturbation
    xp = Parameter(rng.permutation(2 * cin * h2 * w2).reshape(2, cin, h2, w2) * 0.1 + rng.normal(size=1) * 0.01)
    cases["maxpool2d"] = ((xp,), lambda: ops.maxpool2d(xp))
    xa = p(2, cin, length)
    pool = int(rng.integers(1, 4))
    cases["avgpool1d"] = ((xa,), lambda: ops.avgpool1d(xa, pool))

    xr = Parameter(rng.normal(size=(n, f)) + np.sign(rng.normal(size=(n, f))) * 0.1)
    cases["relu"] = ((xr,), lambda: ops.relu(xr))
    cases["tanh"] = ((x,), lambda: ops.tanh(x))
    cases["sigmoid"] = ((x,), lambda: ops.sigmoid(x))
    sm_axis = int(rng.integers(0, 2))
    cases["softmax"] = ((x,), lambda: ops.softmax(x, axis=sm_axis))
    cases["log_softmax"] = ((x,), lambda: ops.log_softmax(x, axis=1))
    y = p(n, o)
    cases["concat"] = ((x, y), lambda: ops.concat([x, y], axis=1))
    cases["take"] = ((x,), lambda: ops.take(x, 0, max(1, f - 1), axis=1))
    cases["mean"] = ((x2,), lambda: ops.mean(x2, axis=(2, 3)))

    xb, gamma, beta = p(max(n, 3), f), p(f), p(f)
    rm, rv = rng.normal(size=f), rng.uniform(0.5, 2.0, size=f)
    cases["batchnorm_train"] = ((xb, gamma, beta),
                                lambda: ops.batchnorm(xb, gamma, beta, rm.copy(), rv.copy(), True))
    cases["batchnorm_eval"] = ((xb, gamma, beta), lambda: ops.batchnorm(xb, gamma, beta, rm, rv, False))
    drop_p = float(rng.uniform(0.1, 0.6))
    cases["dropout"] = ((x,), lambda: ops.dropout(x, drop_p, True, np.random.default_rng(seed)))

    hid = int(rng.integers(1, 5))
    xs = [p(n, f) for _ in range(3)]
    h0, c0 = p(n, hid), p(n, hid)
    wi, wh, bl = p(4 * hid, f), p(4 * hid, hid), p(4 * hid)

    def lstm3():
        h, c = h0, c0
        for xt_ in xs:
            hc = ops.lstm_cell(xt_, h, c, wi, wh, bl)
            h, c = ops.take(hc, 0, hid, axis=1), ops.take(hc, hid, 2 * hid, axis=1)
        return hc

    cases["lstm_cell"] = ((*xs, h0, c0, wi, wh, bl), lstm3)
    labels = rng.integers(0, f, size=n)
    cases["cross_entropy"] = ((x,), lambda: ops.cross_entropy(x, labels))
    target = rng.normal(size=(n, f))
    cases["mse_loss"] = ((x,), lambda: ops.mse_loss(x, target))

    return {name: (ins, _projected(fn, rng)) for name, (ins, fn) in cases.items()}


def op_names() -> tuple:
    with float64_mode():
        return tuple(op_cases(0))


def check_op(name: str, seed: int, tol: float = 1e-4):
    with float64_mode():
        ins, fn = op_cases(seed)[name]
        return gradcheck(fn, list(ins), h=1e-5, tol=tol)


def tiny_batch(rng: np.random.Generator, n: int = 2, frames: int = 8, bins: int = 16, samples: int = 4800) -> Batch:
    wave = rng.uniform(-1, 1, size=(n, samples))
    return Batch(wave=wave, mfcc=rng.normal(size=(n, frames, 13)), spec=rng.normal(size=(n, frames * 2, bins)),
                 target=wave.reshape(n, -1, 10).mean(axis=2), labels=rng.integers(0, 2, size=n))


def check_model(seed: int, tol: float = 1e-3, max_entries: int = 6):
    """Reduced-profile full model, 2 classes, 8 MFCC frames; every parameter tensor probed."""
    from audron.traineval import combined_loss

    with float64_mode():
        model = AudronModel(ModelConfig(n_classes=2, profile="reduced", seed=seed))
        model.to_dtype(np.float64)
        model.train()
        rng = np.random.default_rng(seed)
        # zero-initialised biases put ReLUs exactly on their kink wherever the receptive field is all zeros;
        # probe at a generic point instead
        for name, param in model.named_parameters():
            if name.endswith("bias"):
                param.data[...] = rng.normal(scale=0.1, size=param.shape)
        batch = tiny_batch(rng, n=3)
        named = list(model.named_parameters())
        bn = model.fusion_head.bn
        saved = (bn.running_mean.copy(), bn.running_var.copy())

        def loss():
            # freeze the dropout mask and batchnorm buffers so every probe sees the same function
            bn.running_mean[:], bn.running_var[:] = saved
            model.fusion_head.dropout.rng = np.random.default_rng(seed)
            out = model(batch)
            return combined_loss(out, batch.labels, batch.target, 0.1)

        return gradcheck(loss, [t for _, t in named], h=1e-5, tol=tol, names=[nm for nm, _ in named],
                         max_entries=max_entries, rng=np.random.default_rng(seed), kink_aware=True)
