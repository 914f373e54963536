"""Central finite-difference gradient checking shared by the test modules."""

import numpy as np

from siamalign import nn

H = 1e-5
FLOOR = 1e-6


def max_rel_error(analytic, numeric) -> float:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)))


def numeric_grad(f, x, h=H):
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def check_network(specs, input_shape, seed, batch=3, train=True, x=None):
    """Max relative error over the input gradient and every parameter gradient.

    The scalar objective is ``sum(R * net(x))`` for a fixed random ``R``.
    Batch-norm running statistics are frozen during the numeric passes.
    """
    rng = np.random.default_rng(seed)
    net = nn.Sequential(specs, input_shape, seed=seed, dtype=np.float64)
    for layer in net.layers:
        for k in layer.params:
            if k == "gamma":
                layer.params[k][...] = rng.uniform(0.5, 1.5, layer.params[k].shape)
            elif k in ("beta", "bias"):
                layer.params[k][...] = rng.normal(0, 0.1, layer.params[k].shape)
        for k in layer.buffers:
            if k == "running_var":
                layer.buffers[k][...] = rng.uniform(0.5, 2.0, layer.buffers[k].shape)
            else:
                layer.buffers[k][...] = rng.normal(0, 0.3, layer.buffers[k].shape)
    if x is None:
        x = rng.normal(size=(batch,) + tuple(input_shape))
    R = rng.normal(size=(x.shape[0],) + tuple(net.output_shape))
    buffers = [{k: v.copy() for k, v in layer.buffers.items()} for layer in net.layers]

    def restore():
        for layer, saved in zip(net.layers, buffers):
            for k, v in saved.items():
                layer.buffers[k][...] = v

    def f():
        out = net.forward(x, train=train)
        restore()
        return float(np.sum(R * out))

    net.forward(x, train=train)
    restore()
    dx = net.backward(R)
    grads = {k: v.copy() for k, v in net.grads().items()}
    errors = {"input": max_rel_error(dx, numeric_grad(f, x))}
    for name, p in net.params().items():
        errors[name] = max_rel_error(grads[name], numeric_grad(f, p))
    return errors


def distinct(shape, rng):
    # well-separated values keep max-pool and ReLU away from their kinks
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2 + 0.5) * 0.05
    return vals.reshape(shape)


LAYER_CASES = {
    "conv_same": ([nn.conv(3, 3)], (5, 6, 2)),
    "conv_even_kernel": ([nn.conv(2, (2, 4))], (5, 6, 2)),
    "conv_valid_stride2": ([nn.conv(3, 3, stride=2, padding="valid")], (7, 6, 2)),
    "maxpool": ([nn.maxpool()], (4, 6, 2)),
    "maxpool_ragged": ([nn.maxpool()], (5, 3, 2)),
    "relu": ([nn.relu()], (3, 4, 2)),
    "sigmoid": ([nn.sigmoid()], (3, 4, 2)),
    "batchnorm": ([nn.batchnorm()], (3, 4, 2)),
    "flatten": ([nn.flatten()], (3, 4, 2)),
    "dense": ([nn.flatten(), nn.dense(5)], (2, 3, 2)),
}


def layer_errors(case, seed):
    """Gradient-check errors for one entry of ``LAYER_CASES``."""
    specs, shape = LAYER_CASES[case]
    x = None
    if case in ("maxpool", "maxpool_ragged", "relu"):
        x = distinct((3,) + shape, np.random.default_rng(seed + 100))
    return check_network(specs, shape, seed, x=x)
