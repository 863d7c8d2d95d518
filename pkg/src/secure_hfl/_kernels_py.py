"""Pure numpy implementations of the compiled kernels (same signatures)."""
import numpy as np


def _split(params, n_in, n_hidden, n_out):
    o_b1 = n_in * n_hidden
    o_w2 = o_b1 + n_hidden
    o_b2 = o_w2 + n_hidden * n_out
    W1 = params[:o_b1].reshape(n_in, n_hidden)
    b1 = params[o_b1:o_w2]
    W2 = params[o_w2:o_b2].reshape(n_hidden, n_out)
    b2 = params[o_b2:]
    return W1, b1, W2, b2


def sgd_train(params, X, y, order, n_hidden, n_out, lr, batch_size):
    n, n_in = X.shape
    # views: in-place updates write through to params
    W1, b1, W2, b2 = _split(params, n_in, n_hidden, n_out)
    total = len(order)
    start = 0
    while start < total:
        epoch_end = (start // n + 1) * n
        stop = min(start + batch_size, epoch_end)
        idx = order[start:stop]
        xb = X[idx]
        bsz = len(idx)
        h = np.tanh(xb @ W1 + b1)
        z = h @ W2 + b2
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(bsz), y[idx]] -= 1.0
        dz = p / bsz
        da = (dz @ W2.T) * (1.0 - h * h)
        gW2 = h.T @ dz
        gb2 = dz.sum(axis=0)
        gW1 = xb.T @ da
        gb1 = da.sum(axis=0)
        W1 -= lr * gW1
        b1 -= lr * gb1
        W2 -= lr * gW2
        b2 -= lr * gb2
        start = stop


def predict(params, X, n_hidden, n_out):
    W1, b1, W2, b2 = _split(params, X.shape[1], n_hidden, n_out)
    z = np.tanh(X @ W1 + b1) @ W2 + b2
    return np.argmax(z, axis=1).astype(np.int64)


def dot_norms(a, b):
    return float(a @ b), float(a @ a), float(b @ b)
