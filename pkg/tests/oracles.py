"""Plain numpy re-implementations used as independent test oracles."""

import math

import numpy as np

_erf = np.vectorize(math.erf)


def gelu(x):
    return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))


def layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def softmax(z):
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def attention(q_in, kv_in, valid, p, heads):
    """Multi-head attention for one sample; ``p`` maps names to numpy arrays."""
    q = q_in @ p["q.weight"] + p["q.bias"]
    k = kv_in @ p["k.weight"]
    v = kv_in @ p["v.weight"] + p["v.bias"]
    d = q.shape[1]
    dh = d // heads
    out = np.zeros_like(q)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
        s = np.where(valid[None, :], s, -np.inf)
        out[:, sl] = softmax(s) @ v[:, sl]
    return out @ p["o.weight"] + p["o.bias"]


def params(module, prefix=""):
    return {
        k[len(prefix):]: v.detach().numpy().astype(np.float64)
        for k, v in module.state_dict().items()
        if k.startswith(prefix)
    }
