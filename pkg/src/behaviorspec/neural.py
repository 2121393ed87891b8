"""Small numpy neural machinery with hand-written backward passes.

Every network is an :class:`Mlp` that may hold several independent
"members" with the same architecture.  All parameters of all members live in
one flat array so Adam and target blending are single vector operations;
per-layer weights are views into it with shape ``(members, fan_in, fan_out)``.
"""

from __future__ import annotations

import io
import struct

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LN_EPS = 1e-5
_LOG_2PI = float(np.log(2.0 * np.pi))
_LOG_2 = float(np.log(2.0))

MAGIC = b"BSMLP001"
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


class Mlp:
    """Stack of ``members`` MLPs sharing one architecture.

    ``sizes`` lists layer widths including input and output, ``activations``
    has one entry per affine layer.  With ``layer_norm`` the first hidden
    pre-activation is layer-normalised (trainable gain and bias) before its
    nonlinearity.
    """

    def __init__(self, sizes, activations, layer_norm=False, members=1, rng=None,
                 dtype=np.float64, flat=None):
        sizes = tuple(int(s) for s in sizes)
        activations = tuple(activations)
        if len(sizes) < 2 or len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per affine layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = sizes
        self.activations = activations
        self.layer_norm = bool(layer_norm)
        self.members = int(members)
        self.dtype = np.dtype(dtype)

        shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            shapes.append(("W", (self.members, fan_in, fan_out)))
            shapes.append(("b", (self.members, 1, fan_out)))
        if self.layer_norm:
            shapes.append(("g", (self.members, 1, sizes[1])))
            shapes.append(("beta", (self.members, 1, sizes[1])))
        self._shapes = shapes
        self.size = int(sum(np.prod(s) for _, s in shapes))

        if flat is None:
            flat = np.zeros(self.size, dtype=self.dtype)
            self.flat = flat
            self._bind()
            rng = np.random.default_rng() if rng is None else rng
            for W in self.W:
                bound = 1.0 / np.sqrt(W.shape[1])
                W[...] = rng.uniform(-bound, bound, size=W.shape)
            if self.layer_norm:
                self.g[...] = 1.0
        else:
            flat = np.asarray(flat, dtype=self.dtype)
            if flat.shape != (self.size,):
                raise ValueError(f"flat parameter vector has shape {flat.shape}, expected ({self.size},)")
            self.flat = flat.copy()
            self._bind()

    def _bind(self):
        self.W, self.b = [], []
        self.g = self.beta = None
        offset = 0
        for name, shape in self._shapes:
            n = int(np.prod(shape))
            view = self.flat[offset:offset + n].reshape(shape)
            offset += n
            if name == "W":
                self.W.append(view)
            elif name == "b":
                self.b.append(view)
            elif name == "g":
                self.g = view
            else:
                self.beta = view

    def copy(self):
        return Mlp(self.sizes, self.activations, self.layer_norm, self.members,
                   dtype=self.dtype, flat=self.flat)

    def select(self, members):
        """New network holding a copy of the listed members."""
        members = list(members)
        out = Mlp(self.sizes, self.activations, self.layer_norm, len(members), dtype=self.dtype,
                  flat=np.zeros(self.size // self.members * len(members)))
        for dst, src in zip(out.W + out.b, self.W + self.b):
            dst[...] = src[members]
        if self.layer_norm:
            out.g[...] = self.g[members]
            out.beta[...] = self.beta[members]
        return out

    def assign(self, members, other):
        """Write the parameters of ``other`` into the listed members."""
        members = list(members)
        for dst, src in zip(self.W + self.b, other.W + other.b):
            dst[members] = src
        if self.layer_norm:
            self.g[members] = other.g
            self.beta[members] = other.beta

    def layout(self):
        """Names and shapes of the flat parameter blocks, in storage order."""
        return list(self._shapes)

    def __repr__(self):
        return (f"Mlp(sizes={self.sizes}, activations={self.activations}, "
                f"layer_norm={self.layer_norm}, members={self.members})")


def _activate(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def mlp_forward(net: Mlp, x):
    """Evaluate all members on ``x``.

    ``x`` is either ``(batch, fan_in)`` (shared by every member) or
    ``(members, batch, fan_in)``.  Returns ``(members, batch, fan_out)`` and a
    cache for :func:`mlp_backward`.
    """
    x = np.asarray(x)
    if x.shape[-1] != net.sizes[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match first layer {net.sizes[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    shared = x.ndim == 2
    h = x
    layers = []
    for i, (W, b, act) in enumerate(zip(net.W, net.b, net.activations)):
        z = np.matmul(h, W) + b
        ln = None
        if i == 0 and net.layer_norm:
            mu = z.mean(axis=-1, keepdims=True)
            zc = z - mu
            inv = 1.0 / np.sqrt((zc * zc).mean(axis=-1, keepdims=True) + LN_EPS)
            zhat = zc * inv
            ln = (zhat, inv)
            z = zhat * net.g + net.beta
        out = _activate(act, z)
        layers.append((h, z, out, ln))
        h = out
    if h.ndim == 2:
        h = np.broadcast_to(h, (net.members,) + h.shape)
    return h, {"layers": layers, "shared": shared, "net": net}


def mlp_backward(net: Mlp, cache, grad_out, param_grads=True):
    """Reverse pass.  Returns ``(flat_param_grad or None, input_grad)``.

    ``grad_out`` has the shape of the forward output.  When the forward input
    was shared across members the input gradient is summed over members.
    """
    if cache["net"] is not net and cache["net"].sizes != net.sizes:
        raise ValueError("cache does not belong to this network")
    layers = cache["layers"]
    if len(layers) != len(net.W):
        raise ValueError("cache/parameter layer count mismatch")
    grad = np.zeros(net.size, dtype=net.dtype) if param_grads else None
    gW, gb = [], []
    g = np.asarray(grad_out)
    g_gain = g_beta = None
    for i in range(len(layers) - 1, -1, -1):
        h_in, z, out, ln = layers[i]
        act = net.activations[i]
        if act == "tanh":
            g = g * (1.0 - out * out)
        elif act == "relu":
            g = g * (z > 0.0)
        if ln is not None:
            zhat, inv = ln
            if param_grads:
                g_gain = (g * zhat).sum(axis=-2, keepdims=True)
                g_beta = g.sum(axis=-2, keepdims=True)
            gh = g * net.g
            g = inv * (gh - gh.mean(axis=-1, keepdims=True)
                       - zhat * (gh * zhat).mean(axis=-1, keepdims=True))
        if g.ndim == 2:
            g = np.broadcast_to(g, (net.members,) + g.shape)
        if param_grads:
            if h_in.ndim == 2:
                gW.append(np.matmul(h_in.T, g))
            else:
                gW.append(np.matmul(h_in.transpose(0, 2, 1), g))
            gb.append(g.sum(axis=-2, keepdims=True))
        g = np.matmul(g, net.W[i].transpose(0, 2, 1))
    gx = g
    if cache["shared"]:
        gx = gx.sum(axis=0)
    if param_grads:
        gW.reverse()
        gb.reverse()
        parts = []
        for w, b_ in zip(gW, gb):
            parts.append(w.ravel())
            parts.append(b_.ravel())
        if net.layer_norm:
            parts.append(g_gain.ravel())
            parts.append(g_beta.ravel())
        grad[...] = np.concatenate(parts)
    return grad, gx


class Adam:
    """Bias-corrected Adam acting in place on a flat parameter vector."""

    def __init__(self, size, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float64):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0

    def copy(self):
        out = Adam(self.m.size, self.lr, self.beta1, self.beta2, self.eps, self.m.dtype)
        out.m[...] = self.m
        out.v[...] = self.v
        out.t = self.t
        return out


def adam_step(params: np.ndarray, grads: np.ndarray, opt: Adam):
    """One descent step on ``params`` (modified in place and returned)."""
    if grads.shape != params.shape or opt.m.shape != params.shape:
        raise ValueError("parameter, gradient and optimizer shapes disagree")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient passed to Adam")
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    opt.m *= b1
    opt.m += (1.0 - b1) * grads
    opt.v *= b2
    opt.v += (1.0 - b2) * (grads * grads)
    step = opt.lr * np.sqrt(1.0 - b2 ** opt.t) / (1.0 - b1 ** opt.t)
    params -= step * opt.m / (np.sqrt(opt.v) + opt.eps * np.sqrt(1.0 - b2 ** opt.t))
    return params


def soft_update(target: Mlp, online: Mlp, tau: float):
    """target <- (1 - tau) * target + tau * online, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    target.flat *= (1.0 - tau)
    target.flat += tau * online.flat
    return target


# ---------------------------------------------------------------------------
# squashed Gaussian


def softplus(x):
    return np.logaddexp(0.0, x)


def squashed_gaussian(mean, log_std, eps):
    """Reparameterised tanh-Gaussian draw.

    Returns ``(action, log_prob, aux)`` where ``log_prob`` is summed over the
    last axis and includes the tanh change of variables, written as
    ``2 * (log 2 - u - softplus(-2u))`` to avoid ``log(1 - tanh(u)^2)``.
    """
    std = np.exp(log_std)
    u = mean + std * eps
    action = np.tanh(u)
    log_det = 2.0 * (_LOG_2 - u - softplus(-2.0 * u))
    log_prob = (-0.5 * eps * eps - log_std - 0.5 * _LOG_2PI - log_det).sum(axis=-1)
    return action, log_prob, (std, u, action, eps)


def squashed_gaussian_backward(aux, g_action, g_log_prob):
    """Gradients wrt (mean, log_std) given upstream d/daction and d/dlog_prob.

    ``g_log_prob`` has one entry per batch row.
    """
    std, u, action, eps = aux
    g_lp = np.asarray(g_log_prob)[..., None]
    g_u = g_action * (1.0 - action * action) + g_lp * 2.0 * action
    g_mean = g_u
    g_log_std = g_u * std * eps - g_lp
    return g_mean, g_log_std


class GaussianPolicy:
    """Tanh-squashed diagonal Gaussian policy.

    The trunk is two hidden tanh layers (first one layer-normalised); a final
    linear layer emits the mean and the unclamped log-std side by side.
    """

    def __init__(self, obs_dim, act_dim, hidden=256, rng=None, dtype=np.float64, net=None):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        if net is None:
            net = Mlp((obs_dim, hidden, hidden, 2 * act_dim), ("tanh", "tanh", "identity"),
                      layer_norm=True, rng=rng, dtype=dtype)
        self.net = net

    def copy(self):
        return GaussianPolicy(self.obs_dim, self.act_dim, net=self.net.copy())

    def distribution(self, obs):
        out, cache = mlp_forward(self.net, obs)
        out = out[0]
        mean = out[:, :self.act_dim]
        raw = out[:, self.act_dim:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        inside = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
        return mean, log_std, (cache, inside)

    def sample(self, obs, eps):
        """Draw actions for ``obs`` (batch, obs_dim) using standard normal ``eps``."""
        mean, log_std, dcache = self.distribution(obs)
        action, log_prob, aux = squashed_gaussian(mean, log_std, eps)
        return action, log_prob, (dcache, aux)

    def backward(self, cache, g_action, g_log_prob):
        """Flat parameter gradient of a scalar objective through a sample."""
        (net_cache, inside), aux = cache
        g_mean, g_log_std = squashed_gaussian_backward(aux, g_action, g_log_prob)
        g_out = np.concatenate([g_mean, g_log_std * inside], axis=-1)[None]
        grad, _ = mlp_backward(self.net, net_cache, g_out)
        return grad

    def deterministic(self, obs):
        mean, _, _ = self.distribution(obs)
        return np.tanh(mean)


def policy_sample(policy: GaussianPolicy, obs, rng: np.random.Generator):
    """Sample one action for a single observation; returns (action, log_prob)."""
    obs = np.asarray(obs, dtype=policy.net.dtype).reshape(1, -1)
    eps = rng.standard_normal((1, policy.act_dim)).astype(policy.net.dtype)
    action, log_prob, _ = policy.sample(obs, eps)
    return action[0], float(log_prob[0])


class DeterministicPolicy:
    """TD3 actor: same trunk as the Gaussian policy with a tanh output layer."""

    def __init__(self, obs_dim, act_dim, hidden=256, rng=None, dtype=np.float64, net=None):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        if net is None:
            net = Mlp((obs_dim, hidden, hidden, act_dim), ("tanh", "tanh", "tanh"),
                      layer_norm=True, rng=rng, dtype=dtype)
        self.net = net

    def copy(self):
        return DeterministicPolicy(self.obs_dim, self.act_dim, net=self.net.copy())

    def forward(self, obs):
        out, cache = mlp_forward(self.net, obs)
        return out[0], cache

    def backward(self, cache, g_action):
        grad, _ = mlp_backward(self.net, cache, g_action[None])
        return grad

    def deterministic(self, obs):
        return self.forward(obs)[0]


# ---------------------------------------------------------------------------
# checkpoints


def save_mlp(net: Mlp) -> bytes:
    """Serialise ``net``: magic, header of layer sizes, little-endian float64 params."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(net.sizes)))
    buf.write(struct.pack(f"<{len(net.sizes)}I", *net.sizes))
    buf.write(bytes(ACTIVATIONS.index(a) for a in net.activations))
    buf.write(struct.pack("<BBI", int(net.layer_norm), _DTYPE_CODES[net.dtype], net.members))
    buf.write(net.flat.astype("<f8").tobytes())
    return buf.getvalue()


def load_mlp(data: bytes) -> Mlp:
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise ValueError("not a network checkpoint (bad magic)")
    pos = 8
    (n,) = struct.unpack_from("<I", view, pos)
    pos += 4
    sizes = struct.unpack_from(f"<{n}I", view, pos)
    pos += 4 * n
    acts = tuple(ACTIVATIONS[c] for c in bytes(view[pos:pos + n - 1]))
    pos += n - 1
    layer_norm, dcode, members = struct.unpack_from("<BBI", view, pos)
    pos += 6
    dtype = {v: k for k, v in _DTYPE_CODES.items()}[dcode]
    flat = np.frombuffer(bytes(view[pos:]), dtype="<f8")
    return Mlp(sizes, acts, bool(layer_norm), members, dtype=dtype, flat=flat)
