"""Dense network right-hand sides for the hybrid NeuralODE.

The experiments use a 2 -> 32 (tanh) -> 1 (identity) network whose scalar
output is wired into the second state derivative, with the kinematic
identity dx1/dt = x2 hard-coded:

    f(x) = [x2, N(x)]

A network with output width equal to the state dimension is also accepted
and then used as a fully learned right-hand side f(x) = N(x).

All derivative helpers are exact forward-mode propagation (no finite
differences): state jacobians propagate the identity tangent basis,
parameter jacobians propagate one-hot tangents for every parameter at
once, batched as matrices. Second-order helpers propagate tangents *of the
state-jacobian computation*, which is what the eigenvalue gradient chain
needs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "DenseLayer",
    "DenseNetwork",
    "HybridRHS",
    "DEFAULT_LAYER_SPEC",
    "glorot_init",
    "zero_network",
    "flatten_params",
    "with_params",
    "rhs_eval",
    "system_matrix",
    "rhs_param_jvp",
    "save_params",
    "load_params",
]

ACTIVATIONS = ("tanh", "identity")

# 2 -> 32 tanh -> 1 identity; 129 parameters.
DEFAULT_LAYER_SPEC = ((2, 32, "tanh"), (32, 1, "identity"))


@dataclass(eq=False)
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("inconsistent layer shapes")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(eq=False)
class DenseNetwork:
    """Immutable-by-convention stack of dense layers."""

    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        self.layers = tuple(self.layers)
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ValueError("layer shapes do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def shape_spec(self) -> tuple[tuple[int, int, str], ...]:
        return tuple(
            (l.weight.shape[1], l.weight.shape[0], l.activation) for l in self.layers
        )

    @property
    def parameter_count(self) -> int:
        return _layout(self.shape_spec).total


@dataclass(frozen=True)
class _Layout:
    """Flat parameter layout plus index arrays for one-hot tangent seeding."""

    offsets: tuple[tuple[int, int], ...]  # (weight_offset, bias_offset) per layer
    total: int
    w_rows: tuple[np.ndarray, ...]  # row index of each weight parameter
    w_cols: tuple[np.ndarray, ...]  # flat column of each weight parameter
    w_src: tuple[np.ndarray, ...]  # input index of each weight parameter
    b_rows: tuple[np.ndarray, ...]
    b_cols: tuple[np.ndarray, ...]


@lru_cache(maxsize=None)
def _layout(shape_spec: tuple[tuple[int, int, str], ...]) -> _Layout:
    offsets = []
    w_rows, w_cols, w_src, b_rows, b_cols = [], [], [], [], []
    off = 0
    for d_in, d_out, _act in shape_spec:
        w_off = off
        b_off = off + d_out * d_in
        offsets.append((w_off, b_off))
        rr, ss = np.meshgrid(np.arange(d_out), np.arange(d_in), indexing="ij")
        w_rows.append(rr.ravel())
        w_cols.append(w_off + rr.ravel() * d_in + ss.ravel())
        w_src.append(ss.ravel())
        b_rows.append(np.arange(d_out))
        b_cols.append(b_off + np.arange(d_out))
        off = b_off + d_out
    return _Layout(
        offsets=tuple(offsets),
        total=off,
        w_rows=tuple(w_rows),
        w_cols=tuple(w_cols),
        w_src=tuple(w_src),
        b_rows=tuple(b_rows),
        b_cols=tuple(b_cols),
    )


def glorot_init(seed: int, layer_spec=DEFAULT_LAYER_SPEC) -> DenseNetwork:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out, act in layer_spec:
        bound = np.sqrt(6.0 / (d_in + d_out))
        w = rng.uniform(-bound, bound, size=(d_out, d_in))
        layers.append(DenseLayer(weight=w, bias=np.zeros(d_out), activation=act))
    return DenseNetwork(layers=tuple(layers))


def zero_network(layer_spec=DEFAULT_LAYER_SPEC) -> DenseNetwork:
    layers = [
        DenseLayer(np.zeros((d_out, d_in)), np.zeros(d_out), act)
        for d_in, d_out, act in layer_spec
    ]
    return DenseNetwork(layers=tuple(layers))


def flatten_params(net: DenseNetwork) -> np.ndarray:
    parts = []
    for layer in net.layers:
        parts.append(layer.weight.ravel())
        parts.append(layer.bias)
    return np.concatenate(parts)


def with_params(net: DenseNetwork, theta: np.ndarray) -> DenseNetwork:
    """New network with the same topology and the given flat parameters."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (net.parameter_count,):
        raise ValueError(
            f"expected {net.parameter_count} parameters, got {theta.shape}"
        )
    layout = _layout(net.shape_spec)
    layers = []
    for layer, (w_off, b_off) in zip(net.layers, layout.offsets):
        d_out, d_in = layer.weight.shape
        w = theta[w_off : w_off + d_out * d_in].reshape(d_out, d_in).copy()
        b = theta[b_off : b_off + d_out].copy()
        layers.append(DenseLayer(w, b, layer.activation))
    return DenseNetwork(layers=tuple(layers))


_ACT_CODES = {"tanh": 0, "identity": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_MAGIC = b"ENW1"


def save_params(net: DenseNetwork, path) -> None:
    """Checkpoint: layer-shape header + flat little-endian float64 vector."""
    theta = flatten_params(net)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(net.layers)))
        for d_in, d_out, act in net.shape_spec:
            fh.write(struct.pack("<III", d_in, d_out, _ACT_CODES[act]))
        fh.write(theta.astype("<f8").tobytes())


def load_params(path) -> DenseNetwork:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        (n_layers,) = struct.unpack("<I", fh.read(4))
        spec = []
        for _ in range(n_layers):
            d_in, d_out, code = struct.unpack("<III", fh.read(12))
            spec.append((d_in, d_out, _ACT_NAMES[code]))
        theta = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    net = zero_network(tuple(spec))
    return with_params(net, theta)


# ---------------------------------------------------------------------------
# forward-mode cores (single point and batched over points)
# ---------------------------------------------------------------------------


def _act_value_prime(act: str, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if act == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    return z, np.ones_like(z)


def _act_second(act: str, a: np.ndarray, prime: np.ndarray) -> np.ndarray:
    if act == "tanh":
        return -2.0 * a * prime
    return np.zeros_like(a)


def _forward(net: DenseNetwork, x: np.ndarray):
    """Activations and activation-derivatives per layer; x is (d0,) or (d0, K)."""
    acts = [x]
    primes = []
    for layer in net.layers:
        z = layer.weight @ acts[-1]
        z += layer.bias[:, None] if z.ndim == 2 else layer.bias
        a, p = _act_value_prime(layer.activation, z)
        acts.append(a)
        primes.append(p)
    return acts, primes


def network_value(net: DenseNetwork, x: np.ndarray) -> np.ndarray:
    acts, _ = _forward(net, x)
    return acts[-1]


def network_state_jacobian(net: DenseNetwork, x: np.ndarray) -> np.ndarray:
    """Jacobian dN/dx at one point; exact chain rule, shape (out, d0)."""
    acts, primes = _forward(net, x)
    jac = np.eye(net.input_dim)
    for layer, prime in zip(net.layers, primes):
        jac = prime[:, None] * (layer.weight @ jac)
    return jac


def network_param_jacobian(net: DenseNetwork, x: np.ndarray) -> np.ndarray:
    """Jacobian dN/dtheta at one point, shape (out, P).

    Forward-mode over all parameter directions at once: the one-hot weight
    and bias tangents are seeded into the pre-activation tangent matrix via
    precomputed index arrays, then propagated like any other tangent batch.
    """
    layout = _layout(net.shape_spec)
    acts, primes = _forward(net, x)
    d_tangent = None  # (width, P)
    for i, (layer, prime) in enumerate(zip(net.layers, primes)):
        d_out = layer.weight.shape[0]
        dz = np.zeros((d_out, layout.total))
        if d_tangent is not None:
            np.matmul(layer.weight, d_tangent, out=dz)
        dz[layout.w_rows[i], layout.w_cols[i]] += acts[i][layout.w_src[i]]
        dz[layout.b_rows[i], layout.b_cols[i]] += 1.0
        d_tangent = prime[:, None] * dz
    return d_tangent


def network_state_jacobian_batch(net: DenseNetwork, X: np.ndarray) -> np.ndarray:
    """dN/dx for a batch of points; X is (d0, K), result (K, out, d0)."""
    acts, primes = _forward(net, X)
    K = X.shape[1]
    jac = np.broadcast_to(np.eye(net.input_dim), (K, net.input_dim, net.input_dim))
    for layer, prime in zip(net.layers, primes):
        jac = prime.T[:, :, None] * np.einsum("ij,kjd->kid", layer.weight, jac)
    return jac


def _suffix_maps(net: DenseNetwork, primes: list[np.ndarray]) -> list[np.ndarray]:
    """R[l] = d(output)/d(activation_l) for a batch; each (K, out, w_l).

    Computed by the reverse sweep R[L-1] = I, R[l] = (R[l+1] o phi') W_{l+1};
    together with the forward prefix jacobians these let every product-rule
    term of the jacobian tangent be assembled from small factors.
    """
    L = len(net.layers)
    out = net.output_dim
    K = primes[0].shape[1]
    maps: list[np.ndarray | None] = [None] * L
    maps[L - 1] = np.broadcast_to(np.eye(out), (K, out, out))
    for l in range(L - 2, -1, -1):
        scaled = maps[l + 1] * primes[l + 1].T[:, None, :]
        maps[l] = np.matmul(scaled, net.layers[l + 1].weight)
    return maps


def network_jacobian_tangents(
    net: DenseNetwork, X: np.ndarray, state_tangents: np.ndarray
) -> np.ndarray:
    """Directional derivatives of the state jacobian dN/dx.

    For each point k and parameter p the direction is the *combined* one
    (dx = state_tangents[k, :, p], dtheta = e_p), i.e. the total parameter
    dependence of the jacobian when the evaluation point itself depends on
    the parameters (its sensitivity being ``state_tangents``).

    The jacobian is the layer product (D_L W_L)...(D_1 W_1); the tangent is
    the product-rule sum over layers, with each term contracted from the
    suffix maps R_l, the prefix jacobians G_{l-1}, and the pre-activation
    tangents dz_l.

    X: (d0, K); state_tangents: (K, d0, P). Returns (K, out, d0, P).
    """
    layout = _layout(net.shape_spec)
    d0, K = X.shape
    P = layout.total
    if state_tangents.shape != (K, d0, P):
        raise ValueError(
            f"state_tangents must be {(K, d0, P)}, got {state_tangents.shape}"
        )
    acts, primes = _forward(net, X)
    out = net.output_dim
    L = len(net.layers)

    prefixes = [np.broadcast_to(np.eye(d0), (K, d0, d0))]  # G_{l-1}
    gammas = []  # W_l G_{l-1}
    for layer, prime in zip(net.layers, primes):
        gamma = np.matmul(layer.weight, prefixes[-1])
        gammas.append(gamma)
        prefixes.append(prime.T[:, :, None] * gamma)
    suffixes = _suffix_maps(net, primes)

    def _needs_dz(l: int) -> bool:
        return net.layers[l].activation == "tanh" or l < L - 1

    result = np.zeros((K, out, d0, P))
    d_act = state_tangents
    for l, (layer, prime) in enumerate(zip(net.layers, primes)):
        d_out, d_in = layer.weight.shape
        if _needs_dz(l):
            dz = np.matmul(layer.weight, d_act)
            dz[:, layout.w_rows[l], layout.w_cols[l]] += acts[l][layout.w_src[l], :].T
            dz[:, layout.b_rows[l], layout.b_cols[l]] += 1.0
        if layer.activation == "tanh":
            # curvature term R_l diag(phi'' dz) Gamma_l
            p2 = _act_second(layer.activation, acts[l + 1], prime)
            m = suffixes[l] * p2.T[:, None, :]
            gamma_t = gammas[l].transpose(0, 2, 1)  # (K, d0, w)
            for o in range(out):
                weighted = m[:, o, :, None] * dz
                result[:, o, :, :] += np.matmul(gamma_t, weighted)
        # own-weight linear term (R_l o phi') dW_l G_{l-1}
        c = suffixes[l] * prime.T[:, None, :]
        w_off, b_off = layout.offsets[l]
        block = np.einsum("kor,ksd->kodrs", c, prefixes[l])
        result[:, :, :, w_off : w_off + d_out * d_in] += block.reshape(
            K, out, d0, d_out * d_in
        )
        if l + 1 < L and _needs_dz(l + 1):
            d_act = prime.T[:, :, None] * dz
    return result


# ---------------------------------------------------------------------------
# hybrid right-hand side
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class HybridRHS:
    """NeuralODE right-hand side.

    With a scalar-output network (the standard layout) the state derivative
    is [x2, N(x)]; a network with output width == state_dim is used as a
    fully learned f(x) = N(x) instead.
    """

    network: DenseNetwork
    state_dim: int = 2
    hybrid: bool = field(init=False)

    def __post_init__(self):
        if self.network.input_dim != self.state_dim:
            raise ValueError("network input width must equal the state dimension")
        out = self.network.output_dim
        if out == 1 and self.state_dim == 2:
            self.hybrid = True
        elif out == self.state_dim:
            self.hybrid = False
        else:
            raise ValueError(
                f"network output width {out} fits neither the hybrid nor the "
                f"fully learned form for state dimension {self.state_dim}"
            )

    @property
    def parameter_count(self) -> int:
        return self.network.parameter_count

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite state")
        n = network_value(self.network, x)
        if self.hybrid:
            return np.array([x[1], n[0]])
        return n

    def state_jacobian(self, x: np.ndarray) -> np.ndarray:
        jac_n = network_state_jacobian(self.network, np.asarray(x, dtype=np.float64))
        if self.hybrid:
            return np.vstack([np.array([[0.0, 1.0]]), jac_n])
        return jac_n

    def param_jacobian(self, x: np.ndarray) -> np.ndarray:
        jac_p = network_param_jacobian(self.network, np.asarray(x, dtype=np.float64))
        if self.hybrid:
            out = np.zeros((2, jac_p.shape[1]))
            out[1] = jac_p[0]
            return out
        return jac_p

    def stage_eval(self, x: np.ndarray):
        """(f, df/dx, df/dtheta) sharing a single forward pass.

        The parameter jacobian is assembled per layer from the suffix maps
        (same product-rule factors as :func:`network_jacobian_tangents`),
        which is substantially cheaper in this per-stage hot path than
        seeding one-hot tangents; values agree with
        :func:`network_param_jacobian` to rounding.
        """
        net = self.network
        acts, primes = _forward(net, x)
        layout = _layout(net.shape_spec)
        layers = net.layers
        n_layers = len(layers)
        out_dim = net.output_dim

        jac = np.eye(self.state_dim)
        for layer, prime in zip(layers, primes):
            jac = prime[:, None] * (layer.weight @ jac)

        suffix = np.eye(out_dim)
        suffixes = [None] * n_layers
        suffixes[n_layers - 1] = suffix
        for l in range(n_layers - 2, -1, -1):
            suffix = (suffix * primes[l + 1][None, :]) @ layers[l + 1].weight
            suffixes[l] = suffix

        b_net = np.empty((out_dim, layout.total))
        for l, layer in enumerate(layers):
            c = suffixes[l] * primes[l][None, :]
            w_off, b_off = layout.offsets[l]
            d_out = layer.weight.shape[0]
            b_net[:, w_off:b_off] = (c[:, :, None] * acts[l][None, None, :]).reshape(
                out_dim, -1
            )
            b_net[:, b_off : b_off + d_out] = c

        n = acts[-1]
        if self.hybrid:
            f = np.array([x[1], n[0]])
            a = np.vstack([np.array([[0.0, 1.0]]), jac])
            b = np.zeros((2, layout.total))
            b[1] = b_net[0]
        else:
            f, a, b = n, jac, b_net
        return f, a, b

    def state_jacobian_batch(self, X: np.ndarray) -> np.ndarray:
        """System matrices for states in columns of X; returns (K, d, d)."""
        jac_n = network_state_jacobian_batch(self.network, X)
        if not self.hybrid:
            return jac_n
        K = X.shape[1]
        out = np.zeros((K, 2, 2))
        out[:, 0, 1] = 1.0
        out[:, 1, :] = jac_n[:, 0, :]
        return out

    def jacobian_param_rows(self) -> np.ndarray:
        """Indices of system-matrix rows that depend on the parameters."""
        return np.array([1]) if self.hybrid else np.arange(self.state_dim)

    def jacobian_tangents_batch(
        self, X: np.ndarray, state_tangents: np.ndarray
    ) -> np.ndarray:
        """Combined-direction tangents of the parameter-dependent system rows.

        Returns (K, len(jacobian_param_rows()), d, P); see
        :func:`network_jacobian_tangents` for the direction convention.
        """
        return network_jacobian_tangents(self.network, X, state_tangents)


# spec-surface aliases -------------------------------------------------------


def rhs_eval(rhs: HybridRHS, x) -> np.ndarray:
    """State derivative at x."""
    return rhs(x)


def system_matrix(rhs: HybridRHS, x) -> np.ndarray:
    """Jacobian of the state derivative with respect to the state."""
    return rhs.state_jacobian(x)


def rhs_param_jvp(rhs: HybridRHS, x, dtheta) -> np.ndarray:
    """Directional derivative of the state derivative along dtheta."""
    dtheta = np.asarray(dtheta, dtype=np.float64)
    jac = rhs.param_jacobian(x)
    if dtheta.shape != (jac.shape[1],):
        raise ValueError(f"expected {jac.shape[1]} tangent entries")
    return jac @ dtheta
