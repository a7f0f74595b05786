"""Random fully connected networks and their gradients.

A network with dims [d_0, d_1, ..., d_l, 1] applies l activated layers and a
final linear readout: f(x) = W_{l+1} sigma(W_l ... sigma(W_1 x)).  Weight
matrix W_i has shape d_i x d_{i-1} with iid N(0, 1/d_{i-1}) entries, each
layer drawn from its own derived substream.

The backward chain eta_m = D_m W_{m+1}^T D_{m+1} ... W_{l+1}^T (with D_j the
diagonal of sigma'(g_j)) is computed right to left as matrix-vector products;
y_m = W_m^T eta_m, and y_1 is the gradient.  gradient() and eta_chain() share
one code path, so the two results are bitwise identical by construction.

Inputs are rescaled to ||x|| = sqrt(d_0) when they enter the lab; the
original norm is kept on the trace.  Perturbed points are re-evaluated with
normalize=False since their displacement is the quantity under study.
"""

import dataclasses
import json
import math
import pathlib

import numpy as np

from .activations import eval_activation, eval_derivative, moment
from .numerics import ensure_finite, sample_gaussian_matrix

NORM_RTOL = 1e-9


@dataclasses.dataclass(frozen=True, eq=False)
class NetworkParams:
    dims: tuple
    weights: tuple  # of float64 arrays, weights[i] has shape dims[i+1] x dims[i]

    @property
    def n_layers(self):
        """Number of activated (hidden) layers l."""
        return len(self.weights) - 1

    @property
    def two_layer(self):
        """(W, a) view for dims [d, m, 1]."""
        if self.n_layers != 1:
            raise ValueError(f"two_layer view needs depth 1, got {self.n_layers}")
        return self.weights[0], self.weights[1].ravel()


def _validate_dims(dims):
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3:
        raise ValueError(f"need at least [d, m, 1], got {list(dims)}")
    if any(d < 1 for d in dims):
        raise ValueError(f"dims must be positive, got {list(dims)}")
    if dims[-1] != 1:
        raise ValueError(f"output dim must be 1, got {dims[-1]}")
    return dims


def sample_network(dims, stream):
    """Draw NetworkParams with layer i iid N(0, 1/dims[i])."""
    dims = _validate_dims(dims)
    weights = tuple(
        sample_gaussian_matrix(stream.substream(i), dims[i + 1], dims[i], 1.0 / dims[i])
        for i in range(len(dims) - 1)
    )
    return NetworkParams(dims=dims, weights=weights)


def network_from_weights(weights):
    """Test-only injection of forced weights; shapes must chain to output 1."""
    weights = tuple(np.asarray(w, dtype=np.float64) for w in weights)
    dims = [weights[0].shape[1]]
    for w in weights:
        if w.ndim != 2:
            raise ValueError("weights must be 2-D matrices")
        if w.shape[1] != dims[-1]:
            raise ValueError(f"shape chain broken at {w.shape} after {dims}")
        dims.append(w.shape[0])
        ensure_finite(w, "weight matrix")
    return NetworkParams(dims=_validate_dims(dims), weights=weights)


@dataclasses.dataclass(frozen=True, eq=False)
class ForwardTrace:
    x: np.ndarray
    original_norm: float
    preactivations: tuple  # g_1 ... g_l
    postactivations: tuple  # h_0 = x, h_1 ... h_l
    derivative_diags: tuple  # sigma'(g_1) ... sigma'(g_l)
    output: float


def forward(net, act, x, normalize=True):
    """Run the network on x, recording the full trace.

    normalize=True rescales x to ||x|| = sqrt(d_0) (the entry convention)
    and records the incoming norm; normalize=False evaluates x verbatim,
    which is what attack follow-ups and finite-difference probes need.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != net.dims[0]:
        raise ValueError(f"input length {x.size} does not match d={net.dims[0]}")
    ensure_finite(x, "input")
    original = float(np.linalg.norm(x))
    if normalize:
        if original == 0.0:
            raise ValueError("cannot normalize the zero input")
        x = x * (math.sqrt(net.dims[0]) / original)
    gs, hs, ds = [], [x], []
    h = x
    for w in net.weights[:-1]:
        g = w @ h
        ensure_finite(g, "preactivation")
        h = eval_activation(act, g)
        gs.append(g)
        hs.append(h)
        ds.append(eval_derivative(act, g))
    out = float((net.weights[-1] @ h)[0])
    if not math.isfinite(out):
        raise ArithmeticError("network output is not finite")
    return ForwardTrace(
        x=x,
        original_norm=original,
        preactivations=tuple(gs),
        postactivations=tuple(hs),
        derivative_diags=tuple(ds),
        output=out,
    )


@dataclasses.dataclass(frozen=True, eq=False)
class EtaChain:
    etas: tuple  # eta_1 ... eta_l
    ys: tuple  # y_1 ... y_l; ys[0] is the gradient


def _check_trace(net, trace):
    if len(trace.preactivations) != net.n_layers:
        raise ValueError("trace depth does not match network")
    for g, d in zip(trace.preactivations, net.dims[1:]):
        if g.size != d:
            raise ValueError("trace dimensions do not match network")


def eta_chain(net, trace):
    """Backward chain (eta_m, y_m) for m = 1..l; never forms Jacobians."""
    _check_trace(net, trace)
    l = net.n_layers
    etas = [None] * l
    ys = [None] * l
    eta = trace.derivative_diags[l - 1] * net.weights[l].ravel()
    for m in range(l, 0, -1):
        etas[m - 1] = eta
        y = net.weights[m - 1].T @ eta
        ys[m - 1] = y
        if m > 1:
            eta = trace.derivative_diags[m - 2] * y
    return EtaChain(etas=tuple(etas), ys=tuple(ys))


def gradient(net, trace):
    """Analytic gradient of f at the trace input; identical to eta_chain ys[0]."""
    return eta_chain(net, trace).ys[0]


def analytic_norm_limits(spec, n_layers):
    """Wide-network limits H_m of ||h_m||^2 / d_m, via the moment recursion.

    H_0 = 1 and H_m = E[sigma(sqrt(H_{m-1}) z)^2]; for relu this halves at
    every layer.
    """
    limits = [1.0]
    for _ in range(n_layers):
        limits.append(moment(spec, "sigma2", scale=math.sqrt(limits[-1])))
    return limits


def export_weights(net, path):
    """Write weights as flat little-endian float64 with a JSON dims sidecar."""
    path = pathlib.Path(path)
    flat = np.concatenate([w.ravel() for w in net.weights])
    flat.astype("<f8").tofile(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps({"dims": list(net.dims)}) + "\n")
    return path


def load_weights(path):
    """Rebuild NetworkParams from export_weights output."""
    path = pathlib.Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    dims = _validate_dims(json.loads(sidecar.read_text())["dims"])
    flat = np.fromfile(path, dtype="<f8")
    weights = []
    offset = 0
    for i in range(len(dims) - 1):
        size = dims[i + 1] * dims[i]
        weights.append(flat[offset:offset + size].reshape(dims[i + 1], dims[i]))
        offset += size
    if offset != flat.size:
        raise ValueError(f"weight file holds {flat.size} floats, dims need {offset}")
    return NetworkParams(dims=dims, weights=tuple(weights))
