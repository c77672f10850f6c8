"""Dense surrogate network with exact input derivatives.

Input derivatives are obtained by pushing (value, d/dx, d/dt[, d2/dx2])
through every layer in closed form; parameter gradients of anything built
from those quantities come from torch's reverse mode.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..exceptions import ParameterError

__all__ = [
    "InputNormalizer",
    "SurrogateModel",
    "Jet",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def torch_dtype(name):
    try:
        return _DTYPES[name]
    except KeyError:
        raise ParameterError(f"unsupported dtype {name!r}") from None


@dataclass(frozen=True)
class InputNormalizer:
    """Per-input affine map of ``[low, high]`` onto ``[0, 1]``."""

    low: tuple
    high: tuple

    def __post_init__(self):
        lo, hi = np.asarray(self.low, float), np.asarray(self.high, float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ParameterError("normalizer bounds must be 1-D of equal length")
        if np.any(hi <= lo):
            raise ParameterError("normalizer ranges must be non-degenerate")

    @property
    def dim(self):
        return len(self.low)

    @property
    def scale(self):
        return 1.0 / (np.asarray(self.high, float) - np.asarray(self.low, float))

    def normalize(self, u):
        return (np.asarray(u, float) - np.asarray(self.low)) * self.scale

    def denormalize(self, z):
        return np.asarray(z, float) / self.scale + np.asarray(self.low)


@dataclass
class Jet:
    """Network output with input derivatives; each field is ``(n, n_out)`` or None."""

    value: torch.Tensor
    dx: torch.Tensor | None = None
    dt: torch.Tensor | None = None
    dxx: torch.Tensor | None = None


def _init_layer(gen, fan_in, fan_out, dtype):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    W = (torch.rand(fan_out, fan_in, generator=gen, dtype=torch.float64) * 2 - 1) * bound
    return W.to(dtype), torch.zeros(fan_out, dtype=dtype)


class SurrogateModel(torch.nn.Module):
    """MLP ``(x, t, theta) -> outputs`` with an optional Fourier-feature input layer.

    The first two inputs are always ``x`` and ``t`` in physical units; the
    remaining ones are the velocity parameters.  Hidden layers use
    ``activation``; the output layer is affine.
    """

    def __init__(
        self,
        normalizer: InputNormalizer,
        depth=8,
        width=20,
        n_outputs=1,
        activation="tanh",
        fourier_features=0,
        fourier_scale=5.0,
        train_fourier=True,
        seed=0,
        dtype="float32",
    ):
        super().__init__()
        if depth < 1 or width < 1 or n_outputs < 1:
            raise ParameterError("depth, width and n_outputs must be >= 1")
        if activation not in ("tanh", "sin"):
            raise ParameterError(f"unknown activation {activation!r}")
        if fourier_features < 0:
            raise ParameterError("fourier_features must be >= 0")
        self.normalizer = normalizer
        self.activation = activation
        self.n_outputs = int(n_outputs)
        self.dtype_name = dtype
        self.arch = {
            "depth": int(depth),
            "width": int(width),
            "n_outputs": int(n_outputs),
            "activation": activation,
            "fourier_features": int(fourier_features),
            "fourier_scale": float(fourier_scale),
            "train_fourier": bool(train_fourier),
            "seed": int(seed),
            "dtype": dtype,
        }
        dt = torch_dtype(dtype)
        gen = torch.Generator().manual_seed(int(seed))
        d_in = normalizer.dim
        if fourier_features:
            Wf = torch.randn(fourier_features, d_in, generator=gen, dtype=torch.float64)
            self.W_f = torch.nn.Parameter((fourier_scale * Wf).to(dt), requires_grad=train_fourier)
            first = 2 * fourier_features
        else:
            self.W_f = None
            first = d_in
        sizes = [first] + [width] * depth + [n_outputs]
        self.weights = torch.nn.ParameterList()
        self.biases = torch.nn.ParameterList()
        for a, b in zip(sizes[:-1], sizes[1:]):
            W, bias = _init_layer(gen, a, b, dt)
            self.weights.append(torch.nn.Parameter(W))
            self.biases.append(torch.nn.Parameter(bias))
        self.register_buffer("_lo", torch.tensor(normalizer.low, dtype=dt))
        self.register_buffer("_scale", torch.tensor(normalizer.scale, dtype=dt))

    @property
    def input_dim(self):
        return self.normalizer.dim

    @property
    def torch_dtype(self):
        return torch_dtype(self.dtype_name)

    def _act(self, z, dz, d2z):
        if self.activation == "tanh":
            a = torch.tanh(z)
            g = 1.0 - a * a
            da = None if dz is None else g.unsqueeze(0) * dz
            d2a = None if d2z is None else g * d2z - 2.0 * a * g * dz[0] ** 2
            return a, da, d2a
        a = torch.sin(z)
        c = torch.cos(z)
        da = None if dz is None else c.unsqueeze(0) * dz
        d2a = None if d2z is None else c * d2z - a * dz[0] ** 2
        return a, da, d2a

    def jet(self, u, derivatives=True, second=False) -> Jet:
        """Outputs and exact derivatives with respect to physical ``x`` and ``t``.

        ``u`` is ``(n, input_dim)``.  Tangents are carried as a stacked
        ``(2, n, k)`` tensor (x and t directions); ``second`` adds ``d2/dx2``.
        """
        if u.ndim != 2 or u.shape[1] != self.input_dim:
            raise ParameterError(
                f"expected input of shape (n, {self.input_dim}), got {tuple(u.shape)}"
            )
        u = u.to(self.torch_dtype)
        a = (u - self._lo) * self._scale
        da = d2a = None
        if derivatives:
            da = torch.zeros((2,) + a.shape, dtype=a.dtype)
            da[0, :, 0] = self._scale[0]
            da[1, :, 1] = self._scale[1]
            if second:
                d2a = torch.zeros_like(a)
        if self.W_f is not None:
            z = 2.0 * math.pi * (a @ self.W_f.T)
            c, s = torch.cos(z), torch.sin(z)
            if derivatives:
                dz = 2.0 * math.pi * (da @ self.W_f.T)
                if second:
                    d2a = torch.cat([-c * dz[0] ** 2, -s * dz[0] ** 2], dim=1)
                da = torch.cat([-s.unsqueeze(0) * dz, c.unsqueeze(0) * dz], dim=2)
            a = torch.cat([c, s], dim=1)
        n_hidden = len(self.weights) - 1
        for i in range(n_hidden):
            W, b = self.weights[i], self.biases[i]
            z = a @ W.T + b
            dz = None if da is None else da @ W.T
            d2z = None if d2a is None else d2a @ W.T
            a, da, d2a = self._act(z, dz, d2z)
        W, b = self.weights[-1], self.biases[-1]
        out = Jet(a @ W.T + b)
        if da is not None:
            dout = da @ W.T
            out.dx, out.dt = dout[0], dout[1]
        if d2a is not None:
            out.dxx = d2a @ W.T
        return out

    def forward(self, u):
        return self.jet(u, derivatives=False).value

    def predict_numpy(self, u, batch=200_000):
        """Evaluate on a numpy array of inputs without building a graph."""
        u = np.asarray(u, dtype=float)
        outs = []
        with torch.no_grad():
            for k in range(0, len(u), batch):
                chunk = torch.as_tensor(u[k : k + batch], dtype=self.torch_dtype)
                outs.append(self.forward(chunk).double().numpy())
        out = np.concatenate(outs) if outs else np.empty((0, self.n_outputs))
        return out[:, 0] if self.n_outputs == 1 else out

    # -- checkpoints ---------------------------------------------------------

    def state_arrays(self):
        arrays = {f"W{i}": w.detach().numpy() for i, w in enumerate(self.weights)}
        arrays.update({f"b{i}": b.detach().numpy() for i, b in enumerate(self.biases)})
        if self.W_f is not None:
            arrays["W_f"] = self.W_f.detach().numpy()
        return arrays

    def save(self, path, extra_meta=None):
        """Write ``<path>`` (npz of parameters) with an embedded JSON header."""
        path = Path(path)
        meta = {
            "version": CHECKPOINT_VERSION,
            "arch": self.arch,
            "normalizer": {"low": list(self.normalizer.low), "high": list(self.normalizer.high)},
        }
        if extra_meta:
            meta.update(extra_meta)
        arrays = self.state_arrays()
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8), **arrays)
        return path

    @classmethod
    def load(cls, path):
        with np.load(Path(path)) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ParameterError(f"unsupported checkpoint version {meta.get('version')}")
            arch = meta["arch"]
            norm = InputNormalizer(tuple(meta["normalizer"]["low"]), tuple(meta["normalizer"]["high"]))
            model = cls(norm, **arch)
            with torch.no_grad():
                for i, w in enumerate(model.weights):
                    w.copy_(torch.from_numpy(data[f"W{i}"]))
                for i, b in enumerate(model.biases):
                    b.copy_(torch.from_numpy(data[f"b{i}"]))
                if model.W_f is not None:
                    model.W_f.copy_(torch.from_numpy(data["W_f"]))
        model.meta = meta
        return model

    def digest(self):
        h = hashlib.sha256()
        for k, v in sorted(self.state_arrays().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()
