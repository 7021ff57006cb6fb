"""The spacetime field network and its color head.

One MLP trunk maps an encoded (position, time) query to three heads:
density sigma (softplus), a flat 3K vector of trajectory coefficients
(linear head, zero-initialized so the scene starts static), and a color
embedding omega. A second small network maps [omega, encoding of
(view direction, color time)] to RGB, so the color a point emits can vary
with the time it is rendered at, not just the time it is queried at.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffcore as dc


def positional_encode(x, num_freqs, include_input=True):
    """Encode (B, D) input with sin/cos at frequencies pi * 2^k, k < num_freqs.

    Output layout: [x, sin(pi x), cos(pi x), sin(2 pi x), cos(2 pi x), ...],
    width D * (2 * num_freqs + include_input). Accepts a Tensor or array and
    returns the same kind.
    """
    if isinstance(x, dc.Tensor):
        return dc.posenc(x, num_freqs, include_input)
    return dc.posenc(dc.Tensor(x), num_freqs, include_input).data


def encoding_width(dim, num_freqs, include_input=True):
    return dim * (2 * num_freqs + int(include_input))


@dataclass
class ModelConfig:
    """Architecture hyperparameters. Defaults follow the full-scale design;
    the desk-scale experiments shrink the widths, not the structure."""
    T: int = 24
    K: int = 23
    trunk_depth: int = 8
    trunk_width: int = 256
    skip_layer: int = 5          # 1-based; input encoding re-concatenated here
    embed_dim: int = 128         # omega width
    color_width: int = 128       # two hidden layers of this width
    freqs_spacetime: int = 10
    freqs_dir: int = 4
    init_seed: int = 0
    sigma_bias_init: float = 0.0   # negative starts the field nearly empty
    sigma_scale: float = 1.0       # density = softplus(head) * sigma_scale;
                                   # lets desk-scale step budgets reach opaque
                                   # surface densities

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _layer_units(cfg):
    """(name, fan_in, fan_out, zero_init) for every linear layer, in order."""
    enc_pt = encoding_width(4, cfg.freqs_spacetime)
    enc_dt = encoding_width(4, cfg.freqs_dir)
    units = []
    fan = enc_pt
    for i in range(1, cfg.trunk_depth + 1):
        if i > 1 and i == cfg.skip_layer:
            fan += enc_pt
        units.append((f"trunk{i}", fan, cfg.trunk_width, False))
        fan = cfg.trunk_width
    units.append(("sigma", cfg.trunk_width, 1, False))
    units.append(("phi", cfg.trunk_width, 3 * cfg.K, True))
    units.append(("omega", cfg.trunk_width, cfg.embed_dim, False))
    units.append(("color1", cfg.embed_dim + enc_dt, cfg.color_width, False))
    units.append(("color2", cfg.color_width, cfg.color_width, False))
    units.append(("color3", cfg.color_width, 3, False))
    return units


def expected_param_count(cfg):
    """Closed-form parameter count; asserted against the built network."""
    return sum((fi + 1) * fo for _, fi, fo, _ in _layer_units(cfg))


@dataclass
class FieldOutput:
    """Per-query field values; each is a Tensor batched over query points."""
    phi: dc.Tensor      # (B, 3K) trajectory coefficients
    omega: dc.Tensor    # (B, embed_dim) color embedding
    sigma: dc.Tensor    # (B, 1) nonnegative density


class FieldNet:
    """Parameters plus the forward queries. Parameters are immutable during
    rendering; only the trainer writes them, between steps."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.params = {}
        rng = np.random.default_rng(np.random.PCG64(cfg.init_seed))
        for name, fan_in, fan_out, zero in _layer_units(cfg):
            if zero:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = np.sqrt(6.0 / fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.params[f"{name}.w"] = dc.Tensor(w, requires_grad=True)
            bias = np.zeros(fan_out)
            if name == "sigma":
                bias[:] = cfg.sigma_bias_init
            self.params[f"{name}.b"] = dc.Tensor(bias, requires_grad=True)
        assert self.param_count() == expected_param_count(cfg)

    def param_count(self):
        return sum(p.size for p in self.params.values())

    def named_params(self):
        """Insertion (construction) order; the checkpoint format relies on it."""
        return list(self.params.items())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def detached(self):
        """A constant-parameter view for rendering without graph building."""
        out = FieldNet.__new__(FieldNet)
        out.cfg = self.cfg
        out.params = {k: v.detach() for k, v in self.params.items()}
        return out

    def frozen_phi(self):
        """Exclude the trajectory head from optimization (static baseline)."""
        return {"phi.w", "phi.b"}

    # -- queries ------------------------------------------------------------

    def _check_finite(self, *arrays):
        for a in arrays:
            d = a.data if isinstance(a, dc.Tensor) else np.asarray(a)
            if not np.all(np.isfinite(d)):
                raise ValueError("non-finite field query input")

    def _time_column(self, t, n):
        tn = float(t) / max(self.cfg.T - 1, 1)
        return np.full((n, 1), tn)

    def query_field(self, p, t):
        """Field output at positions p (B, 3) and one scalar time t.

        p may be a constant array or a Tensor carrying gradients (warped
        correspondence positions do). Deterministic in (params, p, t).
        """
        cfg = self.cfg
        if not isinstance(p, dc.Tensor):
            p = dc.Tensor(p)
        self._check_finite(p)
        if not np.isfinite(t):
            raise ValueError("non-finite query time")
        tcol = dc.Tensor(self._time_column(t, p.shape[0]))
        enc = dc.posenc(dc.concat([p, tcol], axis=1), cfg.freqs_spacetime)
        h = enc
        for i in range(1, cfg.trunk_depth + 1):
            if i > 1 and i == cfg.skip_layer:
                h = dc.concat([h, enc], axis=1)
            h = dc.relu(dc.linear(h, self.params[f"trunk{i}.w"],
                                  self.params[f"trunk{i}.b"]))
        sigma = dc.softplus(dc.linear(h, self.params["sigma.w"], self.params["sigma.b"]))
        if cfg.sigma_scale != 1.0:
            sigma = dc.mul(sigma, cfg.sigma_scale)
        phi = dc.linear(h, self.params["phi.w"], self.params["phi.b"])
        omega = dc.linear(h, self.params["omega.w"], self.params["omega.b"])
        return FieldOutput(phi=phi, omega=omega, sigma=sigma)

    def encode_dirtime(self, d, t_query):
        """Constant encoding of (view direction, color time); computing it
        once and passing it to query_color saves repeated trig work when the
        same rays are shaded under several field states."""
        d = np.asarray(d, dtype=np.float64)
        self._check_finite(d)
        if not np.isfinite(t_query):
            raise ValueError("non-finite color time")
        tcol = self._time_column(t_query, d.shape[0])
        return dc.posenc(dc.Tensor(np.concatenate([d, tcol], axis=1)),
                         self.cfg.freqs_dir)

    def query_color(self, omega, t_query, d, enc=None):
        """RGB in (0,1) for embeddings omega (B, E), one scalar color time
        t_query, and unit view directions d (B, 3)."""
        if not isinstance(omega, dc.Tensor):
            omega = dc.Tensor(omega)
        self._check_finite(omega)
        if enc is None:
            enc = self.encode_dirtime(d, t_query)
        h = dc.concat([omega, enc], axis=1)
        h = dc.relu(dc.linear(h, self.params["color1.w"], self.params["color1.b"]))
        h = dc.relu(dc.linear(h, self.params["color2.w"], self.params["color2.b"]))
        return dc.sigmoid(dc.linear(h, self.params["color3.w"], self.params["color3.b"]))
