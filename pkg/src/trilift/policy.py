"""Decentralized student policy: observations, encoder, and trajectory decoder.

Observation rows hold the load pose, the ego UAV pose/twist, and both
cable attach points, all expressed relative to the current load position
(rotations as the 6D two-column encoding). A history of rows plus the
22-node reference window feed four causal temporal-convolution streams
whose heads fuse into a latent vector. The decoder maps (latent,
normalized node time) to position and body rate; node velocity and
acceleration are the exact first/second time-derivatives of the decoded
position, obtained by propagating second-order jets through the network.

All forward passes run on plain ndarrays; the same code paths accept
autodiff Tensors as weights so training can differentiate through the
jet propagation.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import geom
from .autodiff import Jet2, concat, pad_front, tanh
from .flightctl import FRAME_LOAD, NODE_COUNT, NODE_OFFSETS, PLAN_HORIZON, PlanTrajectory
from .trajgen import RefWindow
from .world import RigidBodyState

FORMAT_VERSION = 1

OBS_DIM = 30
HISTORY = 10
HISTORY_DT = 0.1

# observation row layout
_SL_LOAD_P = slice(0, 3)
_SL_LOAD_R6 = slice(3, 9)
_SL_UAV_P = slice(9, 12)
_SL_UAV_V = slice(12, 15)
_SL_UAV_R6 = slice(15, 21)
_SL_UAV_OM = slice(21, 24)
_SL_C1 = slice(24, 27)
_SL_C2 = slice(27, 30)


class ShapeMismatch(ValueError):
    pass


@dataclass
class NormSpec:
    pos_scale: float = 3.0
    vel_scale: float = 3.0
    acc_scale: float = 10.0
    rate_scale: float = 5.0
    tau_scale: float = PLAN_HORIZON


@dataclass
class ArchSpec:
    history: int = HISTORY
    conv_channels: int = 32
    dense_dim: int = 64
    latent_dim: int = 256
    decoder_width: int = 128
    decoder_depth: int = 3
    decoder_kind: str = "pinn"    # "pinn" | "mlp"
    kernel: int = 3
    dilations: tuple = (1, 2)

    @staticmethod
    def tiny(decoder_kind: str = "pinn") -> "ArchSpec":
        return ArchSpec(conv_channels=16, dense_dim=32, latent_dim=128,
                        decoder_width=64, decoder_kind=decoder_kind)


# stream channel counts: history streams carry a validity-mask channel
STREAM_DIMS = {"load": 10, "ego": 16, "cable": 7, "ref": 18}


def build_observation(load_p, load_q, uav: RigidBodyState, rho_load, r_uav,
                      frame_origin) -> np.ndarray:
    """One 30-dim observation row relative to frame_origin (the load position)."""
    origin = np.asarray(frame_origin, dtype=float)
    load_rel = np.asarray(load_p, dtype=float) - origin
    uav_rel = uav.p - origin
    row = np.zeros(OBS_DIM)
    row[_SL_LOAD_P] = load_rel
    row[_SL_LOAD_R6] = geom.quat_to_rot6d(load_q)
    row[_SL_UAV_P] = uav_rel
    row[_SL_UAV_V] = uav.v
    row[_SL_UAV_R6] = geom.quat_to_rot6d(uav.q)
    row[_SL_UAV_OM] = uav.omega
    # attach points built from the relative positions so a pure world
    # translation cancels exactly, bit for bit
    row[_SL_C1] = load_rel + geom.quat_rotate(load_q, rho_load)
    row[_SL_C2] = uav_rel + geom.quat_rotate(uav.q, r_uav)
    return row


@dataclass
class Snapshot:
    """Raw quantities captured at one planner tick. Attach points are kept
    as body-rotation offsets so windows stay translation-invariant."""

    t: float
    load_p: np.ndarray
    load_q: np.ndarray
    uav: RigidBodyState
    c1_offset: np.ndarray   # R_load @ rho
    c2_offset: np.ndarray   # R_uav @ r_uav


@dataclass
class ObsWindow:
    rows: np.ndarray   # (H, 30), rows[0] = now, rows[k] = k ticks ago
    mask: np.ndarray   # (H,), 1 where the row is real history


class ObsHistory:
    """Per-UAV rolling history of raw snapshots; windows are re-expressed
    in the load frame of the instant they are requested."""

    def __init__(self, rho_load, r_uav, history: int = HISTORY):
        self.rho_load = np.asarray(rho_load, dtype=float)
        self.r_uav = np.asarray(r_uav, dtype=float)
        self.history = history
        self._snaps: deque[Snapshot] = deque(maxlen=history)

    def record(self, t: float, load_p, load_q, uav: RigidBodyState) -> None:
        load_p = np.asarray(load_p, dtype=float)
        load_q = np.asarray(load_q, dtype=float)
        c1 = geom.quat_rotate(load_q, self.rho_load)
        c2 = geom.quat_rotate(uav.q, self.r_uav)
        self._snaps.appendleft(Snapshot(t, load_p.copy(), load_q.copy(),
                                        uav.copy(), c1, c2))

    def window(self, frame_origin) -> ObsWindow:
        origin = np.asarray(frame_origin, dtype=float)
        rows = np.zeros((self.history, OBS_DIM))
        mask = np.zeros(self.history)
        for k, snap in enumerate(self._snaps):
            load_rel = snap.load_p - origin
            uav_rel = snap.uav.p - origin
            row = np.zeros(OBS_DIM)
            row[_SL_LOAD_P] = load_rel
            row[_SL_LOAD_R6] = geom.quat_to_rot6d(snap.load_q)
            row[_SL_UAV_P] = uav_rel
            row[_SL_UAV_V] = snap.uav.v
            row[_SL_UAV_R6] = geom.quat_to_rot6d(snap.uav.q)
            row[_SL_UAV_OM] = snap.uav.omega
            row[_SL_C1] = load_rel + snap.c1_offset
            row[_SL_C2] = uav_rel + snap.c2_offset
            rows[k] = row
            mask[k] = 1.0
        return ObsWindow(rows, mask)


# -- network parameters ---------------------------------------------------------


@dataclass
class PolicyParams:
    arch: ArchSpec
    norms: NormSpec
    weights: dict
    format_version: int = FORMAT_VERSION

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.arch, self.norms,
                            {k: v.copy() for k, v in self.weights.items()},
                            self.format_version)


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(arch: ArchSpec | None = None, seed: int = 0,
                norms: NormSpec | None = None) -> PolicyParams:
    arch = arch or ArchSpec()
    norms = norms or NormSpec()
    rng = np.random.default_rng(seed)
    w: dict[str, np.ndarray] = {}
    K = arch.kernel
    ch = arch.conv_channels
    for name, c_in in STREAM_DIMS.items():
        last = c_in
        for li in range(len(arch.dilations)):
            w[f"{name}_conv{li}_W"] = _glorot(rng, K * last, ch, (K, last, ch))
            w[f"{name}_conv{li}_b"] = np.zeros(ch)
            last = ch
        w[f"{name}_dense_W"] = _glorot(rng, ch, arch.dense_dim, (ch, arch.dense_dim))
        w[f"{name}_dense_b"] = np.zeros(arch.dense_dim)
    fused_in = 4 * arch.dense_dim
    w["fusion_W"] = _glorot(rng, fused_in, arch.latent_dim, (fused_in, arch.latent_dim))
    w["fusion_b"] = np.zeros(arch.latent_dim)
    out_dim = 6 if arch.decoder_kind == "pinn" else 12
    last = arch.latent_dim + 1
    for li in range(arch.decoder_depth):
        w[f"dec{li}_W"] = _glorot(rng, last, arch.decoder_width, (last, arch.decoder_width))
        w[f"dec{li}_b"] = np.zeros(arch.decoder_width)
        last = arch.decoder_width
    w["dec_out_W"] = _glorot(rng, last, out_dim, (last, out_dim))
    w["dec_out_b"] = np.zeros(out_dim)
    return PolicyParams(arch, norms, w)


def save_checkpoint(params: PolicyParams, path: str | Path) -> None:
    doc = {
        "format_version": params.format_version,
        "arch": {**asdict(params.arch), "dilations": list(params.arch.dilations)},
        "norms": asdict(params.norms),
        "weights": {k: v.tolist() for k, v in sorted(params.weights.items())},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> PolicyParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    arch_raw = dict(doc["arch"])
    arch_raw["dilations"] = tuple(arch_raw["dilations"])
    arch = ArchSpec(**arch_raw)
    norms = NormSpec(**doc["norms"])
    weights = {k: np.asarray(v, dtype=np.float64) for k, v in doc["weights"].items()}
    return PolicyParams(arch, norms, weights)


# -- stream assembly ------------------------------------------------------------


def window_streams(window: ObsWindow, ref: RefWindow, norms: NormSpec) -> dict:
    """Network inputs per stream, time-ascending (oldest row first)."""
    rows = window.rows[::-1]
    mask = window.mask[::-1]
    masked = rows * mask[:, None]
    n = norms

    load = np.concatenate([masked[:, _SL_LOAD_P] / n.pos_scale,
                           masked[:, _SL_LOAD_R6],
                           mask[:, None]], axis=1)
    ego = np.concatenate([masked[:, _SL_UAV_P] / n.pos_scale,
                          masked[:, _SL_UAV_V] / n.vel_scale,
                          masked[:, _SL_UAV_R6],
                          masked[:, _SL_UAV_OM] / n.rate_scale,
                          mask[:, None]], axis=1)
    cable = np.concatenate([masked[:, _SL_C1] / n.pos_scale,
                            masked[:, _SL_C2] / n.pos_scale,
                            mask[:, None]], axis=1)
    r6 = np.stack([geom.quat_to_rot6d(q) for q in ref.q])
    refs = np.concatenate([ref.p / n.pos_scale, ref.v / n.vel_scale,
                           ref.a / n.acc_scale, r6,
                           ref.omega / n.rate_scale], axis=1)
    for name, arr in (("load", load), ("ego", ego), ("cable", cable), ("ref", refs)):
        if arr.shape[1] != STREAM_DIMS[name]:
            raise ShapeMismatch(f"{name} stream width {arr.shape[1]}")
    return {"load": load, "ego": ego, "cable": cable, "ref": refs}


def stack_streams(streams_list: list[dict]) -> dict:
    return {k: np.stack([s[k] for s in streams_list]) for k in STREAM_DIMS}


# -- forward passes (ndarray or Tensor weights) ----------------------------------


def _causal_conv(x, W, b, dilation: int):
    """Causal dilated 1-D convolution over axis -2. x: (B, T, Cin)."""
    k = W.shape[0]
    t_len = x.shape[-2]
    xp = pad_front(x, axis=-2, n=(k - 1) * dilation)
    out = None
    for ki in range(k):
        lo = ki * dilation
        term = xp[:, lo:lo + t_len, :] @ W[ki]
        out = term if out is None else out + term
    return out + b


def encode(weights: dict, arch: ArchSpec, streams: dict):
    """Latent vector (B, latent_dim) from the four input streams."""
    heads = []
    for name in ("load", "ego", "cable", "ref"):
        h = streams[name]
        if h.ndim == 2:
            h = h[None, :, :]
        for li, dil in enumerate(arch.dilations):
            h = tanh(_causal_conv(h, weights[f"{name}_conv{li}_W"],
                                  weights[f"{name}_conv{li}_b"], dil))
        last = h[:, -1, :]
        heads.append(tanh(last @ weights[f"{name}_dense_W"]
                          + weights[f"{name}_dense_b"]))
    fused = concat(heads, axis=-1)
    return tanh(fused @ weights["fusion_W"] + weights["fusion_b"])


def _decoder_input_jet(x, taus: np.ndarray, norms: NormSpec) -> Jet2:
    """Seed jet over (latent, normalized time) for a set of node times."""
    taus = np.asarray(taus, dtype=float)
    n = taus.shape[0]
    if isinstance(x, np.ndarray) and x.ndim == 1:
        x = x[None, :]
    b = x.shape[0]
    latent_dim = x.shape[-1]
    tau_feat = np.broadcast_to((taus / norms.tau_scale)[None, :, None], (b, n, 1)).copy()
    x_tiled = x[:, None, :] if isinstance(x, np.ndarray) else \
        x.reshape(b, 1, latent_dim).broadcast_to((b, n, latent_dim))
    if isinstance(x, np.ndarray):
        x_tiled = np.broadcast_to(x_tiled, (b, n, latent_dim)).copy()
    val = concat([x_tiled, tau_feat], axis=-1)
    d1 = np.zeros((b, n, latent_dim + 1))
    d1[:, :, -1] = 1.0 / norms.tau_scale
    d2 = np.zeros((b, n, latent_dim + 1))
    return Jet2(val, d1, d2)


def decode_nodes(weights: dict, arch: ArchSpec, norms: NormSpec, x, taus):
    """Decode node times -> (p, omega, v, a), each (B, N, 3).

    PINN decoder: v and a are exact jet derivatives of p. MLP decoder:
    all four are direct network outputs (no derivative structure).
    """
    if arch.decoder_kind == "pinn":
        jet = _decoder_input_jet(x, taus, norms)
        for li in range(arch.decoder_depth):
            jet = jet.affine(weights[f"dec{li}_W"], weights[f"dec{li}_b"]).tanh()
        out = jet.affine(weights["dec_out_W"], weights["dec_out_b"])
        p = out.val[..., 0:3] * norms.pos_scale
        om = out.val[..., 3:6] * norms.rate_scale
        v = out.d1[..., 0:3] * norms.pos_scale
        a = out.d2[..., 0:3] * norms.pos_scale
        return p, om, v, a
    h = _decoder_input_jet(x, taus, norms).val
    for li in range(arch.decoder_depth):
        h = tanh(h @ weights[f"dec{li}_W"] + weights[f"dec{li}_b"])
    out = h @ weights["dec_out_W"] + weights["dec_out_b"]
    p = out[..., 0:3] * norms.pos_scale
    om = out[..., 3:6] * norms.rate_scale
    v = out[..., 6:9] * norms.vel_scale
    a = out[..., 9:12] * norms.acc_scale
    return p, om, v, a


def decode_values_only(weights: dict, arch: ArchSpec, norms: NormSpec, x, taus):
    """(p, omega) without the jet machinery; used when derivative outputs
    are neither supervised nor needed."""
    h = _decoder_input_jet(x, taus, norms).val
    for li in range(arch.decoder_depth):
        h = tanh(h @ weights[f"dec{li}_W"] + weights[f"dec{li}_b"])
    out = h @ weights["dec_out_W"] + weights["dec_out_b"]
    return out[..., 0:3] * norms.pos_scale, out[..., 3:6] * norms.rate_scale


def decode_jet(params: PolicyParams, x, tau: float):
    """Single-time decode: (p, omega, v, a) with exact time-derivatives."""
    p, om, v, a = decode_nodes(params.weights, params.arch, params.norms,
                               x, np.array([float(tau)]))
    return p[0, 0], om[0, 0], v[0, 0], a[0, 0]


def encode_single(params: PolicyParams, window: ObsWindow, ref: RefWindow) -> np.ndarray:
    streams = window_streams(window, ref, params.norms)
    return encode(params.weights, params.arch, streams)[0]


def predict_plan(params: PolicyParams, window: ObsWindow, ref: RefWindow,
                 t_now: float) -> PlanTrajectory:
    """Full 22-node plan in the load frame of t_now."""
    x = encode_single(params, window, ref)
    p, om, v, a = decode_nodes(params.weights, params.arch, params.norms,
                               x[None, :], NODE_OFFSETS)
    return PlanTrajectory(t_now, p[0], om[0], v[0], a[0], frame=FRAME_LOAD)
