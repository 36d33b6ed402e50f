"""Deterministic 2D image-method ray tracer.

Specular reflections off wall segments up to third order; walls are opaque.
Path amplitudes use free-space spreading at the band-center wavelength times
one perpendicular-polarization Fresnel coefficient per bounce.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from geotwin.scene import SPEED_OF_LIGHT, Scene

__all__ = [
    "SPEED_OF_LIGHT",
    "PathComponent",
    "PathSet",
    "fresnel_te",
    "trace",
    "transfer_function",
    "power_samples",
    "local_grid_power",
    "Tracer",
]

MAX_ORDER = 3
_T_EPS = 1e-9
_CHUNK = 1_500_000


@dataclass(frozen=True)
class PathComponent:
    amplitude: complex
    delay: float
    departure_dir: tuple[float, float]
    order: int
    length: float
    walls: tuple[int, ...] = ()


@dataclass(frozen=True)
class PathSet:
    tx: tuple[float, float]
    paths: tuple[PathComponent, ...]
    max_order: int

    def __len__(self):
        return len(self.paths)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([p.amplitude for p in self.paths], dtype=complex)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay for p in self.paths], dtype=float)

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    @property
    def has_los(self) -> bool:
        return any(p.order == 0 for p in self.paths)


def fresnel_te(cos_i, eps_r):
    """Perpendicular-polarization reflection coefficient.

    ``eps_r = inf`` gives the perfect-reflector limit of -1.
    """
    cos_i = np.asarray(cos_i, dtype=float)
    eps_r = np.asarray(eps_r, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.sqrt(eps_r - (1.0 - cos_i**2))
        gamma = (cos_i - root) / (cos_i + root)
    # eps_r = 1 is no boundary at all, including at grazing incidence
    gamma = np.where(eps_r == 1.0, 0.0, gamma)
    return np.where(np.isinf(eps_r), -1.0, gamma)


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


@lru_cache(maxsize=8)
def _sequences(n_walls: int, order: int) -> np.ndarray:
    """All wall index sequences of length ``order`` without immediate repeats."""
    if n_walls == 0 or (order > 1 and n_walls < 2):
        return np.zeros((0, order), dtype=np.intp)
    seqs = [s for s in itertools.product(range(n_walls), repeat=order) if all(s[i] != s[i + 1] for i in range(order - 1))]
    return np.asarray(seqs, dtype=np.intp).reshape(-1, order)


class Tracer:
    """Precomputed tracer for one scene.

    Receiver images are built once per wall sequence; each transmitter then
    only needs the forward intersection and blockage tests, which is what
    makes the 400-point local grids affordable.
    """

    def __init__(self, scene: Scene, max_order: int = 2):
        if not 0 <= max_order <= MAX_ORDER:
            raise ValueError(f"max_order must be in [0, {MAX_ORDER}], got {max_order}")
        self.scene = scene
        self.max_order = max_order
        self.rx = np.asarray(scene.rx, dtype=float)
        self.wavelength = scene.band.wavelength
        n = len(scene.walls)
        self.wa = np.array([w.a for w in scene.walls], dtype=float).reshape(n, 2)
        self.wb = np.array([w.b for w in scene.walls], dtype=float).reshape(n, 2)
        self.wd = self.wb - self.wa
        lengths = np.linalg.norm(self.wd, axis=1)
        self.normal = np.stack([-self.wd[:, 1], self.wd[:, 0]], axis=1) / np.maximum(lengths, 1e-300)[:, None]
        self.eps = scene.wall_eps()

        # images[m] has shape (S, m, 2): image of rx seen by bounce j of the sequence
        self.seqs = {}
        self.images = {}
        for m in range(1, max_order + 1):
            seqs = _sequences(n, m)
            imgs = np.empty((len(seqs), m, 2))
            point = np.broadcast_to(self.rx, (len(seqs), 2))
            for j in range(m - 1, -1, -1):
                w = seqs[:, j]
                off = np.einsum("ij,ij->i", point - self.wa[w], self.normal[w])
                point = point - 2.0 * off[:, None] * self.normal[w]
                imgs[:, j] = point
            self.seqs[m] = seqs
            self.images[m] = imgs

    # -- geometry helpers -------------------------------------------------

    def _blocked(self, p, q, exclude_a, exclude_b) -> np.ndarray:
        """Whether segments p->q (K, 2) cross any wall other than the excluded ones."""
        k = len(p)
        out = np.zeros(k, dtype=bool)
        n = len(self.wa)
        if n == 0 or k == 0:
            return out
        step = max(1, _CHUNK // n)
        widx = np.arange(n)
        for s in range(0, k, step):
            sl = slice(s, s + step)
            r = (q[sl] - p[sl])[:, None, :]
            ap = self.wa[None, :, :] - p[sl][:, None, :]
            denom = _cross(r, self.wd[None, :, :])
            with np.errstate(divide="ignore", invalid="ignore"):
                t = _cross(ap, self.wd[None, :, :]) / denom
                u = _cross(ap, r) / denom
            hit = (np.abs(denom) > 1e-15) & (t > _T_EPS) & (t < 1.0 - _T_EPS) & (u >= 0.0) & (u <= 1.0)
            hit &= widx[None, :] != exclude_a[sl, None]
            hit &= widx[None, :] != exclude_b[sl, None]
            out[sl] = hit.any(axis=1)
        return out

    def _order_paths(self, txs: np.ndarray, m: int):
        """Valid order-m paths for every tx; returns (tx_index, seq_index, points)."""
        seqs, imgs = self.seqs[m], self.images[m]
        n_tx, n_seq = len(txs), len(seqs)
        empty = (np.zeros(0, np.intp), np.zeros(0, np.intp), np.zeros((0, m + 2, 2)))
        if n_seq == 0 or n_tx == 0:
            return empty
        out_t, out_s, out_pts = [], [], []
        tx_step = max(1, _CHUNK // n_seq)
        for t0 in range(0, n_tx, tx_step):
            tsub = txs[t0 : t0 + tx_step]
            cur = np.broadcast_to(tsub[:, None, :], (len(tsub), n_seq, 2))
            valid = np.ones((len(tsub), n_seq), dtype=bool)
            pts = [cur]
            for j in range(m):
                w = seqs[:, j]
                r = imgs[None, :, j, :] - cur
                ap = self.wa[w][None] - cur
                denom = _cross(r, self.wd[w][None])
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = _cross(ap, self.wd[w][None]) / denom
                    u = _cross(ap, r) / denom
                valid &= (np.abs(denom) > 1e-15) & (t > _T_EPS) & (t < 1.0 - _T_EPS) & (u >= 0.0) & (u <= 1.0)
                cur = self.wa[w][None] + u[..., None] * self.wd[w][None]
                pts.append(cur)
            ti, si = np.nonzero(valid)
            if len(ti) == 0:
                continue
            poly = np.stack([p[ti, si] for p in pts] + [np.broadcast_to(self.rx, (len(ti), 2))], axis=1)
            blocked = np.zeros(len(ti), dtype=bool)
            none = np.full(len(ti), -1, dtype=np.intp)
            for k in range(m + 1):
                ex_a = seqs[si, k - 1] if k >= 1 else none
                ex_b = seqs[si, k] if k < m else none
                live = ~blocked
                if not live.any():
                    break
                blocked[live] = self._blocked(poly[live, k], poly[live, k + 1], ex_a[live], ex_b[live])
            keep = ~blocked
            out_t.append(ti[keep] + t0)
            out_s.append(si[keep])
            out_pts.append(poly[keep])
        if not out_t:
            return empty
        return np.concatenate(out_t), np.concatenate(out_s), np.concatenate(out_pts)

    def path_arrays(self, txs) -> list[dict]:
        """Per-tx dict of numpy arrays: amplitude, delay, length, order, dirs, walls."""
        txs = np.atleast_2d(np.asarray(txs, dtype=float))
        n_tx = len(txs)
        spread = self.wavelength / (4.0 * math.pi)
        parts = [[] for _ in range(n_tx)]

        # line of sight
        d = self.rx[None, :] - txs
        dist = np.linalg.norm(d, axis=1)
        none = np.full(n_tx, -1, dtype=np.intp)
        los_ok = ~self._blocked(txs, np.broadcast_to(self.rx, txs.shape), none, none)
        for i in np.nonzero(los_ok)[0]:
            parts[i].append(
                (np.array([spread / dist[i]]), np.array([dist[i]]), np.zeros(1, np.intp), (d[i] / dist[i])[None], [()])
            )

        for m in range(1, self.max_order + 1):
            ti, si, poly = self._order_paths(txs, m)
            if len(ti) == 0:
                continue
            seg = np.diff(poly, axis=1)
            seg_len = np.linalg.norm(seg, axis=2)
            length = seg_len.sum(axis=1)
            incoming = seg[:, :m] / seg_len[:, :m, None]
            walls = self.seqs[m][si]
            cos_i = np.abs(np.einsum("kjc,kjc->kj", incoming, self.normal[walls]))
            gamma = np.prod(fresnel_te(np.clip(cos_i, 0.0, 1.0), self.eps[walls]), axis=1)
            amp = spread / length * gamma
            dirs = seg[:, 0] / seg_len[:, 0, None]
            order = np.full(len(ti), m, dtype=np.intp)
            for i in np.unique(ti):
                sel = ti == i
                parts[i].append((amp[sel], length[sel], order[sel], dirs[sel], [tuple(w) for w in walls[sel]]))

        out = []
        for i in range(n_tx):
            if parts[i]:
                amp = np.concatenate([p[0] for p in parts[i]])
                length = np.concatenate([p[1] for p in parts[i]])
                order = np.concatenate([p[2] for p in parts[i]])
                dirs = np.concatenate([p[3] for p in parts[i]])
                walls = [w for p in parts[i] for w in p[4]]
            else:
                amp, length = np.zeros(0), np.zeros(0)
                order, dirs, walls = np.zeros(0, np.intp), np.zeros((0, 2)), []
            idx = np.lexsort((order, length))
            amp, length, order, dirs = amp[idx], length[idx], order[idx], dirs[idx]
            walls = [walls[k] for k in idx]
            # corner hits show up once per adjacent wall: same length, gain and
            # departure direction. Mirror-symmetric paths differ in direction.
            keep = np.ones(len(amp), dtype=bool)
            for k in range(1, len(amp)):
                for j in range(k - 1, -1, -1):
                    if length[k] - length[j] > 1e-9 * length[k]:
                        break
                    if (
                        keep[j]
                        and abs(amp[k] - amp[j]) <= 1e-12 * abs(amp[k])
                        and np.all(np.abs(dirs[k] - dirs[j]) <= 1e-9)
                    ):
                        keep[k] = False
                        break
            out.append(
                {
                    "amplitude": amp[keep].astype(complex),
                    "length": length[keep],
                    "delay": length[keep] / SPEED_OF_LIGHT,
                    "order": order[keep],
                    "dirs": dirs[keep],
                    "walls": [w for w, k in zip(walls, keep) if k],
                }
            )
        return out

    def trace(self, tx) -> PathSet:
        arr = self.path_arrays(np.asarray(tx, dtype=float)[None])[0]
        paths = tuple(
            PathComponent(
                amplitude=complex(arr["amplitude"][k]),
                delay=float(arr["delay"][k]),
                departure_dir=(float(arr["dirs"][k, 0]), float(arr["dirs"][k, 1])),
                order=int(arr["order"][k]),
                length=float(arr["length"][k]),
                walls=tuple(int(w) for w in arr["walls"][k]),
            )
            for k in range(len(arr["delay"]))
        )
        return PathSet(tx=(float(tx[0]), float(tx[1])), paths=paths, max_order=self.max_order)


def trace(scene: Scene, tx, max_order: int = 2) -> PathSet:
    """Trace all LOS and specular reflection paths from ``tx`` to the scene receiver."""
    tx = (float(tx[0]), float(tx[1]))
    if tx == tuple(scene.rx):
        raise ValueError("tx coincides with rx")
    return Tracer(scene, max_order).trace(tx)


def transfer(amplitude, delay, freqs) -> np.ndarray:
    freqs = np.asarray(freqs, dtype=float)
    if len(amplitude) == 0:
        return np.zeros(freqs.shape, dtype=complex)
    phase = np.exp(-2j * np.pi * np.multiply.outer(freqs, delay))
    # elementwise sum keeps h(0) == sum(amplitude) exactly
    return (phase * np.asarray(amplitude, dtype=complex)).sum(axis=-1)


def transfer_function(ps: PathSet, freqs) -> np.ndarray:
    """h(f) = sum_n a_n exp(-i 2 pi f tau_n) at every frequency in ``freqs``."""
    return transfer(ps.amplitudes, ps.delays, freqs)


def power_samples(scene: Scene, tx, max_order: int = 2, tracer: Tracer | None = None) -> np.ndarray:
    """|h(f)|^2 over the scene's band grid (linear, relative to unit transmit power)."""
    tracer = tracer or Tracer(scene, max_order)
    arr = tracer.path_arrays(np.asarray(tx, dtype=float)[None])[0]
    h = transfer(arr["amplitude"], arr["delay"], scene.band.frequencies())
    return np.abs(h) ** 2


def grid_offsets(grid_n: int, spacing: float) -> np.ndarray:
    side = math.isqrt(grid_n)
    if side * side != grid_n:
        raise ValueError(f"grid_n must be a perfect square, got {grid_n}")
    axis = spacing * (np.arange(side) - (side - 1) / 2.0)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def local_grid_power(
    scene: Scene,
    tx,
    grid_n: int = 400,
    spacing: float | None = None,
    max_order: int = 2,
    tracer: Tracer | None = None,
) -> np.ndarray:
    """Band-center power |h(f_c)|^2 with the tx moved over a centered square grid.

    ``spacing`` defaults to a quarter of the band-center wavelength.
    """
    tracer = tracer or Tracer(scene, max_order)
    if spacing is None:
        spacing = scene.band.wavelength / 4.0
    pts = np.asarray(tx, dtype=float)[None] + grid_offsets(grid_n, spacing)
    fc = np.array([scene.band.center])
    out = np.empty(len(pts))
    for k, arr in enumerate(tracer.path_arrays(pts)):
        out[k] = np.abs(transfer(arr["amplitude"], arr["delay"], fc)[0]) ** 2
    return out
