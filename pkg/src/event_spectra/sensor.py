"""Event-camera pixel model with an intensity-dependent source-follower bandwidth.

Per pixel and simulation step k (time t_k = k * dt):

    I_k   = irradiance(t_k) * T(lambda)
    L_k   = ln(I_k + epsilon)
    f_c   = pr_bias * (f_dark + kappa * I_{k-1})
    V_k   = V_{k-1} + (1 - exp(-2 pi f_c dt)) * (L_k - V_{k-1})

and events are emitted while ``V - V_ref`` crosses the ON threshold
``C_on + diff_on`` (or ``V_ref - V`` crosses ``C_off``), moving ``V_ref`` by
one threshold per event.  Timestamps are ``rint(t_k * 1e6)`` microseconds.

Two engines produce identical streams: ``dense`` steps every pixel through
every time step and serves as the reference; ``segments`` exploits the
piecewise-constant illumination and jumps through each constant stretch in
closed form.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core.types import EventStream, ValidationError
from .projector import (
    ProjectorConfig,
    ScanSchedule,
    irradiance,
    projector_correspondence,
)
from .scene import RigGeometry, SceneModel, reflectance_image

TWO_PI = 2.0 * np.pi
# slack on threshold comparisons, shared by both engines
THRESHOLD_TOL = 1e-9
PANEL_BANDWIDTH_HZ = 1.0e4
PANEL_REFLECTANCE = 0.99
NEVER = np.iinfo(np.int64).min // 4


def _default_kappa(f_dark: float = 50.0, i_on: float = 5.0) -> float:
    # the 99 % panel under I_a + I_p = 5 reaches the panel bandwidth at pr_bias 1
    return (PANEL_BANDWIDTH_HZ - f_dark) / (i_on * PANEL_REFLECTANCE)


@dataclass(frozen=True)
class SensorConfig:
    width: int = 640
    height: int = 480
    c_on: float = 0.3
    c_off: float = 0.3
    pr_bias: float = 1.0
    diff_on: float = 0.0
    f_dark: float = 50.0
    kappa: float = field(default_factory=_default_kappa)
    refractory_us: int = 0
    epsilon: float = 1e-3
    threshold_sigma: float = 0.0
    seed: int = 0
    dt_sim: float | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("sensor.resolution must be positive")
        if not (self.c_on > 0 and self.c_off > 0):
            raise ValidationError("sensor.c_on and sensor.c_off must be > 0")
        if self.c_on + self.diff_on <= 0:
            raise ValidationError("sensor.diff_on makes the ON threshold non-positive")
        if not self.f_dark > 0:
            raise ValidationError("sensor.f_dark must be > 0")
        if self.kappa < 0:
            raise ValidationError("sensor.kappa must be >= 0")
        if not self.epsilon > 0:
            raise ValidationError("sensor.epsilon must be > 0")
        if not self.pr_bias > 0:
            raise ValidationError("sensor.pr_bias must be > 0")
        if self.refractory_us < 0:
            raise ValidationError("sensor.refractory_us must be >= 0")
        if self.threshold_sigma < 0:
            raise ValidationError("sensor.threshold_sigma must be >= 0")
        if self.dt_sim is not None and not self.dt_sim > 0:
            raise ValidationError("sensor.dt_sim must be > 0")

    @classmethod
    def ideal(cls, **kw) -> "SensorConfig":
        """Bandwidth far above any signal rate: the follower tracks instantly."""
        kw.setdefault("kappa", 0.0)
        kw.setdefault("f_dark", 1e12)
        return cls(**kw)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.width, self.height

    def with_(self, **kw) -> "SensorConfig":
        return replace(self, **kw)


@dataclass
class PixelState:
    """Mutable per-pixel simulation state (flat arrays, one entry per pixel)."""

    V: np.ndarray
    V_ref: np.ndarray
    t_last: np.ndarray
    c_on: np.ndarray
    c_off: np.ndarray
    I_prev: np.ndarray

    @classmethod
    def create(cls, V, c_on, c_off, I_prev) -> "PixelState":
        V = np.array(V, dtype=np.float64).ravel()
        n = V.size
        return cls(
            V=V,
            V_ref=V.copy(),
            t_last=np.full(n, NEVER, dtype=np.int64),
            c_on=np.broadcast_to(np.asarray(c_on, dtype=np.float64), (n,)).copy(),
            c_off=np.broadcast_to(np.asarray(c_off, dtype=np.float64), (n,)).copy(),
            I_prev=np.broadcast_to(np.asarray(I_prev, dtype=np.float64), (n,)).copy(),
        )

    def subset(self, sel) -> "PixelState":
        return PixelState(self.V[sel], self.V_ref[sel], self.t_last[sel],
                          self.c_on[sel], self.c_off[sel], self.I_prev[sel])


@dataclass
class SimOutput:
    stream: EventStream
    on_counts: np.ndarray
    off_counts: np.ndarray
    steps: int = 0
    dt: float = 0.0

    @property
    def fired(self) -> np.ndarray:
        return self.on_counts > 0


# ------------------------------------------------------------ pixel physics


def log_photocurrent(I, epsilon: float = 1e-3):
    I = np.asarray(I, dtype=np.float64)
    if np.any(I < 0):
        raise ValueError("intensity must be >= 0")
    out = np.log(I + epsilon)
    return float(out) if out.ndim == 0 else out


def bandwidth_of(I, config: SensorConfig):
    """Follower cutoff frequency (Hz) at intensity ``I``."""
    out = config.pr_bias * (config.f_dark + config.kappa * np.asarray(I, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def tracking_gain(f_c, dt: float):
    """Fraction ``1 - exp(-2 pi f_c dt)`` of the gap closed in one step."""
    return -np.expm1(-TWO_PI * np.asarray(f_c, dtype=np.float64) * dt)


def follower_step(V, L_target, dt: float, f_c):
    """Exact discretization of the first-order low-pass over one step."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    V = np.asarray(V, dtype=np.float64)
    out = V + tracking_gain(f_c, dt) * (L_target - V)
    return float(out) if out.ndim == 0 else out


class _EventSink:
    """Collects (t_us, pixel, polarity) chunks emitted by the engines."""

    def __init__(self, count_only: bool = False, n: int = 0):
        self.t, self.i, self.p = [], [], []
        self.count_only = count_only
        self.counts = {1: np.zeros(n, dtype=np.int64), -1: np.zeros(n, dtype=np.int64)}

    def add(self, t, idx, pol):
        if self.count_only:
            if len(idx):
                self.counts[pol] += np.bincount(idx, minlength=self.counts[pol].size)
            return
        if len(idx):
            self.t.append(np.broadcast_to(np.asarray(t, dtype=np.int64), idx.shape).copy())
            self.i.append(idx.astype(np.int64))
            self.p.append(np.full(idx.shape, pol, dtype=np.int8))

    def arrays(self):
        if not self.t:
            z = np.zeros(0, dtype=np.int64)
            return z, z, np.zeros(0, dtype=np.int8)
        return np.concatenate(self.t), np.concatenate(self.i), np.concatenate(self.p)


def pixel_update(state: PixelState, t_us, refractory_us: int = 0, sel=None, sink=None):
    """Apply the threshold rule to ``state.V`` at time ``t_us``.

    Emits ON events while ``V - V_ref >= c_on`` and OFF events while
    ``V_ref - V >= c_off``; every crossing moves ``V_ref`` by one threshold,
    but crossings within ``refractory_us`` of the pixel's last emitted event
    are not emitted.  ``sel`` restricts the update to a subset of pixels;
    ``t_us`` is a scalar or one time per selected pixel.

    Returns:
        (t_us, pixel, polarity) arrays of the emitted events.
    """
    own = sink is None
    sink = _EventSink() if own else sink
    idx = np.arange(state.V.size) if sel is None else np.asarray(sel)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    t = np.broadcast_to(np.asarray(t_us, dtype=np.int64), idx.shape)
    for pol, thr in ((1, state.c_on), (-1, state.c_off)):
        cur, tc = idx, t
        while cur.size:
            gap = (state.V[cur] - state.V_ref[cur]) * pol
            hit = gap >= thr[cur] - THRESHOLD_TOL
            cur, tc = cur[hit], tc[hit]
            if not cur.size:
                break
            state.V_ref[cur] += pol * thr[cur]
            emit = tc - state.t_last[cur] >= refractory_us
            state.t_last[cur[emit]] = tc[emit]
            sink.add(tc[emit], cur[emit], pol)
    if own:
        return sink.arrays()
    return None


# ----------------------------------------------------------------- drivers


def _timestamps(k, dt: float):
    return np.rint(np.asarray(k, dtype=np.float64) * dt * 1e6).astype(np.int64)


@dataclass
class _Drive:
    """Illumination of a pixel set as constant-intensity segments over steps.

    ``segments`` yields ``(k0, k1, I)`` triples: steps ``k0 <= k < k1`` see
    intensity ``I`` (after reflectance).  ``k0``/``k1`` are scalars or
    per-pixel arrays.
    """

    n_steps: int
    dt: float
    segments: object
    step_intensity: object


def _step_count(duration: float, dt: float) -> int:
    n = int(np.floor(duration / dt + 1e-9))
    if n < 1:
        raise ValidationError("duration shorter than one simulation step")
    return n


def default_dt(projector: ProjectorConfig) -> float:
    if projector.mode == "scanning":
        return projector.dwell
    return 1.0 / (20.0 * projector.chopper_rate)


def _half_period_steps(projector: ProjectorConfig, dt: float) -> int:
    h = 1.0 / (2.0 * projector.chopper_rate * dt)
    hr = int(round(h))
    if hr < 1 or abs(h - hr) > 1e-6 * max(1.0, h):
        raise ValidationError("chopper half-period must be a whole number of simulation steps")
    return hr


def steady_state_low(T, i_off: float, i_on: float, config: SensorConfig, dt: float, h: int):
    """Follower level at the start of an on half-period in periodic steady state.

    Each half-period has ``h`` steps; its first step still uses the bandwidth
    of the previous half (pre-step intensity rule).
    """
    T = np.asarray(T, dtype=np.float64)
    Ion, Ioff = i_on * T, i_off * T
    l_on = np.log(Ion + config.epsilon)
    l_off = np.log(Ioff + config.epsilon)
    b_on = np.exp(-TWO_PI * bandwidth_of(Ion, config) * dt)
    b_off = np.exp(-TWO_PI * bandwidth_of(Ioff, config) * dt)
    a = b_off * b_on ** (h - 1)   # contraction over an on half
    b = b_on * b_off ** (h - 1)   # contraction over an off half
    x = (l_on - l_off) * b * (1.0 - a) / (1.0 - a * b)
    return l_off + x


def chopped_amplitude(T, i_off: float, i_on: float, config: SensorConfig, dt: float, h: int):
    """Peak-to-peak follower swing in periodic steady state under the chopper."""
    T = np.asarray(T, dtype=np.float64)
    Ion, Ioff = i_on * T, i_off * T
    D = np.log(Ion + config.epsilon) - np.log(Ioff + config.epsilon)
    b_on = np.exp(-TWO_PI * bandwidth_of(Ion, config) * dt)
    b_off = np.exp(-TWO_PI * bandwidth_of(Ioff, config) * dt)
    a = b_off * b_on ** (h - 1)
    b = b_on * b_off ** (h - 1)
    return D * (1.0 - a) * (1.0 - b) / (1.0 - a * b)


# ----------------------------------------------------------------- engines


def _run_dense(state: PixelState, drive: _Drive, cfg: SensorConfig, sink: _EventSink):
    for k in range(drive.n_steps):
        I = drive.step_intensity(k)
        L = np.log(I + cfg.epsilon)
        g = tracking_gain(bandwidth_of(state.I_prev, cfg), drive.dt)
        state.V += g * (L - state.V)
        pixel_update(state, _timestamps(k, drive.dt), cfg.refractory_us, sink=sink)
        state.I_prev = I


def _run_segments(state: PixelState, drive: _Drive, cfg: SensorConfig, sink: _EventSink):
    n = state.V.size
    dt = drive.dt
    for k0, k1, I in drive.segments():
        k0 = np.broadcast_to(np.asarray(k0, dtype=np.int64), (n,))
        k1 = np.broadcast_to(np.asarray(k1, dtype=np.int64), (n,))
        m = k1 - k0
        act = np.flatnonzero(m > 0)
        if not act.size:
            continue
        Ia = I[act]
        L = np.log(Ia + cfg.epsilon)
        # first step: bandwidth still set by the previous intensity
        g = tracking_gain(bandwidth_of(state.I_prev[act], cfg), dt)
        state.V[act] += g * (L - state.V[act])
        pixel_update(state, _timestamps(k0[act], dt), cfg.refractory_us, sel=act, sink=sink)
        state.I_prev[act] = Ia

        # remaining m - 1 steps at constant bandwidth, in closed form
        rest = m[act] - 1
        more = rest > 0
        if not np.any(more):
            continue
        idx, L, rest = act[more], L[more], rest[more]
        kstart = k0[idx]
        beta = np.exp(-TWO_PI * bandwidth_of(Ia[more], cfg) * dt)
        V0 = state.V[idx].copy()
        V_end = L + (V0 - L) * beta ** rest
        for pol, thr in ((1, state.c_on), (-1, state.c_off)):
            c = thr[idx]
            count = np.floor(((V_end - state.V_ref[idx]) * pol + THRESHOLD_TOL) / c)
            count = np.maximum(count, 0).astype(np.int64)
            ref0 = state.V_ref[idx].copy()
            j_prev = np.zeros(idx.size, dtype=np.int64)
            for e in range(1, int(count.max(initial=0)) + 1):
                sel = np.flatnonzero(count >= e)
                target = ref0[sel] + pol * e * c[sel] - pol * THRESHOLD_TOL
                gap0 = L[sel] - V0[sel]
                gap = L[sel] - target
                b = beta[sel]
                with np.errstate(divide="ignore", invalid="ignore"):
                    j = np.ceil(np.log(gap / gap0) / np.log(b))
                j = np.where(b == 0.0, 1.0, j)
                j = np.where(np.isfinite(j), j, 1.0)
                j = np.clip(j, 1, rest[sel]).astype(np.int64)
                j = np.maximum(j, j_prev[sel])
                j_prev[sel] = j
                pix = idx[sel]
                t = _timestamps(kstart[sel] + j, dt)
                emit = t - state.t_last[pix] >= cfg.refractory_us
                state.t_last[pix[emit]] = t[emit]
                sink.add(t[emit], pix[emit], pol)
            state.V_ref[idx] += pol * count * c
        state.V[idx] = V_end


ENGINES = {"dense": _run_dense, "segments": _run_segments}


def _thread_count() -> int:
    env = os.environ.get("EVENT_SPECTRA_THREADS")
    n = os.cpu_count() or 1
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise ValidationError("EVENT_SPECTRA_THREADS must be an integer") from None
    return n


# -------------------------------------------------------------- simulate


def initial_thresholds(cfg: SensorConfig, n: int):
    """Per-pixel effective thresholds with seeded mismatch noise drawn at t = 0."""
    rng = np.random.default_rng(cfg.seed)
    noise_on = rng.normal(0.0, 1.0, n) * cfg.threshold_sigma
    noise_off = rng.normal(0.0, 1.0, n) * cfg.threshold_sigma
    floor = 1e-3 * min(cfg.c_on, cfg.c_off)
    c_on = np.maximum(cfg.c_on + cfg.diff_on + noise_on, floor)
    c_off = np.maximum(cfg.c_off + noise_off, floor)
    return c_on, c_off


def simulate(scene: SceneModel, rig: RigGeometry, projector: ProjectorConfig,
             sensor: SensorConfig, duration: float, wavelength: float | None = None,
             initial_state: str = "ambient", engine: str = "segments",
             threads: int | None = None, events: bool = True) -> SimOutput:
    """Simulate the event stream of ``scene`` under the given illumination.

    Args:
        duration: simulated time in seconds; steps ``k = 0 .. N-1`` with
            ``N = floor(duration / dt)``.
        wavelength: band to illuminate; defaults to the first configured band.
        initial_state: ``"ambient"`` starts every pixel adapted to ambient
            light; ``"steady"`` (chopped mode only) starts at the low point of
            the periodic steady state with the reference level there.
        engine: ``"segments"`` (fast, closed-form) or ``"dense"`` (reference).
        events: with ``False`` only per-pixel counts are kept and the
            returned stream is empty.

    Returns:
        SimOutput with the canonical event stream and per-pixel counts.
    """
    cam = rig.camera
    h, w = scene.shape
    if (sensor.width, sensor.height) != (w, h) or (cam.width, cam.height) != (w, h):
        raise ValidationError(
            f"inconsistent geometry: scene {w}x{h}, camera {cam.width}x{cam.height}, "
            f"sensor {sensor.width}x{sensor.height}"
        )
    if not duration > 0:
        raise ValidationError("duration must be > 0")
    if engine not in ENGINES:
        raise ValidationError(f"unknown engine {engine!r}")
    wl = projector.wavelengths[0] if wavelength is None else float(wavelength)
    ip = projector.intensity_at(wl)
    ia = scene.ambient_at(wl)
    T = reflectance_image(scene, wl).ravel()
    n = T.size
    dt = sensor.dt_sim if sensor.dt_sim is not None else default_dt(projector)
    N = _step_count(duration, dt)

    I_amb = ia * T
    I_lit = (ia + ip) * T
    c_on, c_off = initial_thresholds(sensor, n)

    if projector.mode == "chopped":
        hs = _half_period_steps(projector, dt)

        def segs(sel):
            def gen():
                for s in range(-(-N // hs)):
                    yield s * hs, min((s + 1) * hs, N), (I_lit if s % 2 == 0 else I_amb)[sel]
            return gen

        def stepper(sel):
            def at(k):
                # sample mid-step: step boundaries coincide with chopper edges
                return irradiance(scene, rig, projector, (k + 0.5) * dt, wl).ravel()[sel] * T[sel]
            return at

        if initial_state == "steady":
            V0 = steady_state_low(T, ia, ia + ip, sensor, dt, hs)
        elif initial_state == "ambient":
            V0 = np.log(I_amb + sensor.epsilon)
        else:
            raise ValidationError(f"unknown initial_state {initial_state!r}")
    else:
        if tuple(projector.resolution) != (rig.projector.width, rig.projector.height):
            raise ValidationError("projector.resolution does not match rig projector")
        if initial_state != "ambient":
            raise ValidationError("scanning mode supports only the 'ambient' initial state")
        schedule = ScanSchedule.from_config(projector)
        q = schedule.dwell / dt
        qr = int(round(q))
        if qr < 1 or abs(q - qr) > 1e-6 * q:
            raise ValidationError("dwell must be a whole number of simulation steps")
        corr = projector_correspondence(scene, rig)
        pidx = corr.projector_index(rig.projector.width).ravel()
        vis = corr.visible.ravel()
        frame_steps = schedule.pixels_per_frame * qr
        n_frames = -(-N // frame_steps)

        def segs(sel):
            lit_start = np.where(vis[sel], pidx[sel] * qr, 0)
            Il = np.where(vis[sel], I_lit[sel], I_amb[sel])
            Ia = I_amb[sel]

            def gen():
                prev = np.zeros(lit_start.shape, dtype=np.int64)
                for f in range(n_frames):
                    a = np.minimum(f * frame_steps + lit_start, N)
                    b = np.minimum(a + qr, N)
                    yield prev, a, Ia
                    yield a, b, Il
                    prev = b
                yield prev, np.full(prev.shape, N, dtype=np.int64), Ia
            return gen

        def stepper(sel):
            def at(k):
                img = irradiance(scene, rig, projector, (k + 0.5) * dt, wl, corr=corr, schedule=schedule)
                return img.ravel()[sel] * T[sel]
            return at

        V0 = np.log(I_amb + sensor.epsilon)

    run = ENGINES[engine]
    nthreads = threads if threads is not None else _thread_count()
    nthreads = max(1, min(nthreads, n))
    chunks = np.array_split(np.arange(n), nthreads)

    def work(sel):
        st = PixelState.create(V0[sel], c_on[sel], c_off[sel], I_amb[sel])
        sink = _EventSink(count_only=not events, n=sel.size)
        run(st, _Drive(N, dt, segs(sel), stepper(sel)), sensor, sink)
        if not events:
            return sink.counts[1], sink.counts[-1]
        t, i, p = sink.arrays()
        return t, sel[i], p

    if nthreads == 1:
        parts = [work(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=nthreads) as ex:
            parts = list(ex.map(work, chunks))
    if not events:
        on = np.concatenate([pt[0] for pt in parts]).reshape(h, w)
        off = np.concatenate([pt[1] for pt in parts]).reshape(h, w)
        return SimOutput(EventStream.empty(w, h), on, off, steps=N, dt=dt)
    t = np.concatenate([pt[0] for pt in parts])
    i = np.concatenate([pt[1] for pt in parts])
    p = np.concatenate([pt[2] for pt in parts])
    stream = EventStream.from_arrays(t, i % w, i // w, p, w, h)
    on = np.bincount(i[p > 0], minlength=n).reshape(h, w)
    off = np.bincount(i[p < 0], minlength=n).reshape(h, w)
    return SimOutput(stream, on, off, steps=N, dt=dt)
