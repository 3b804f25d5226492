"""Fixed-step closed-loop simulation of agent networks under either protocol.

The engine integrates the stacked agent + protocol dynamics with the
classical fourth-order Runge-Kutta scheme on a fixed grid.  Dead-zone
branches in the gain laws are re-evaluated at every substep; no event
localization is attempted, since crossing a dead zone only switches
between nonnegative growth rates.

Disconnected graphs are simulated one weakly connected component at a
time, each component with exactly the arrays a standalone run of that
component would use.  Together with per-agent seeding of initial states
and globally indexed disturbances, this makes component trajectories
bit-identical whether or not the rest of the network is present.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from .agents import AgentModel
from .collab import CollabDesign
from .graphs import DirectedWeightedGraph, laplacian, weakly_connected_components
from .linalg import SolverError
from .noncollab import NoncollabDesign

# A single RK4 step multiplying the state envelope by more than this is
# reported as a step-size warning.
_GROWTH_LIMIT = 1e3

_DISTURBANCE_KINDS = ("zero", "chirp", "sawtooth", "table")


@dataclass
class DisturbanceSpec:
    """Bounded per-agent disturbance signal.

    kinds:
      zero      w_i(t) = 0
      chirp     w_i(t) = sin(0.1 i t + 0.01 t^2), slowly sweeping frequency
      sawtooth  w_i(t) = i t - round(i t), round half to even
      table     shared piecewise-linear signal over (times, values)

    i is the agent's global 1-based index, so the same agent sees the same
    disturbance no matter which subnetwork it is simulated in.  width is
    the number of disturbance channels; the scalar kinds repeat their
    value across channels.
    """

    kind: str = "zero"
    width: int = 1
    times: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in _DISTURBANCE_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.width < 0:
            raise ValueError("width must be nonnegative")
        if self.kind == "table":
            if self.times is None or self.values is None:
                raise ValueError("table disturbance needs times and values")
            self.times = np.asarray(self.times, dtype=float).reshape(-1)
            self.values = np.asarray(self.values, dtype=float)
            if self.values.ndim == 1:
                self.values = self.values.reshape(-1, 1)
            if self.values.shape != (self.times.shape[0], self.width):
                raise ValueError(
                    f"values must have shape {(self.times.shape[0], self.width)}, "
                    f"got {self.values.shape}"
                )
            if self.times.shape[0] < 2 or np.any(np.diff(self.times) <= 0.0):
                raise ValueError("table times must be strictly increasing, length >= 2")


def disturbance_value(spec: DisturbanceSpec, agent_index: int, t: float) -> np.ndarray:
    """Disturbance vector for one agent at one time (reference evaluation)."""
    if agent_index < 1:
        raise ValueError("agent_index is 1-based")
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    if spec.kind == "zero":
        return np.zeros(spec.width)
    if spec.kind == "chirp":
        return np.full(spec.width, np.sin(0.1 * agent_index * t + 0.01 * t * t))
    if spec.kind == "sawtooth":
        s = agent_index * t
        return np.full(spec.width, s - np.round(s))
    if t < spec.times[0] or t > spec.times[-1]:
        raise ValueError(f"t={t} outside the disturbance table range")
    return np.array([np.interp(t, spec.times, spec.values[:, j]) for j in range(spec.width)])


def _disturbance_rows(spec: DisturbanceSpec, indices: np.ndarray, t: float, width: int) -> np.ndarray:
    """Vectorized disturbance block, one row per agent."""
    n_agents = indices.shape[0]
    if spec.kind == "zero" or width == 0:
        return np.zeros((n_agents, width))
    if spec.kind == "chirp":
        vals = np.sin(0.1 * indices * t + 0.01 * t * t)
        return np.repeat(vals[:, None], width, axis=1)
    if spec.kind == "sawtooth":
        s = indices * t
        vals = s - np.round(s)
        return np.repeat(vals[:, None], width, axis=1)
    if t < spec.times[0] or t > spec.times[-1]:
        raise ValueError(f"t={t} outside the disturbance table range")
    row = np.array([np.interp(t, spec.times, spec.values[:, j]) for j in range(width)])
    return np.tile(row, (n_agents, 1))


def network_signals(graph: DirectedWeightedGraph, outputs) -> np.ndarray:
    """Weighted output disagreements: row i is sum_j l_ij y_j."""
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    if outputs.shape[0] != graph.n_nodes:
        raise ValueError(f"expected {graph.n_nodes} output rows, got {outputs.shape[0]}")
    return laplacian(graph) @ outputs


def protocol_exchange(graph: DirectedWeightedGraph, protocol_states) -> np.ndarray:
    """Second network sum over neighbour protocol states (collaborative only)."""
    states = np.atleast_2d(np.asarray(protocol_states, dtype=float))
    if states.shape[0] != graph.n_nodes:
        raise ValueError(f"expected {graph.n_nodes} state rows, got {states.shape[0]}")
    return laplacian(graph) @ states


@dataclass
class SimConfig:
    """Everything one run needs; defaults follow the reference experiments."""

    model: AgentModel
    graph: DirectedWeightedGraph
    design: NoncollabDesign | CollabDesign
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec)
    dt: float = 1e-3
    t_end: float = 30.0
    seed: int = 0
    record_stride: int = 1
    initial_states: np.ndarray | None = None
    initial_rho: float = 0.0
    initial_alpha: float = 0.0
    disturbance_indices: tuple[int, ...] | None = None


@dataclass
class SimulationRun:
    """Recorded trajectories; first axis is samples, second is agents.

    coherency_proxy holds the protocol's own settling quantity (the
    quadratic observer form for noncollaborative runs, the mismatch energy
    for collaborative ones); exchange_energy and alpha exist only for
    collaborative runs.
    """

    protocol: str
    times: np.ndarray
    agent_indices: np.ndarray
    states: np.ndarray
    protocol_states: np.ndarray
    outputs: np.ndarray
    controls: np.ndarray
    zeta: np.ndarray
    rho: np.ndarray
    coherency_norm: np.ndarray
    coherency_proxy: np.ndarray
    alpha: np.ndarray | None
    exchange_energy: np.ndarray | None
    dt: float
    t_end: float
    record_stride: int
    seed: int
    warnings: list[str] = field(default_factory=list)

    @property
    def n_agents(self) -> int:
        return self.agent_indices.shape[0]


def _noncollab_rhs(model, design, L, spec, indices):
    tr = design.transform
    A_T, B_T, E_T, C_T = model.A.T, model.B.T, model.E.T, model.C.T
    A11_T, A12_T, C1_T, H1_T = tr.A11.T, tr.A12.T, tr.C1.T, design.H1.T
    T_T = tr.T.T
    P, G = design.P, design.gain_row
    n, n1, m, w = model.n, tr.n1, model.m, model.w
    k_split = design.p_out - design.m
    d = design.d

    def rhs(t, S, want_extras=False):
        X = S[:, :n]
        XI1 = S[:, n : n + n1]
        RHO = S[:, n + n1]
        Y = X @ C_T
        Z = L @ Y
        ZT = Z @ T_T
        Z1, Z2 = ZT[:, :k_split], ZT[:, k_split:]
        dXI1 = XI1 @ A11_T + Z2 @ A12_T + (XI1 @ C1_T - Z1) @ H1_T
        XIH = np.hstack([XI1, Z2])
        GX = XIH @ G.T
        proxy = np.einsum("ij,ij->i", XIH, XIH @ P)
        drive = np.einsum("ij,ij->i", GX, GX)
        dRHO = np.where(proxy >= d, drive, 0.0)
        U = -RHO[:, None] * GX
        W = _disturbance_rows(spec, indices, t, w)
        dX = X @ A_T + U @ B_T + W @ E_T
        dS = np.hstack([dX, dXI1, dRHO[:, None]])
        if not want_extras:
            return dS, None
        return dS, (Y, Z, U, proxy, None)

    return rhs, n + n1 + 1, n1


def _collab_rhs(model, design, L, spec, indices):
    A_T, B_T, E_T, C_T = model.A.T, model.B.T, model.E.T, model.C.T
    QCt_T = design.QCt.T
    grid = design.grid
    n, m, w = model.n, model.m, model.w
    d = design.d

    def rhs(t, S, want_extras=False):
        X = S[:, :n]
        XH = S[:, n : 2 * n]
        RHO = S[:, 2 * n]
        AL = S[:, 2 * n + 1]
        Y = X @ C_T
        Z = L @ Y
        ZTE = L @ XH
        CZ = ZTE @ C_T
        Esig = CZ - Z
        mismatch = np.einsum("ij,ij->i", Esig, Esig)
        exchange = np.einsum("ij,ij->i", CZ, CZ)
        dRHO = np.where(mismatch >= d, mismatch, 0.0)
        dAL = np.where(exchange >= 1.0, 1.0, np.where(exchange >= d, exchange, 0.0))
        U = np.zeros((S.shape[0], m))
        active = np.nonzero(AL > 0.0)[0]
        if active.size:
            ks = grid.indices_for(AL[active])
            V = XH[active] + ZTE[active]
            for kk in np.unique(ks):
                sel = ks == kk
                gain = grid.cell(int(kk))[1]
                U[active[sel]] = -AL[active[sel], None] * (V[sel] @ gain.T)
        dXH = XH @ A_T + U @ B_T - RHO[:, None] * (Esig @ QCt_T)
        W = _disturbance_rows(spec, indices, t, w)
        dX = X @ A_T + U @ B_T + W @ E_T
        dS = np.hstack([dX, dXH, dRHO[:, None], dAL[:, None]])
        if not want_extras:
            return dS, None
        return dS, (Y, Z, U, mismatch, exchange)

    return rhs, 2 * n + 2, n


def _simulate_component(model, design, protocol, L, spec, indices, x0, rho0, alpha0, dt, n_steps, stride):
    if protocol == "noncollaborative":
        rhs, width, ps_width = _noncollab_rhs(model, design, L, spec, indices)
    else:
        rhs, width, ps_width = _collab_rhs(model, design, L, spec, indices)

    n = model.n
    n_agents = L.shape[0]
    S = np.zeros((n_agents, width))
    S[:, :n] = x0
    S[:, n + ps_width] = rho0
    if protocol == "collaborative":
        S[:, n + ps_width + 1] = alpha0

    rec = {key: [] for key in ("t", "x", "ps", "rho", "alpha", "y", "z", "u", "proxy", "exch")}
    warnings: list[str] = []
    half = 0.5 * dt
    sixth = dt / 6.0

    for k in range(n_steps + 1):
        t = k * dt
        record = (k % stride == 0) or (k == n_steps)
        k1, extras = rhs(t, S, want_extras=record)
        if record:
            Y, Z, U, proxy, exch = extras
            rec["t"].append(t)
            rec["x"].append(S[:, :n].copy())
            rec["ps"].append(S[:, n : n + ps_width].copy())
            rec["rho"].append(S[:, n + ps_width].copy())
            rec["alpha"].append(S[:, n + ps_width + 1].copy() if protocol == "collaborative" else None)
            rec["y"].append(Y)
            rec["z"].append(Z)
            rec["u"].append(U)
            rec["proxy"].append(proxy)
            rec["exch"].append(exch)
        if k == n_steps:
            break
        k2, _ = rhs(t + half, S + half * k1)
        k3, _ = rhs(t + half, S + half * k2)
        k4, _ = rhs(t + dt, S + dt * k3)
        S_new = S + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(S_new)):
            raise SolverError(
                f"state became non-finite at t={t + dt:.6g}; "
                "the run blew up (check the design or reduce dt)"
            )
        envelope_old = max(float(np.max(np.abs(S))), 1.0)
        envelope_new = float(np.max(np.abs(S_new)))
        if envelope_new > _GROWTH_LIMIT * envelope_old and not warnings:
            warnings.append(
                f"single-step state growth exceeded {_GROWTH_LIMIT:g}x at "
                f"t={t + dt:.6g}; dt={dt:g} may be too large"
            )
        S = S_new

    out = {
        "t": np.array(rec["t"]),
        "x": np.stack(rec["x"]),
        "ps": np.stack(rec["ps"]),
        "rho": np.stack(rec["rho"]),
        "y": np.stack(rec["y"]),
        "z": np.stack(rec["z"]),
        "u": np.stack(rec["u"]),
        "proxy": np.stack(rec["proxy"]),
        "warnings": warnings,
    }
    if protocol == "collaborative":
        out["alpha"] = np.stack(rec["alpha"])
        out["exch"] = np.stack(rec["exch"])
    return out


def simulate(config: SimConfig) -> SimulationRun:
    """Integrate one configured run and return its recorded trajectories.

    Deterministic: identical configs give bit-identical results.  The
    horizon is rounded to a whole number of steps of dt; recording happens
    every record_stride steps and always at the final step.
    """
    model, graph, design = config.model, config.graph, config.design
    if isinstance(design, NoncollabDesign):
        protocol = "noncollaborative"
        if design.n != model.n or design.p_out != model.p or design.m != model.m:
            raise ValueError("design dimensions do not match the model")
    elif isinstance(design, CollabDesign):
        protocol = "collaborative"
        if not (
            np.array_equal(design.A, model.A)
            and np.array_equal(design.B, model.B)
            and np.array_equal(design.C, model.C)
        ):
            raise ValueError("design was built for a different model")
    else:
        raise TypeError("design must be a NoncollabDesign or CollabDesign")

    if not config.dt > 0.0:
        raise ValueError("dt must be positive")
    if config.t_end < config.dt:
        raise ValueError("t_end must be at least dt")
    stride = int(config.record_stride)
    if stride < 1:
        raise ValueError("record_stride must be at least 1")
    n_steps = int(round(config.t_end / config.dt))

    spec = config.disturbance
    if spec.kind != "zero" and spec.width != model.w:
        raise ValueError(
            f"disturbance width {spec.width} does not match the model's {model.w} channels"
        )

    n_agents = graph.n_nodes
    if config.disturbance_indices is None:
        indices = np.arange(1, n_agents + 1, dtype=float)
    else:
        indices = np.asarray([int(i) for i in config.disturbance_indices], dtype=float)
        if indices.shape[0] != n_agents or np.any(indices < 1):
            raise ValueError("disturbance_indices must list one 1-based index per agent")

    rho0 = float(config.initial_rho)
    alpha0 = float(config.initial_alpha)
    if rho0 < 0.0 or alpha0 < 0.0:
        raise ValueError("initial gains must be nonnegative")
    if alpha0 != 0.0 and protocol != "collaborative":
        raise ValueError("initial_alpha applies only to the collaborative protocol")

    if config.initial_states is not None:
        x0 = np.asarray(config.initial_states, dtype=float)
        if x0.shape != (n_agents, model.n):
            raise ValueError(f"initial_states must have shape {(n_agents, model.n)}")
    else:
        # Seeded per agent by global index, so a subnetwork draws the same
        # starts as the full network.
        x0 = np.stack(
            [
                np.random.default_rng([int(config.seed), int(g)]).uniform(-1.0, 1.0, model.n)
                for g in indices
            ]
        )

    L = laplacian(graph)
    components = weakly_connected_components(graph)
    pieces = []
    # A diverging step is detected and raised inside the component loop;
    # numpy's per-element overflow warnings on the way there are noise.
    with np.errstate(over="ignore", invalid="ignore"):
        for comp in components:
            sel = np.asarray(comp, dtype=int)
            piece = _simulate_component(
                model,
                design,
                protocol,
                L[np.ix_(sel, sel)],
                spec,
                indices[sel],
                x0[sel],
                rho0,
                alpha0,
                config.dt,
                n_steps,
                stride,
            )
            pieces.append((sel, piece))

    times = pieces[0][1]["t"]
    n_samples = times.shape[0]

    def merge(key, trailing_shape):
        out = np.zeros((n_samples, n_agents) + trailing_shape)
        for sel, piece in pieces:
            out[:, sel] = piece[key]
        return out

    warnings = []
    for sel, piece in pieces:
        warnings.extend(piece["warnings"])

    zeta = merge("z", (model.p,))
    run = SimulationRun(
        protocol=protocol,
        times=times,
        agent_indices=indices.astype(int),
        states=merge("x", (model.n,)),
        protocol_states=merge("ps", (pieces[0][1]["ps"].shape[2],)),
        outputs=merge("y", (model.p,)),
        controls=merge("u", (model.m,)),
        zeta=zeta,
        rho=merge("rho", ()),
        coherency_norm=np.linalg.norm(zeta, axis=2),
        coherency_proxy=merge("proxy", ()),
        alpha=merge("alpha", ()) if protocol == "collaborative" else None,
        exchange_energy=merge("exch", ()) if protocol == "collaborative" else None,
        dt=config.dt,
        t_end=float(times[-1]),
        record_stride=stride,
        seed=int(config.seed),
        warnings=warnings,
    )
    return run


def detect_settling(times, values, threshold: float, trailing_window: float) -> float | None:
    """Earliest recorded time after which values stay at or below threshold.

    The tail from the returned time to the end must span at least
    trailing_window; None when the series never settles that long.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    values = np.asarray(values, dtype=float).reshape(-1)
    if times.shape != values.shape or times.size == 0:
        raise ValueError("times and values must be matching nonempty 1-D arrays")
    if trailing_window > times[-1] - times[0]:
        raise ValueError("trailing window longer than the recorded run")
    ok = values <= threshold
    if not ok[-1]:
        return None
    bad = np.nonzero(~ok)[0]
    first_ok = 0 if bad.size == 0 else int(bad[-1]) + 1
    if times[-1] - times[first_ok] < trailing_window:
        return None
    return float(times[first_ok])


def settling_metric(run: SimulationRun) -> np.ndarray:
    """Per-agent series compared against the 2d acceptance threshold.

    Collaborative runs must keep both the mismatch energy and the exchange
    energy small, so the metric is their pointwise maximum.
    """
    if run.protocol == "collaborative":
        return np.maximum(run.coherency_proxy, run.exchange_energy)
    return run.coherency_proxy


def settling_report(run: SimulationRun, threshold: float, trailing_window: float):
    """detect_settling per agent on the protocol's settling metric."""
    metric = settling_metric(run)
    return [
        detect_settling(run.times, metric[:, i], threshold, trailing_window)
        for i in range(run.n_agents)
    ]


def gain_flatness(run: SimulationRun, fraction: float = 0.1) -> dict:
    """Per-agent change of each adaptive gain over the trailing fraction."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    t0, t1 = float(run.times[0]), float(run.times[-1])
    tail = run.times >= t1 - fraction * (t1 - t0)
    out = {"rho": run.rho[tail].max(axis=0) - run.rho[tail].min(axis=0)}
    if run.alpha is not None:
        out["alpha"] = run.alpha[tail].max(axis=0) - run.alpha[tail].min(axis=0)
    return out


def write_trajectory_csv(run: SimulationRun, path) -> None:
    """One row per (sample, agent); 17 significant digits for round-tripping."""
    p, m = run.outputs.shape[2], run.controls.shape[2]
    columns = ["t", "agent"]
    columns += [f"y{j + 1}" for j in range(p)]
    columns += ["coherency_norm", "coherency_proxy", "rho"]
    if run.alpha is not None:
        columns.append("alpha")
    columns += [f"u{j + 1}" for j in range(m)]

    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for s in range(run.times.shape[0]):
        t_str = f"{run.times[s]:.17g}"
        for a in range(run.n_agents):
            cells = [t_str, str(int(run.agent_indices[a]))]
            cells += [f"{v:.17g}" for v in run.outputs[s, a]]
            cells.append(f"{run.coherency_norm[s, a]:.17g}")
            cells.append(f"{run.coherency_proxy[s, a]:.17g}")
            cells.append(f"{run.rho[s, a]:.17g}")
            if run.alpha is not None:
                cells.append(f"{run.alpha[s, a]:.17g}")
            cells += [f"{v:.17g}" for v in run.controls[s, a]]
            buf.write(",".join(cells) + "\n")
    with open(path, "w", newline="\n") as fh:
        fh.write(buf.getvalue())
