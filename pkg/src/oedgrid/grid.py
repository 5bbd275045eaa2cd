"""Grid data model and the algebraic AC network functions.

Conventions used throughout the package:

* Buses are indexed ``0..N-1`` and bus ``0`` is the slack (reference) bus with
  fixed voltage magnitude and zero angle.
* A state vector ``x`` stacks ``(v_1, theta_1, ..., v_{N-1}, theta_{N-1})``,
  i.e. magnitude/angle pairs of every non-slack bus.
* A parameter vector ``y`` stacks ``(g_j, b_j)`` for every line ``j`` in the
  network's canonical line order.
* An input vector ``u`` stacks ``(p_g, q_g)`` for every non-slack generator bus.

All quantities are per-unit. The line-level routines only use ``+``, ``*``,
``cos`` and ``sin`` so they accept complex arguments (used for complex-step
differentiation in :mod:`oedgrid.oed`).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Bounds:
    """Box constraints of the experiment design problem."""

    u_lo: np.ndarray
    u_hi: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    slack_lo: np.ndarray
    slack_hi: np.ndarray

    def __post_init__(self):
        for name in ("u_lo", "u_hi", "x_lo", "x_hi", "slack_lo", "slack_hi"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        for lo, hi in [("u_lo", "u_hi"), ("x_lo", "x_hi"), ("slack_lo", "slack_hi")]:
            a, b = getattr(self, lo), getattr(self, hi)
            if a.shape != b.shape:
                raise ValueError(f"{lo} and {hi} have different shapes")
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                raise ValueError(f"{lo}/{hi} must be finite")
            if np.any(a > b):
                raise ValueError(f"{lo} exceeds {hi}")
        if self.slack_lo.shape != (2,):
            raise ValueError("slack box must have two components (p, q)")

    def replace(self, **changes) -> "Bounds":
        fields = {k: getattr(self, k) for k in
                  ("u_lo", "u_hi", "x_lo", "x_hi", "slack_lo", "slack_hi")}
        fields.update(changes)
        return Bounds(**fields)


def default_state_bounds(n_buses, v_min=0.9, v_max=1.1, theta_max=np.pi / 2):
    n = n_buses - 1
    lo = np.tile([v_min, -theta_max], n)
    hi = np.tile([v_max, theta_max], n)
    return lo, hi


@dataclass(frozen=True)
class Network:
    """Immutable description of an AC grid.

    ``lines`` holds 0-based ``(k, l)`` pairs with ``k < l``; ``generators``
    lists the generator buses and must contain the slack bus 0.
    """

    n_buses: int
    lines: tuple
    generators: tuple
    p_demand: np.ndarray
    q_demand: np.ndarray
    bounds: Bounds
    slack_voltage: float = 1.0
    base_mva: float = 100.0
    base_kv: float = 230.0
    bus_ids: tuple = field(default=())

    def __post_init__(self):
        n = int(self.n_buses)
        if n < 2:
            raise ValueError("a network needs at least two buses")
        object.__setattr__(self, "n_buses", n)
        lines = tuple((int(k), int(l)) for k, l in self.lines)
        seen = set()
        for k, l in lines:
            if not (0 <= k < n and 0 <= l < n):
                raise ValueError(f"line ({k}, {l}) references a missing bus")
            if k == l:
                raise ValueError(f"self-loop at bus {k}")
            if k > l:
                raise ValueError(f"line ({k}, {l}) must be stored with k < l")
            if (k, l) in seen:
                raise ValueError(f"duplicate line ({k}, {l})")
            seen.add((k, l))
        if not lines:
            raise ValueError("a network needs at least one line")
        object.__setattr__(self, "lines", lines)
        gens = tuple(sorted({int(g) for g in self.generators}))
        if 0 not in gens:
            raise ValueError("the slack bus 0 must carry a generator")
        if gens[-1] >= n:
            raise ValueError("generator at a missing bus")
        object.__setattr__(self, "generators", gens)
        for name in ("p_demand", "q_demand"):
            a = _frozen(getattr(self, name))
            if a.shape != (n,):
                raise ValueError(f"{name} must have length {n}")
            object.__setattr__(self, name, a)
        if not self.slack_voltage > 0:
            raise ValueError("slack voltage must be positive")
        if not self.bus_ids:
            object.__setattr__(self, "bus_ids", tuple(range(1, n + 1)))
        elif len(self.bus_ids) != n:
            raise ValueError("bus_ids must label every bus")
        b = self.bounds
        if b.u_lo.shape != (self.n_inputs,):
            raise ValueError(f"input bounds must have length {self.n_inputs}")
        if b.x_lo.shape != (self.n_states,):
            raise ValueError(f"state bounds must have length {self.n_states}")

    @property
    def n_lines(self):
        return len(self.lines)

    @property
    def n_states(self):
        return 2 * (self.n_buses - 1)

    @property
    def n_params(self):
        return 2 * self.n_lines

    @property
    def n_inputs(self):
        return 2 * (len(self.generators) - 1)

    @property
    def controllable(self):
        """Generator buses other than the slack, in input-vector order."""
        return self.generators[1:]

    @property
    def from_bus(self):
        return np.array([k for k, _ in self.lines], dtype=int)

    @property
    def to_bus(self):
        return np.array([l for _, l in self.lines], dtype=int)

    def line_index(self, k, l):
        """Position of line ``(k, l)`` (either orientation); raises KeyError."""
        key = (k, l) if k < l else (l, k)
        try:
            return self.lines.index(key)
        except ValueError:
            raise KeyError(f"({k}, {l}) is not a line of this network") from None

    def neighbors(self, k):
        return sorted([l for a, l in self.lines if a == k] + [a for a, l in self.lines if l == k])

    def flat_state(self):
        return np.tile([1.0, 0.0], self.n_buses - 1)

    def with_bounds(self, bounds):
        return Network(self.n_buses, self.lines, self.generators, self.p_demand,
                       self.q_demand, bounds, self.slack_voltage, self.base_mva,
                       self.base_kv, self.bus_ids)

    def with_demand(self, p_demand, q_demand):
        return Network(self.n_buses, self.lines, self.generators, p_demand,
                       q_demand, self.bounds, self.slack_voltage, self.base_mva,
                       self.base_kv, self.bus_ids)


# ---------------------------------------------------------------------------
# vector layout helpers


def pack_params(g, b):
    """Interleave conductances and susceptances into a parameter vector."""
    g, b = np.asarray(g), np.asarray(b)
    y = np.empty(2 * g.size, dtype=np.result_type(g, b, float))
    y[0::2] = g
    y[1::2] = b
    return y


def split_params(y):
    return y[0::2], y[1::2]


def check_params(net, y):
    y = np.asarray(y)
    if y.shape != (net.n_params,):
        raise ValueError(f"parameter vector has shape {y.shape}, expected ({net.n_params},)")
    return y


def full_voltages(net, x, slack_angle=0.0):
    """Magnitudes and angles of all buses, slack included.

    ``slack_angle`` exists for invariance checks only; the model fixes it at 0.
    """
    x = np.asarray(x)
    if x.shape != (net.n_states,):
        raise ValueError(f"state vector has shape {x.shape}, expected ({net.n_states},)")
    dtype = np.result_type(x, float)
    v = np.empty(net.n_buses, dtype=dtype)
    th = np.empty(net.n_buses, dtype=dtype)
    v[0] = net.slack_voltage
    th[0] = slack_angle
    v[1:] = x[0::2]
    th[1:] = x[1::2] + slack_angle
    return v, th


# ---------------------------------------------------------------------------
# admittance matrix


def build_admittance_matrix(net, y):
    y = check_params(net, y)
    g, b = split_params(y)
    ylines = g + 1j * b
    Y = np.zeros((net.n_buses, net.n_buses), dtype=complex)
    k, l = net.from_bus, net.to_bus
    np.add.at(Y, (k, k), ylines)
    np.add.at(Y, (l, l), ylines)
    Y[k, l] = -ylines
    Y[l, k] = -ylines
    return Y


# ---------------------------------------------------------------------------
# line flows


def _flow_terms(vk, vl, dlt, g, b, partials=True):
    """Flow (p, q) leaving bus k on a line towards bus l, with partials.

    Returns ``p, q`` and the arrays ``dp, dq`` of shape ``(6, L)`` holding
    derivatives with respect to ``(v_k, theta_k, v_l, theta_l, g, b)``
    (``None`` when ``partials`` is false).
    """
    c, s = np.cos(dlt), np.sin(dlt)
    vv = vk * vl
    gc_bs = g * c + b * s
    bc_gs = b * c - g * s
    p = vk * vk * g - vv * gc_bs
    q = -vk * vk * b + vv * bc_gs
    if not partials:
        return p, q, None, None
    dth_p = -vv * bc_gs
    dth_q = -vv * gc_bs
    dp = np.empty((6,) + np.shape(p), dtype=np.result_type(p))
    dq = np.empty_like(dp)
    dp[0] = 2 * vk * g - vl * gc_bs
    dp[1] = dth_p
    dp[2] = -vk * gc_bs
    dp[3] = -dth_p
    dp[4] = vk * vk - vv * c
    dp[5] = -vv * s
    dq[0] = -2 * vk * b + vl * bc_gs
    dq[1] = dth_q
    dq[2] = vk * bc_gs
    dq[3] = -dth_q
    dq[4] = dp[5]
    dq[5] = -dp[4]
    return p, q, dp, dq


def _both_sides(v, th, k, l, g, b):
    """Forward and reverse flow terms from a single vectorized evaluation."""
    a, c = np.concatenate([k, l]), np.concatenate([l, k])
    L = k.size
    g2, b2 = np.concatenate([g, g]), np.concatenate([b, b])
    p, q, dp, dq = _flow_terms(v[a], v[c], th[a] - th[c], g2, b2)
    return ((p[:L], q[:L], dp[:, :L], dq[:, :L]),
            (p[L:], q[L:], dp[:, L:], dq[:, L:]))


def _all_flows(net, x, y, slack_angle=0.0):
    v, th = full_voltages(net, x, slack_angle)
    g, b = split_params(check_params(net, y))
    return _both_sides(v, th, net.from_bus, net.to_bus, g, b)


def line_flow(net, x, y, line):
    """Active/reactive flow leaving ``line[0]`` on the line towards ``line[1]``."""
    k, l = line
    j = net.line_index(k, l)
    v, th = full_voltages(net, x)
    g, b = split_params(check_params(net, y))
    p, q, _, _ = _flow_terms(v[k], v[l], th[k] - th[l], g[j], b[j])
    return np.array([p, q])


def line_flows(net, x, y):
    """Flows of every line in canonical orientation, stacked ``(p, q)`` per line."""
    (p, q, _, _), _ = _all_flows(net, x, y)
    out = np.empty(2 * net.n_lines, dtype=p.dtype)
    out[0::2] = p
    out[1::2] = q
    return out


@functools.lru_cache(maxsize=64)
def _scatter(n_buses, lines):
    """Sparse maps that place per-line partials into the dense Jacobians.

    Partials are ordered (side, component, partial, line) with side 0 the
    forward flow at bus ``k`` and side 1 the reverse flow at bus ``l``. The
    four maps produce, flattened row-major, the bus-indexed residuum
    Jacobians ``(2N x 2N, 2N x 2L)`` and the line-indexed flow Jacobians
    ``(2L x 2N, 2L x 2L)``; the flow maps read only the forward half.
    """
    k = np.array([a for a, _ in lines])
    l = np.array([b for _, b in lines])
    L, n2 = len(lines), 2 * n_buses
    j = np.arange(L)
    rx, cx, ry, cy, fx, fy = [], [], [], [], [], []
    for side, (bus, other) in enumerate(((k, l), (l, k))):
        for comp in (0, 1):
            r = 2 * bus + comp
            for col in (2 * bus, 2 * bus + 1, 2 * other, 2 * other + 1):
                rx.append(r)
                cx.append(col)
                if side == 0:
                    fx.append(2 * j + comp)
            for col in (2 * j, 2 * j + 1):
                ry.append(r)
                cy.append(col)
                if side == 0:
                    fy.append(2 * j + comp)
    rx, cx, ry, cy, fx, fy = (np.concatenate(a) for a in (rx, cx, ry, cy, fx, fy))

    def op(rows, cols, n_cols, n_rows):
        d = rows.size
        return sparse.csr_matrix((np.ones(d), (rows * n_cols + cols, np.arange(d))),
                                 shape=(n_rows * n_cols, d))

    return (op(rx, cx, n2, n2), op(ry, cy, 2 * L, n2),
            op(fx, cx[:fx.size], n2, 2 * L), op(fy, cy[:fy.size], 2 * L, 2 * L))


def _flows_stack(net, X, y):
    """Flow terms at a stack of states ``X`` (shape ``(B, n_states)``).

    Same as :func:`_all_flows` but every per-line array gets a trailing batch
    axis of length ``B``.
    """
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != net.n_states:
        raise ValueError(f"state stack has shape {X.shape}, expected (B, {net.n_states})")
    B = X.shape[0]
    v = np.empty((net.n_buses, B), dtype=np.result_type(X, float))
    th = np.empty_like(v)
    v[0] = net.slack_voltage
    th[0] = 0.0
    v[1:] = X.T[0::2]
    th[1:] = X.T[1::2]
    g, b = split_params(check_params(net, y))
    return _both_sides(v, th, net.from_bus, net.to_bus, g[:, None], b[:, None])


def jacobians_stack(net, X, y, flows=True):
    """Residuum and line-flow Jacobians at a stack of states.

    Returns ``(Px, Py, Fx, Fy)`` with a leading batch axis: the full
    bus-indexed residuum Jacobians (slack rows and columns included) and the
    flow Jacobians with the slack columns removed. With ``flows=False`` the
    last two are ``None``.
    """
    fwd, rev = _flows_stack(net, X, y)
    B = fwd[0].shape[1]
    n2, L2 = 2 * net.n_buses, 2 * net.n_lines
    sx, sy, sfx, sfy = _scatter(net.n_buses, net.lines)
    dx = np.concatenate([fwd[2][:4], fwd[3][:4], rev[2][:4], rev[3][:4]]).reshape(-1, B)
    dy = np.concatenate([fwd[2][4:], fwd[3][4:], rev[2][4:], rev[3][4:]]).reshape(-1, B)
    half_x, half_y = dx.shape[0] // 2, dy.shape[0] // 2

    def place(op, data, shape):
        return (op @ data).reshape(shape + (B,)).transpose(2, 0, 1)

    Px = place(sx, dx, (n2, n2))
    Py = place(sy, dy, (n2, L2))
    if not flows:
        return Px, Py, None, None
    Fx = place(sfx, dx[:half_x], (L2, n2))[:, :, 2:]
    Fy = place(sfy, dy[:half_y], (L2, L2))
    return Px, Py, Fx, Fy


def line_flows_jacobian(net, x, y):
    """Jacobians of :func:`line_flows` with respect to ``x`` and ``y``."""
    _, _, Fx, Fy = jacobians_stack(net, np.asarray(x)[None], y)
    return Fx[0], Fy[0]


# ---------------------------------------------------------------------------
# nodal residuum


def _residuum_full(net, x, y, slack_angle=0.0):
    v, th = full_voltages(net, x, slack_angle)
    g, b = split_params(check_params(net, y))
    k, l = net.from_bus, net.to_bus
    a, c = np.concatenate([k, l]), np.concatenate([l, k])
    p, q, _, _ = _flow_terms(v[a], v[c], th[a] - th[c], np.concatenate([g, g]),
                             np.concatenate([b, b]), partials=False)
    P = np.zeros((net.n_buses, 2), dtype=p.dtype)
    np.add.at(P[:, 0], a, p)
    np.add.at(P[:, 1], a, q)
    return P


def power_residuum(net, x, y, k):
    """Active and reactive power residuum at bus ``k`` (slack allowed)."""
    if not 0 <= k < net.n_buses:
        raise IndexError(f"bus {k} out of range")
    return _residuum_full(net, x, y)[k]


def power_residuum_all(net, x, y, *, slack_angle=0.0):
    """Residua of the non-slack buses stacked like the state vector."""
    return _residuum_full(net, x, y, slack_angle)[1:].reshape(-1)


def _residuum_jacobians_full(net, x, y):
    Px, Py, _, _ = jacobians_stack(net, np.asarray(x)[None], y, flows=False)
    return Px[0], Py[0]


def residuum_jacobians(net, x, y):
    """Analytic ``(dP/dx, dP/dy)`` of :func:`power_residuum_all`."""
    jx, jy = _residuum_jacobians_full(net, x, y)
    return jx[2:, 2:], jy[2:]


def jacobian_P_x(net, x, y):
    return residuum_jacobians(net, x, y)[0]


def jacobian_P_y(net, x, y):
    return residuum_jacobians(net, x, y)[1]


# ---------------------------------------------------------------------------
# supply side


def net_supply(net, u):
    """Net supply ``S(u)`` of the non-slack buses, stacked like the state."""
    u = np.asarray(u)
    if u.shape != (net.n_inputs,):
        raise ValueError(f"input vector has shape {u.shape}, expected ({net.n_inputs},)")
    S = np.empty((net.n_buses, 2), dtype=np.result_type(u, float))
    S[:, 0] = -net.p_demand
    S[:, 1] = -net.q_demand
    gens = np.array(net.controllable, dtype=int)
    S[gens, 0] += u[0::2]
    S[gens, 1] += u[1::2]
    return S[1:].reshape(-1)


def supply_jacobian(net):
    """Constant 0/1 matrix ``dS/du``."""
    J = np.zeros((net.n_states, net.n_inputs))
    for i, bus in enumerate(net.controllable):
        J[2 * (bus - 1), 2 * i] = 1.0
        J[2 * (bus - 1) + 1, 2 * i + 1] = 1.0
    return J


def slack_power(net, x, y):
    """Generation ``(p_g, q_g)`` the slack bus must supply to balance the grid."""
    P1 = _residuum_full(net, x, y)[0]
    return P1 + np.array([net.p_demand[0], net.q_demand[0]])


def slack_power_jacobian(net, x, y):
    """Derivative of :func:`slack_power` with respect to ``x`` (2 x n_states)."""
    jx, _ = _residuum_jacobians_full(net, x, y)
    return jx[:2, 2:]
