"""Reader for MATPOWER-style ``.m`` case files and conversion to :class:`Network`.

Only the ``baseMVA``, ``bus``, ``gen`` and ``branch`` blocks are used; any
other assignment in the file is skipped. Shunt elements, line charging and
transformer taps have no place in the network model and are dropped with a
warning.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import CaseFormatError, MalformedRow, MissingBlock, UnsupportedFeature, ZeroImpedance
from .grid import Bounds, Network, default_state_bounds, pack_params

log = logging.getLogger(__name__)

# column positions in the MATPOWER tables
BUS_I, BUS_TYPE, PD, QD, GS, BS = 0, 1, 2, 3, 4, 5
VM, VA, BASE_KV, VMAX, VMIN = 7, 8, 9, 11, 12
GEN_BUS, PG, QG, QMAX, QMIN, GEN_STATUS, PMAX, PMIN = 0, 1, 2, 3, 4, 7, 8, 9
F_BUS, T_BUS, BR_R, BR_X, BR_B, TAP, SHIFT, BR_STATUS = 0, 1, 2, 3, 4, 8, 9, 10

MIN_COLS = {"bus": 13, "gen": 10, "branch": 11}


@dataclass
class CaseFile:
    base_mva: float
    bus: np.ndarray
    gen: np.ndarray
    branch: np.ndarray


_ASSIGN = re.compile(r"\bmpc\.(\w+)\s*=\s*")
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?$")


def _strip_comments(text):
    lines = []
    for line in text.splitlines():
        i = line.find("%")
        lines.append(line if i < 0 else line[:i])
    return lines


def _parse_matrix(name, lines, start_line, start_col):
    """Read a bracketed block beginning at ``lines[start_line][start_col]``."""
    rows, row, row_line = [], [], None
    lineno = start_line
    col = start_col
    if not lines[lineno][col:].lstrip().startswith("["):
        raise MalformedRow(f"block '{name}' is not a bracketed matrix", lineno + 1)
    col = lines[lineno].index("[", col) + 1
    while lineno < len(lines):
        text = lines[lineno][col:]
        end = text.find("]")
        body = text if end < 0 else text[:end]
        for chunk_i, chunk in enumerate(body.split(";")):
            if chunk_i > 0 and row:
                rows.append((row_line, row))
                row = []
            for tok in chunk.replace(",", " ").split():
                if not _NUMBER.match(tok):
                    raise MalformedRow(f"non-numeric entry {tok!r} in block '{name}'", lineno + 1)
                if not row:
                    row_line = lineno + 1
                row.append(float(tok))
        if end >= 0:
            break
        # a newline also terminates a row
        if row:
            rows.append((row_line, row))
            row = []
        lineno += 1
        col = 0
    else:
        raise MalformedRow(f"unterminated block '{name}'", start_line + 1)
    if row:
        rows.append((row_line, row))
    if not rows:
        raise MalformedRow(f"block '{name}' is empty", start_line + 1)
    width = MIN_COLS[name]
    for ln, r in rows:
        if len(r) < width:
            raise MalformedRow(f"'{name}' row has {len(r)} columns, need at least {width}", ln)
    ncol = max(len(r) for _, r in rows)
    out = np.zeros((len(rows), ncol))
    for i, (_, r) in enumerate(rows):
        out[i, :len(r)] = r
    return out, [ln for ln, _ in rows]


def parse_case_text(text):
    """Parse the text of a case file into a :class:`CaseFile`."""
    lines = _strip_comments(text)
    blocks, row_lines, base_mva = {}, {}, None
    for i, line in enumerate(lines):
        for m in _ASSIGN.finditer(line):
            name = m.group(1)
            if name == "baseMVA":
                val = line[m.end():].split(";")[0].strip()
                if not _NUMBER.match(val):
                    raise MalformedRow(f"baseMVA value {val!r} is not a number", i + 1)
                base_mva = float(val)
            elif name in MIN_COLS:
                blocks[name], row_lines[name] = _parse_matrix(name, lines, i, m.end())
    if base_mva is None:
        raise MissingBlock("no 'mpc.baseMVA' assignment found")
    if not base_mva > 0:
        raise MalformedRow("baseMVA must be positive")
    for name in ("bus", "gen", "branch"):
        if name not in blocks:
            raise MissingBlock(f"no 'mpc.{name}' block found")
    case = CaseFile(base_mva, blocks["bus"], blocks["gen"], blocks["branch"])
    _validate(case, row_lines)
    return case


def _validate(case, row_lines):
    ids = case.bus[:, BUS_I]
    if np.any(ids != np.round(ids)) or len(set(ids)) != len(ids):
        raise MalformedRow("bus numbers must be unique integers", row_lines["bus"][0])
    known = set(ids.astype(int))
    for i, row in enumerate(case.gen):
        if int(row[GEN_BUS]) not in known or row[GEN_BUS] != round(row[GEN_BUS]):
            raise MalformedRow(f"generator at unknown bus {row[GEN_BUS]:g}", row_lines["gen"][i])
    for i, row in enumerate(case.branch):
        ln = row_lines["branch"][i]
        for c in (F_BUS, T_BUS):
            if int(row[c]) not in known or row[c] != round(row[c]):
                raise MalformedRow(f"branch references unknown bus {row[c]:g}", ln)
        if row[BR_STATUS] not in (0.0, 1.0):
            raise UnsupportedFeature(f"branch status {row[BR_STATUS]:g} is not 0 or 1", ln)
        if row[BR_STATUS] == 1 and row[BR_R] ** 2 + row[BR_X] ** 2 == 0:
            raise ZeroImpedance("in-service branch with zero impedance", ln)
        if row[F_BUS] == row[T_BUS]:
            raise MalformedRow("branch connects a bus to itself", ln)


def parse_case(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise CaseFormatError(f"{path}: not valid UTF-8 text ({exc.reason})") from None
    return parse_case_text(text)


def builtin_case_path(name="case5"):
    return str(resources.files("oedgrid") / "data" / f"{name}.m")


def branch_to_admittance(r, x):
    """Series admittance ``(g, b)`` of a branch with impedance ``r + i x``."""
    z2 = r * r + x * x
    if z2 == 0:
        raise ZeroImpedance("branch impedance is zero")
    return r / z2, -x / z2


@dataclass
class CaseModel:
    """A network together with the dataset's line parameters and generator setpoints."""

    network: Network
    y_true: np.ndarray
    u_dataset: np.ndarray


def case_to_network(case, slack_bus=None, theta_max=np.pi / 2, slack_box="wide"):
    """Convert a parsed case into a :class:`CaseModel`.

    The slack is the first bus of the bus table unless ``slack_bus`` (a
    dataset bus number) is given; the bus type column is not consulted.
    Several generators on one bus are merged by summing setpoints and limits.

    ``slack_box="dataset"`` bounds the slack generation by the limits of the
    slack bus generators. The default ``"wide"`` models a slack backed by
    storage: ``|p| <= sum(Pmax)`` and ``|q| <= sum(Qmax)`` over all in-service
    generators.
    """
    if slack_box not in ("wide", "dataset"):
        raise ValueError("slack_box must be 'wide' or 'dataset'")
    ids = [int(i) for i in case.bus[:, BUS_I]]
    if slack_bus is None:
        slack_bus = ids[0]
    if slack_bus not in ids:
        raise CaseFormatError(f"slack bus {slack_bus} is not in the bus table")
    order = [slack_bus] + [i for i in ids if i != slack_bus]
    pos = {bus: n for n, bus in enumerate(order)}
    rows = {int(r[BUS_I]): r for r in case.bus}
    base = case.base_mva
    n = len(order)

    pd = np.array([rows[b][PD] for b in order]) / base
    qd = np.array([rows[b][QD] for b in order]) / base
    if np.any(case.bus[:, [GS, BS]] != 0):
        log.warning("bus shunt elements are not part of the model and are ignored")

    gens = {}
    for r in case.gen:
        if r[GEN_STATUS] <= 0:
            continue
        k = pos[int(r[GEN_BUS])]
        agg = gens.setdefault(k, np.zeros(6))
        agg += [r[PG], r[QG], r[PMIN], r[PMAX], r[QMIN], r[QMAX]]
    if 0 not in gens:
        raise CaseFormatError(f"slack bus {slack_bus} has no in-service generator")
    gen_buses = sorted(gens)
    gdata = {k: v / base for k, v in gens.items()}

    lines, gvals, bvals = [], [], []
    dropped_charging = dropped_tap = False
    for r in case.branch:
        if r[BR_STATUS] == 0:
            continue
        k, l = pos[int(r[F_BUS])], pos[int(r[T_BUS])]
        g, b = branch_to_admittance(r[BR_R], r[BR_X])
        dropped_charging |= r[BR_B] != 0
        dropped_tap |= r[TAP] not in (0.0, 1.0) or r[SHIFT] != 0
        key = (min(k, l), max(k, l))
        if key in lines:
            log.warning("parallel branches %s merged into one line", key)
            j = lines.index(key)
            gvals[j] += g
            bvals[j] += b
        else:
            lines.append(key)
            gvals.append(g)
            bvals.append(b)
    if dropped_charging:
        log.warning("line charging susceptances are not part of the model and are ignored")
    if dropped_tap:
        log.warning("transformer taps and phase shifts are not part of the model and are ignored")
    perm = sorted(range(len(lines)), key=lambda j: lines[j])
    lines = [lines[j] for j in perm]
    y_true = pack_params([gvals[j] for j in perm], [bvals[j] for j in perm])

    ctrl = gen_buses[1:]
    u = np.concatenate([gdata[k][:2] for k in ctrl]) if ctrl else np.zeros(0)
    u_lo = np.concatenate([[gdata[k][2], gdata[k][4]] for k in ctrl]) if ctrl else np.zeros(0)
    u_hi = np.concatenate([[gdata[k][3], gdata[k][5]] for k in ctrl]) if ctrl else np.zeros(0)
    vmin = np.array([rows[b][VMIN] for b in order[1:]])
    vmax = np.array([rows[b][VMAX] for b in order[1:]])
    x_lo, x_hi = default_state_bounds(n, theta_max=theta_max)
    x_lo[0::2] = np.where(vmin > 0, vmin, x_lo[0::2])
    x_hi[0::2] = np.where(vmax > 0, vmax, x_hi[0::2])
    if slack_box == "dataset":
        s = gdata[0]
        s_lo, s_hi = [s[2], s[4]], [s[3], s[5]]
    else:
        cap = np.sum([[abs(v[3]), abs(v[5])] for v in gdata.values()], axis=0)
        s_lo, s_hi = -cap, cap
    bounds = Bounds(u_lo, u_hi, x_lo, x_hi, s_lo, s_hi)

    net = Network(
        n_buses=n,
        lines=tuple(lines),
        generators=tuple(gen_buses),
        p_demand=pd,
        q_demand=qd,
        bounds=bounds,
        slack_voltage=float(rows[slack_bus][VM]) or 1.0,
        base_mva=base,
        base_kv=float(rows[slack_bus][BASE_KV]),
        bus_ids=tuple(order),
    )
    return CaseModel(net, y_true, u)


def load_case(path=None, slack_bus=None, slack_box="wide"):
    """Read a case file (or a JSON network description) into a :class:`CaseModel`."""
    path = path or builtin_case_path()
    if str(path).endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            return model_from_json(json.load(fh))
    return case_to_network(parse_case(path), slack_bus=slack_bus, slack_box=slack_box)


# ---------------------------------------------------------------------------
# JSON network description


def model_to_json(model):
    net = model.network
    b = net.bounds
    return {
        "n_buses": net.n_buses,
        "bus_ids": list(net.bus_ids),
        "lines": [[net.bus_ids[k], net.bus_ids[l]] for k, l in net.lines],
        "generators": [net.bus_ids[k] for k in net.generators],
        "p_demand": net.p_demand.tolist(),
        "q_demand": net.q_demand.tolist(),
        "slack_voltage": net.slack_voltage,
        "base_mva": net.base_mva,
        "base_kv": net.base_kv,
        "bounds": {k: getattr(b, k).tolist() for k in
                   ("u_lo", "u_hi", "x_lo", "x_hi", "slack_lo", "slack_hi")},
        "g": model.y_true[0::2].tolist(),
        "b": model.y_true[1::2].tolist(),
        "u": model.u_dataset.tolist(),
    }


def model_from_json(data):
    """Inverse of :func:`model_to_json`; buses are referenced by ``bus_ids``."""
    ids = list(data.get("bus_ids") or range(1, data["n_buses"] + 1))
    pos = {b: i for i, b in enumerate(ids)}
    lines = [(pos[k], pos[l]) for k, l in data["lines"]]
    if any(k > l for k, l in lines):
        raise ValueError("JSON lines must be listed with the lower bus position first")
    net = Network(
        n_buses=data["n_buses"],
        lines=tuple(lines),
        generators=tuple(pos[g] for g in data["generators"]),
        p_demand=data["p_demand"],
        q_demand=data["q_demand"],
        bounds=Bounds(**data["bounds"]),
        slack_voltage=data.get("slack_voltage", 1.0),
        base_mva=data.get("base_mva", 100.0),
        base_kv=data.get("base_kv", 230.0),
        bus_ids=tuple(ids),
    )
    return CaseModel(net, pack_params(data["g"], data["b"]), np.asarray(data["u"], dtype=float))
