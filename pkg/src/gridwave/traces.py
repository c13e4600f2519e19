"""Result traces: storage, CSV round-trip and RMSE comparison."""
import csv
import json
import math

import numpy as np

from .errors import SignalMismatch


class ResultTrace:
    """Time points, a state matrix (one row per time) and run metadata."""

    def __init__(self, times, states, names, events=(), stats=None):
        times = np.array(times, dtype=float)
        states = np.array(states, dtype=float).reshape(len(times), -1)
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if states.shape[1] != len(names):
            raise ValueError("state columns do not match names")
        times.flags.writeable = False
        states.flags.writeable = False
        self.times = times
        self.states = states
        self.names = tuple(names)
        self.events = list(events)
        self.stats = dict(stats or {})
        self._col = {n: k for k, n in enumerate(self.names)}

    def __len__(self):
        return len(self.times)

    def column(self, name):
        try:
            return self._col[name]
        except KeyError:
            raise SignalMismatch(f"signal '{name}' not in trace") from None

    def signal(self, name):
        return self.states[:, self.column(name)]

    @property
    def final(self):
        return self.states[-1]

    def at(self, t):
        return np.array([np.interp(t, self.times, self.states[:, k])
                         for k in range(self.states.shape[1])])

    # -- files ---------------------------------------------------------------------
    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("time",) + self.names)
            for t, row in zip(self.times, self.states):
                w.writerow([_fmt(t)] + [_fmt(v) for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if not header or header[0] != "time":
                raise SignalMismatch(f"{path}: first column must be 'time'")
            data = [[float(v) for v in row] for row in r if row]
        arr = np.array(data, dtype=float).reshape(len(data), len(header))
        return cls(arr[:, 0], arr[:, 1:], header[1:])

    def events_json(self):
        """Event log without the raw state vectors."""
        keep = []
        for e in self.events:
            keep.append({k: v for k, v in e.items() if k not in ("x_pre", "x_post")})
        return keep

    def write_events(self, path):
        with open(path, "w") as fh:
            json.dump(self.events_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v):
    return format(float(v), ".17g")


# --- comparison ------------------------------------------------------------------------

def _common_grid(a, b):
    lo = max(a.times[0], b.times[0])
    hi = min(a.times[-1], b.times[-1])
    if hi < lo:
        raise SignalMismatch("traces do not overlap in time")
    grid = np.union1d(a.times, b.times)
    return grid[(grid >= lo) & (grid <= hi)]


def rmse_compare(trace_a, trace_b, signals=None):
    """RMSE per signal after linear-interpolation resampling to a common grid."""
    if signals is None:
        if set(trace_a.names) != set(trace_b.names):
            missing = sorted(set(trace_a.names) ^ set(trace_b.names))
            raise SignalMismatch(f"traces carry different signals: {missing[:5]}")
        signals = trace_a.names
    grid = _common_grid(trace_a, trace_b)
    out = {}
    for name in signals:
        ya = np.interp(grid, trace_a.times, trace_a.signal(name))
        yb = np.interp(grid, trace_b.times, trace_b.signal(name))
        out[name] = float(np.sqrt(np.mean((ya - yb) ** 2)))
    return out


def derived_signals(trace):
    """Bus voltage magnitude and angle (degrees) from the v_d / v_q states."""
    out = {}
    for name in trace.names:
        if name.endswith(".v_d"):
            bus = name[:-4]
            q = bus + ".v_q"
            if q in trace.names:
                vd, vq = trace.signal(name), trace.signal(q)
                out[bus + ".vm"] = np.hypot(vd, vq)
                out[bus + ".va_deg"] = np.degrees(np.unwrap(np.arctan2(vq, vd)))
    return out


SIGNAL_CLASSES = ("voltage_magnitude", "voltage_angle", "speed")


def compare_summary(trace_a, trace_b):
    """Max and mean RMSE per signal class: voltages, angles, speeds."""
    grid = _common_grid(trace_a, trace_b)
    da, db = derived_signals(trace_a), derived_signals(trace_b)
    if set(da) != set(db):
        raise SignalMismatch("traces describe different buses")
    groups = {c: [] for c in SIGNAL_CLASSES}
    for name in sorted(da):
        ya = np.interp(grid, trace_a.times, da[name])
        yb = np.interp(grid, trace_b.times, db[name])
        e = float(np.sqrt(np.mean((ya - yb) ** 2)))
        groups["voltage_magnitude" if name.endswith(".vm") else "voltage_angle"].append(e)
    speeds = [n for n in trace_a.names if n.endswith(".omega") or n.endswith(".omega_olc")]
    if speeds:
        groups["speed"] = list(rmse_compare(trace_a, trace_b, speeds).values())
    table = {}
    for c, vals in groups.items():
        table[c] = {"max": max(vals) if vals else math.nan,
                    "avg": float(np.mean(vals)) if vals else math.nan,
                    "count": len(vals)}
    return table


def format_summary(table):
    lines = [f"{'signal':<20}{'max RMSE':>14}{'avg RMSE':>14}{'count':>7}"]
    for c in SIGNAL_CLASSES:
        r = table[c]
        lines.append(f"{c:<20}{r['max']:>14.4e}{r['avg']:>14.4e}{r['count']:>7d}")
    return "\n".join(lines)
