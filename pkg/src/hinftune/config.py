"""YAML run configuration: schema validation and model construction.

A configuration has the top-level sections ``model`` (required),
``parameters``, ``bounds``, ``analysis``, ``tuning``, ``simulation`` and
``seed``.  ``docs/config_schema.md`` documents every field.  Errors carry
the dotted field path and the source line, e.g.
``model.branches[1].x (line 14): must be positive``.

Tuned parameters are written as ``{"parameters": {name: value}}``, which
is itself a valid ``parameters`` section (inline or by file path).
"""

from dataclasses import dataclass, field
import hashlib
import os
import re

import numpy as np
import yaml

from . import blocks as _blocks
from .exceptions import ConfigError
from .gridmodel import Branch, Network, StaticProsumer, SwingGenerator, build_coupled_system, reduced_system
from .lti import StateSpace, log_grid, realize_columns
from .paramsys import ParamSystem
from .tuner import TuneConfig, default_grid

__all__ = [
    "RunConfig",
    "load_config",
    "parse_config",
    "read_parameters",
    "write_parameters",
    "format_parameters",
    "LIBRARY",
]

LIBRARY = {
    "exac4": _blocks.exac4,
    "ieee_avr": _blocks.ieee_avr,
    "simple_pss": _blocks.simple_pss,
    "pss1a": _blocks.pss1a,
    "tgov1": _blocks.tgov1,
}
MODEL_KINDS = ("statespace", "transfer_matrix", "blocks", "microgrid")
_TOP_KEYS = {"name", "model", "parameters", "bounds", "analysis", "tuning", "simulation", "seed"}


# line-tracking loader --------------------------------------------------------

class _Map(dict):
    """Mapping that remembers the source line of each key."""

    lines: dict
    line: int


class _Seq(list):
    lines: list
    line: int


class _Loader(yaml.SafeLoader):
    pass


# accept ``1e-3`` as a float (YAML 1.1 requires a dot)
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?(?:[eE][-+]?[0-9]+)?|\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)|\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    m = _Map()
    m.lines = {}
    m.line = node.start_mark.line + 1
    for k_node, v_node in node.value:
        k = loader.construct_object(k_node, deep=True)
        m[k] = loader.construct_object(v_node, deep=True)
        m.lines[k] = k_node.start_mark.line + 1
    return m


def _construct_seq(loader, node):
    s = _Seq(loader.construct_object(n, deep=True) for n in node.value)
    s.lines = [n.start_mark.line + 1 for n in node.value]
    s.line = node.start_mark.line + 1
    return s


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


class _Field:
    """A value together with its dotted path and source line, for diagnostics."""

    def __init__(self, value, path, line=None):
        self.value, self.path, self.line = value, path, line

    def fail(self, msg):
        where = self.path + (f" (line {self.line})" if self.line else "")
        raise ConfigError(f"{where}: {msg}")

    def __contains__(self, key):
        return isinstance(self.value, dict) and key in self.value

    def get(self, key, default=None, required=False):
        if not isinstance(self.value, dict):
            self.fail("expected a mapping")
        path = f"{self.path}.{key}" if self.path else str(key)
        if key not in self.value:
            if required:
                self.fail(f"missing required field {key!r}")
            return _Field(default, path, getattr(self.value, "line", self.line))
        line = getattr(self.value, "lines", {}).get(key, self.line)
        return _Field(self.value[key], path, line)

    def items(self):
        if not isinstance(self.value, dict):
            self.fail("expected a mapping")
        for k in self.value:
            yield k, self.get(k)

    def seq(self):
        if not isinstance(self.value, list):
            self.fail("expected a list")
        lines = getattr(self.value, "lines", [self.line] * len(self.value))
        return [_Field(v, f"{self.path}[{i}]", ln) for i, (v, ln) in enumerate(zip(self.value, lines))]

    def keys_within(self, allowed):
        if not isinstance(self.value, dict):
            self.fail("expected a mapping")
        extra = set(self.value) - set(allowed)
        if extra:
            self.get(sorted(map(str, extra))[0]).fail(f"unknown field (allowed: {', '.join(sorted(allowed))})")

    # typed accessors
    def number(self, lo=None, hi=None, positive=False, default=None):
        v = self.value if self.value is not None else default
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"expected a number, got {v!r}")
        v = float(v)
        if not np.isfinite(v):
            self.fail("must be finite")
        if positive and not v > 0:
            self.fail("must be positive")
        if lo is not None and v < lo:
            self.fail(f"must be at least {lo}")
        if hi is not None and v > hi:
            self.fail(f"must be at most {hi}")
        return v

    def integer(self, lo=None, default=None):
        v = self.value if self.value is not None else default
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"expected an integer, got {v!r}")
        if lo is not None and v < lo:
            self.fail(f"must be at least {lo}")
        return int(v)

    def string(self, choices=None, default=None):
        v = self.value if self.value is not None else default
        if not isinstance(v, str):
            self.fail(f"expected a string, got {v!r}")
        if choices is not None and v not in choices:
            self.fail(f"must be one of {', '.join(choices)}")
        return v

    def boolean(self, default=None):
        v = self.value if self.value is not None else default
        if not isinstance(v, bool):
            self.fail(f"expected true or false, got {v!r}")
        return v

    def matrix(self, shape=None):
        try:
            M = np.array(self.value, dtype=float, ndmin=2)
        except (TypeError, ValueError):
            self.fail("expected a numeric matrix (list of rows)")
        if M.ndim != 2 or not np.all(np.isfinite(M)):
            self.fail("expected a finite numeric matrix")
        if shape is not None and M.shape != shape:
            self.fail(f"expected shape {shape}, got {M.shape}")
        return M

    def poly(self):
        try:
            p = np.array(self.value, dtype=float, ndmin=1)
        except (TypeError, ValueError):
            self.fail("expected a list of polynomial coefficients")
        if p.ndim != 1 or not np.all(np.isfinite(p)):
            self.fail("expected a flat list of finite coefficients")
        return p

    def interval(self):
        v = self.value
        if not isinstance(v, list) or len(v) != 2:
            self.fail("expected [lo, hi]")
        lo, hi = (f.number() for f in self.seq())
        if lo > hi:
            self.fail("lower bound exceeds upper bound")
        return lo, hi


def _parse_yaml(text, source):
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise ConfigError(f"{source}{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    return data


# parameter files -------------------------------------------------------------

def format_parameters(params, header=None):
    """Parameter-file text for ``{name: value}`` (full float precision)."""
    lines = []
    if header:
        lines += [f"# {h}" for h in header]
    lines.append("parameters:")
    for k, v in params.items():
        lines.append(f"  {yaml.safe_dump(str(k)).splitlines()[0]}: {float(v)!r}")
    return "\n".join(lines) + "\n"


def write_parameters(path, params, header=None):
    """Write a parameter file readable by :func:`read_parameters`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_parameters(params, header))


def read_parameters(path):
    """Read a parameter file written by :func:`write_parameters`."""
    with open(path, encoding="utf-8") as fh:
        data = _parse_yaml(fh.read(), str(path))
    root = _Field(data, "", 1)
    return _param_values(root.get("parameters", required=True))


def _param_values(f):
    if not isinstance(f.value, dict):
        f.fail("expected a mapping of parameter name to value")
    return {str(k): v.number() for k, v in f.items()}


# run configuration -----------------------------------------------------------

@dataclass
class RunConfig:
    """Validated configuration with the models built.

    Attributes
    ----------
    systems : list of ParamSystem
        One reduced linear model per scenario, sharing the parameter vector.
    daes : list of CoupledDAE or None
        Nonlinear models (microgrid configs only).
    K0 : ndarray
        Initial parameters (model values overridden by ``parameters``).
    """

    path: str
    name: str
    kind: str
    systems: list
    scenario_names: list
    K0: np.ndarray
    analysis: dict
    tuning: dict
    simulation: dict
    seed: int = 0
    daes: list = None
    sha256: str = ""
    param_files: list = field(default_factory=list)

    @property
    def param_names(self):
        return self.systems[0].param_names

    @property
    def input_names(self):
        s = self.systems[0]
        return list(s.input_names) if s.input_names else [f"u{i}" for i in range(s.evaluate(self.K0).n_inputs)]

    @property
    def output_names(self):
        s = self.systems[0]
        return list(s.output_names) if s.output_names else [f"y{i}" for i in range(s.evaluate(self.K0).n_outputs)]

    def tune_config(self):
        t = self.tuning
        width = self.systems[0].K_max - self.systems[0].K_min
        dk = t["delta_k"]
        if isinstance(dk, dict):
            dk = np.array([dk.get(n, 0.1 * w if w > 0 else 1.0) for n, w in zip(self.param_names, width)])
        else:
            dk = float(dk) * np.where(width > 0, width, 1.0)
        return TuneConfig(dk, t["alpha"], t["k_max"], t["grid"], t["conv_tol"], t["n_conv"],
                          None, t["margin"], sub_tol=t["sub_tol"])


def load_config(path):
    """Read, validate and build a run configuration.

    Raises
    ------
    ConfigError
        With the offending field path and line.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError(f"{path}: config must be UTF-8") from None
    cfg = parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)), source=str(path))
    cfg.path = str(path)
    cfg.sha256 = hashlib.sha256(raw).hexdigest()
    return cfg


def parse_config(text, base_dir=".", source="<config>"):
    data = _parse_yaml(text, source)
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    root = _Field(data, "", 1)
    root.keys_within(_TOP_KEYS)
    name = root.get("name").string(default="run")
    seed = root.get("seed").integer(lo=0, default=0)

    # initial parameters: inline mapping or path to a parameter file
    pf = root.get("parameters")
    param_files = []
    if pf.value is None:
        overrides = {}
    elif isinstance(pf.value, str):
        p = pf.value if os.path.isabs(pf.value) else os.path.join(base_dir, pf.value)
        if not os.path.exists(p):
            pf.fail(f"parameter file {pf.value!r} not found")
        overrides = read_parameters(p)
        param_files.append(p)
    else:
        overrides = _param_values(pf)
    bf = root.get("bounds")
    bounds = {} if bf.value is None else {str(k): v.interval() for k, v in bf.items()}

    model = root.get("model", required=True)
    kind = model.get("kind", required=True).string(MODEL_KINDS)
    builder = {"statespace": _build_statespace, "transfer_matrix": _build_transfer_matrix,
               "blocks": _build_blocks, "microgrid": _build_microgrid}[kind]
    systems, names, daes = builder(model, overrides, bounds)

    pnames = systems[0].param_names
    for k in overrides:
        if k not in pnames:
            pf.fail(f"unknown parameter {k!r} (model parameters: {', '.join(pnames) or 'none'})")
    for k in bounds:
        if k not in pnames:
            bf.get(k).fail("bounds given for an unknown parameter")
    s0 = systems[0]
    K0 = s0.vector(overrides) if pnames else np.zeros(0)
    if pnames:
        lo_bad = np.flatnonzero((K0 < s0.K_min) | (K0 > s0.K_max))
        if lo_bad.size:
            n = pnames[lo_bad[0]]
            i = lo_bad[0]
            raise ConfigError(f"parameters.{n}: initial value {float(K0[i])!r} lies outside its bounds "
                              f"[{float(s0.K_min[i])!r}, {float(s0.K_max[i])!r}]")
    cfg = RunConfig(source, name, kind, systems, names, K0,
                    _parse_analysis(root.get("analysis", {})),
                    _parse_tuning(root.get("tuning", {}), pnames),
                    {}, seed, daes, param_files=param_files)
    cfg.simulation = _parse_simulation(root.get("simulation"), cfg, base_dir)
    return cfg


def _parse_grid(f, default):
    if f.value is None:
        return default
    if isinstance(f.value, list):
        vals = np.array([g.number(lo=0.0) for g in f.seq()])
        if vals.size == 0:
            f.fail("grid must not be empty")
        return np.unique(vals)
    f.keys_within({"start", "stop", "num", "dc"})
    start = f.get("start", required=True).number(positive=True)
    stop = f.get("stop", required=True).number(positive=True)
    if stop <= start:
        f.get("stop").fail("must exceed start")
    num = f.get("num", 40).integer(lo=2)
    g = log_grid(start, stop, num)
    if f.get("dc", True).boolean():
        g = np.concatenate([[0.0], g])
    return g


def _parse_analysis(f):
    if f.value is None:
        f = _Field({}, f.path, f.line)
    f.keys_within({"sweep", "hinf_tol"})
    sweep = _parse_grid(f.get("sweep"), log_grid(1e-3, 1e3, 500))
    return {"sweep": sweep, "hinf_tol": f.get("hinf_tol", 1e-9).number(positive=True)}


def _parse_tuning(f, pnames):
    if f.value is None:
        f = _Field({}, f.path, f.line)
    f.keys_within({"delta_k", "alpha", "k_max", "grid", "conv_tol", "n_conv", "margin", "sub_tol"})
    dkf = f.get("delta_k", 0.1)
    if isinstance(dkf.value, dict):
        dk = {}
        for k, v in dkf.items():
            if k not in pnames:
                v.fail("step size given for an unknown parameter")
            dk[str(k)] = v.number(positive=True)
    else:
        dk = dkf.number(positive=True)
    return {
        "delta_k": dk,
        "alpha": f.get("alpha", 0.7).number(lo=1e-6, hi=1 - 1e-6),
        "k_max": f.get("k_max", 50).integer(lo=1),
        "grid": _parse_grid(f.get("grid"), default_grid()),
        "conv_tol": f.get("conv_tol", 1e-4).number(lo=0.0),
        "n_conv": f.get("n_conv", 3).integer(lo=1),
        "margin": f.get("margin", 1e-8).number(lo=0.0),
        "sub_tol": f.get("sub_tol", 1e-7).number(positive=True),
    }


def _parse_simulation(f, cfg, base_dir):
    if f.value is None:
        return None
    f.keys_within({"horizon", "dt", "step_time", "step", "nonlinear", "compare", "band", "channels"})
    horizon = f.get("horizon", required=True).number(positive=True)
    dt = f.get("dt", 1e-3).number(positive=True)
    if horizon < 10 * dt:
        f.get("horizon").fail("must span at least 10 time steps")
    step_time = f.get("step_time", 0.0).number(lo=0.0)
    if step_time >= horizon:
        f.get("step_time").fail("must lie inside the horizon")
    inputs = cfg.input_names
    step = np.zeros(len(inputs))
    sf = f.get("step", required=True)
    for k, v in sf.items():
        if k not in inputs:
            v.fail(f"unknown input (inputs: {', '.join(inputs)})")
        step[inputs.index(k)] = v.number()
    nonlinear = f.get("nonlinear", False).boolean()
    if nonlinear and cfg.daes is None:
        f.get("nonlinear").fail("nonlinear simulation needs a microgrid model")
    compare = None
    cf = f.get("compare")
    if cf.value is not None:
        if isinstance(cf.value, str):
            p = cf.value if os.path.isabs(cf.value) else os.path.join(base_dir, cf.value)
            if not os.path.exists(p):
                cf.fail(f"parameter file {cf.value!r} not found")
            vals = read_parameters(p)
            cfg.param_files.append(p)
        else:
            vals = _param_values(cf)
        for k in vals:
            if k not in cfg.param_names:
                cf.fail(f"unknown parameter {k!r}")
        compare = cfg.systems[0].vector({**dict(zip(cfg.param_names, cfg.K0)), **vals})
    chf = f.get("channels")
    channels = None
    if chf.value is not None:
        channels = [c.string() for c in chf.seq()]
    return {"horizon": horizon, "dt": dt, "step_time": step_time, "step": step, "nonlinear": nonlinear,
            "compare": compare, "band": f.get("band", 0.02).number(positive=True), "channels": channels}


# model builders ----------------------------------------------------------------

def _build_statespace(m, overrides, bounds):
    m.keys_within({"kind", "A", "B", "C", "D", "affine", "inputs", "outputs"})
    A = m.get("A", required=True).matrix()
    n = A.shape[0]
    if A.shape != (n, n):
        m.get("A").fail("must be square")
    B = m.get("B", required=True).matrix()
    if B.shape[0] != n:
        m.get("B").fail(f"must have {n} rows")
    C = m.get("C", required=True).matrix()
    if C.shape[1] != n:
        m.get("C").fail(f"must have {n} columns")
    df = m.get("D")
    D = np.zeros((C.shape[0], B.shape[1])) if df.value is None else df.matrix((C.shape[0], B.shape[1]))
    base = {"A": A, "B": B, "C": C, "D": D}
    terms, names = [], []
    af = m.get("affine")
    if af.value is not None:
        for pname, tf in af.items():
            tf.keys_within(set(base))
            terms.append({k: tf.get(k).matrix(base[k].shape) for k in tf.value})
            names.append(str(pname))
            if pname not in overrides:
                tf.fail("affine parameter needs an initial value under 'parameters'")
            if pname not in bounds:
                tf.fail("affine parameter needs bounds under 'bounds'")

    def fn(K):
        mats = {k: v.copy() for k, v in base.items()}
        for k_i, t in zip(K, terms):
            for key, M in t.items():
                mats[key] += k_i * M
        return StateSpace(mats["A"], mats["B"], mats["C"], mats["D"])

    lo = [bounds[n][0] for n in names]
    hi = [bounds[n][1] for n in names]
    nominal = [overrides[n] for n in names]
    ins = _names(m.get("inputs"), B.shape[1], "u")
    outs = _names(m.get("outputs"), C.shape[0], "y")
    return [ParamSystem(fn, names, lo, hi, nominal, outs, ins)], ["default"], None


def _names(f, count, prefix):
    if f.value is None:
        return [f"{prefix}{i}" for i in range(count)]
    names = [s.string() for s in f.seq()]
    if len(names) != count:
        f.fail(f"expected {count} names")
    return names


def _build_transfer_matrix(m, overrides, bounds):
    m.keys_within({"kind", "num", "den", "inputs", "outputs"})
    nf, df = m.get("num", required=True), m.get("den", required=True)
    num = [[c.poly() for c in r.seq()] for r in nf.seq()]
    den = [[c.poly() for c in r.seq()] for r in df.seq()]
    try:
        sys = realize_columns(num, den)
    except ValueError as exc:
        m.fail(str(exc))
    ins = _names(m.get("inputs"), sys.n_inputs, "u")
    outs = _names(m.get("outputs"), sys.n_outputs, "y")
    return [ParamSystem(lambda K: sys, [], [], [], [], outs, ins)], ["default"], None


def _block(f):
    f.keys_within({"name", "kind", "params", "tunable", "labels"})
    name = f.get("name", required=True).string()
    kind = f.get("kind", required=True).string(tuple(_blocks.KIND_PARAMS))
    pf = f.get("params", required=True)
    params = {}
    for k, v in pf.items():
        params[k] = v.poly().tolist() if kind == "tf" else v.number()
    tf = f.get("tunable")
    tunable = () if tf.value is None else tuple(t.string() for t in tf.seq())
    lf = f.get("labels")
    labels = {} if lf.value is None else {k: v.string() for k, v in lf.items()}
    try:
        return _blocks.Block(name, kind, params, tunable, labels)
    except ValueError as exc:
        f.fail(str(exc))


def _connection(f):
    if isinstance(f.value, dict):
        f.keys_within({"from", "to", "gain"})
        return (f.get("from", required=True).string(), f.get("to", required=True).string(),
                f.get("gain", 1.0).number())
    items = f.seq()
    if len(items) not in (2, 3):
        f.fail("expected [source, destination] or [source, destination, gain]")
    return items[0].string(), items[1].string(), items[2].number() if len(items) == 3 else 1.0


def _build_blocks(m, overrides, bounds):
    m.keys_within({"kind", "library", "blocks", "connections", "inputs", "outputs"})
    parts = {}
    lf = m.get("library")
    if lf.value is not None:
        for prefix, pf in lf.items():
            pf.keys_within({"type", "args"})
            typ = pf.get("type", required=True).string(tuple(LIBRARY))
            af = pf.get("args")
            args = {} if af.value is None else {k: v.number() for k, v in af.items()}
            try:
                parts[str(prefix)] = LIBRARY[typ](**args)
            except TypeError as exc:
                af.fail(str(exc))
            except ValueError as exc:
                pf.fail(str(exc))
    bf = m.get("blocks")
    blist = [] if bf.value is None else [_block(b) for b in bf.seq()]
    cf = m.get("connections")
    conns = [] if cf.value is None else [_connection(c) for c in cf.seq()]
    inputs = [s.string() for s in m.get("inputs", required=True).seq()]
    of = m.get("outputs", required=True)
    outputs = {}
    for k, v in of.items():
        if isinstance(v.value, str):
            outputs[k] = v.value
        else:
            terms = []
            for t in v.seq():
                items = t.seq()
                if len(items) != 2:
                    t.fail("expected [source, gain]")
                terms.append((items[0].string(), items[1].number()))
            outputs[k] = terms
    try:
        diag = _blocks.compose(parts, blist, conns, inputs, outputs, bounds)
        sys = _blocks.assemble(diag)
    except ValueError as exc:
        m.fail(str(exc))
    return [sys], ["default"], None


def _inverter(f, overrides, bounds):
    f.keys_within({"name", "bus", "K_P", "K_Q", "T_f", "T_v", "omega_c", "V_c", "rating", "bounds",
                   "omega_set_limits", "V_set_limits"})
    name = f.get("name", required=True).string()
    vals = {}
    for p in _blocks.DROOP_PARAMS:
        vals[p] = overrides.get(f"{name}.{p}", f.get(p, required=True).number(positive=True))
    bf = f.get("bounds")
    local = {} if bf.value is None else {k: v.interval() for k, v in bf.items()}
    b = {"K_P": (0.005, 0.05), "K_Q": (0.005, 0.05), "T_f": (0.05, 1.0), "T_v": (0.05, 1.0)}
    b.update(local)
    for p in _blocks.DROOP_PARAMS:
        if f"{name}.{p}" in bounds:
            b[p] = bounds[f"{name}.{p}"]
    lim = {}
    for key in ("omega_set_limits", "V_set_limits"):
        lf = f.get(key)
        lim[key] = None if lf.value is None else lf.interval()
    try:
        inv = _blocks.DroopInverter(vals["K_P"], vals["K_Q"], vals["T_f"], vals["T_v"],
                                    omega_c=f.get("omega_c", 1.0).number(positive=True),
                                    V_c=f.get("V_c", 1.0).number(positive=True),
                                    rating=f.get("rating", 55e3).number(positive=True),
                                    name=name, bounds=b, **lim)
    except ValueError as exc:
        f.fail(str(exc))
    return f.get("bus", required=True).integer(lo=0), inv


def _generator(f, overrides, bounds):
    f.keys_within({"name", "bus", "H", "D", "P_m", "E", "governor"})
    name = f.get("name", required=True).string()
    gov = None
    gf = f.get("governor")
    if gf.value is not None:
        gf.keys_within({"type", "args"})
        typ = gf.get("type", "tgov1").string(("tgov1",))
        af = gf.get("args")
        args = {} if af.value is None else {k: v.number() for k, v in af.items()}
        for p in ("R_p",):
            if f"{name}.{p}" in overrides:
                args[p] = overrides[f"{name}.{p}"]
        gb = {p.split(".", 1)[1]: v for p, v in bounds.items() if p.startswith(name + ".")}
        try:
            gov = LIBRARY[typ](**args, bounds=gb or None)
        except (TypeError, ValueError) as exc:
            gf.fail(str(exc))
    try:
        gen = SwingGenerator(f.get("H", required=True).number(positive=True), f.get("D", 0.0).number(lo=0.0),
                             f.get("P_m", 0.0).number(), f.get("E", 1.0).number(positive=True),
                             governor=gov, name=name)
    except ValueError as exc:
        f.fail(str(exc))
    return f.get("bus", required=True).integer(lo=0), gen


def _loads(f):
    out = []
    for lf in f.seq():
        lf.keys_within({"name", "bus", "P", "Q", "disturbance", "channels"})
        chf = lf.get("channels")
        ch = ("P",) if chf.value is None else tuple(c.string(("P", "Q")) for c in chf.seq())
        bus = lf.get("bus", required=True).integer(lo=0)
        out.append(StaticProsumer(bus, lf.get("P", 0.0).number(), lf.get("Q", 0.0).number(),
                                  lf.get("disturbance", False).boolean(), ch,
                                  name=lf.get("name", f"load{bus}").string()))
    return out


def _build_microgrid(m, overrides, bounds):
    m.keys_within({"kind", "buses", "branches", "shunts", "inverters", "generators", "loads", "outputs",
                   "scenarios"})
    n = m.get("buses", required=True).integer(lo=1)
    branches = []
    for bf in m.get("branches", required=True).seq():
        bf.keys_within({"from", "to", "r", "x", "b"})
        i = bf.get("from", required=True).integer(lo=0)
        j = bf.get("to", required=True).integer(lo=0)
        if i >= n or j >= n:
            bf.fail(f"bus index out of range (network has {n} buses)")
        r = bf.get("r", 0.0).number(lo=0.0)
        x = bf.get("x", required=True).number()
        if r == 0 and x == 0:
            bf.get("x").fail("branch impedance must be nonzero")
        branches.append(Branch(i, j, r, x, bf.get("b", 0.0).number()))
    shunts = {}
    sf = m.get("shunts")
    if sf.value is not None:
        for s in sf.seq():
            s.keys_within({"bus", "g", "b"})
            shunts[s.get("bus", required=True).integer(lo=0)] = complex(s.get("g", 0.0).number(),
                                                                         s.get("b", 0.0).number())
    try:
        net = Network.from_branches(n, branches, shunts)
    except ValueError as exc:
        m.get("branches").fail(str(exc))
    prosumers = {}
    for kind, parse in (("inverters", _inverter), ("generators", _generator)):
        pf = m.get(kind)
        if pf.value is None:
            continue
        for f in pf.seq():
            bus, p = parse(f, overrides, bounds)
            if bus >= n:
                f.get("bus").fail(f"bus index out of range (network has {n} buses)")
            if bus in prosumers:
                f.get("bus").fail("bus already hosts a dynamic prosumer")
            prosumers[bus] = p
    if not prosumers:
        m.fail("at least one inverter or generator is required")
    of = m.get("outputs")
    outputs = ("omega",) if of.value is None else tuple(o.string(("omega", "P")) for o in of.seq())
    scen_f = m.get("scenarios")
    if scen_f.value is None:
        scen = [("default", m.get("loads", required=True))]
    else:
        if "loads" in m:
            m.get("loads").fail("give loads either at model level or per scenario")
        scen = []
        for sf in scen_f.seq():
            sf.keys_within({"name", "loads"})
            scen.append((sf.get("name", required=True).string(), sf.get("loads", required=True)))
    systems, daes, names = [], [], []
    for sname, lf in scen:
        loads = _loads(lf)
        try:
            dae = build_coupled_system(net, prosumers, loads, outputs=outputs)
            sys = reduced_system(dae)
        except ValueError as exc:
            lf.fail(str(exc))
        systems.append(sys)
        daes.append(dae)
        names.append(sname)
    return systems, names, daes
