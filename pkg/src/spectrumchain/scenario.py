"""Scenario files and deterministic world construction.

A scenario is a YAML document with ``schema: 1``. Unknown keys are errors,
reported with their line number. Randomised parts (node placement,
protection points, entrants) are drawn from a generator seeded by the run
seed, so one (scenario, seed) pair always builds the same world.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .consensus import ConsensusConfig, RadioEnvironment
from .ledger import GenesisConfig, SpectrumGrant
from .radio import (BandPlan, Location, PropagationModel, ProtectionPoint, RadioNode,
                    RadioParams, path_loss_db)
from .simnet import NetworkConfig
from .tiers import allocate_units, contribution_units

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line

    def __str__(self):
        msg = super().__str__()
        return f"line {self.line}: {msg}" if self.line else msg


# -- YAML with line numbers ---------------------------------------------------


class _Map(dict):
    line: int = 0
    key_lines: dict


class _Seq(list):
    line: int = 0


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    out = _Map()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for knode, vnode in node.value:
        key = loader.construct_object(knode, deep=True)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", knode.start_mark.line + 1)
        out[key] = loader.construct_object(vnode, deep=True)
        out.key_lines[key] = knode.start_mark.line + 1
    return out


def _construct_seq(loader, node):
    out = _Seq(loader.construct_object(v, deep=True) for v in node.value)
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)

_REQUIRED = object()


def _line(obj, key=None) -> int | None:
    if isinstance(obj, _Map) and key is not None and key in obj.key_lines:
        return obj.key_lines[key]
    return getattr(obj, "line", None)


def _fields(m: Any, spec: dict[str, Any], where: str) -> dict[str, Any]:
    if m is None:
        m = _Map()
        m.key_lines = {}
    if not isinstance(m, dict):
        raise ConfigError(f"{where} must be a mapping", _line(m))
    for key in m:
        if key not in spec:
            raise ConfigError(f"unknown key {key!r} in {where}", _line(m, key))
    out = {}
    for key, default in spec.items():
        if key in m:
            out[key] = m[key]
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r} in {where}", _line(m))
        else:
            out[key] = default
    return out


def _num(m, key, value, where, *, integer=False, positive=False, nonneg=False) -> Any:
    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if ok and integer:
        ok = isinstance(value, int)
    if ok and not math.isfinite(value):
        ok = False
    if ok and positive and not value > 0:
        ok = False
    if ok and nonneg and value < 0:
        ok = False
    if not ok:
        kind = "integer" if integer else "number"
        cond = " > 0" if positive else (" >= 0" if nonneg else "")
        raise ConfigError(f"{where}.{key} must be a finite {kind}{cond}, got {value!r}",
                          _line(m, key))
    return value


def _dbm(m, key, value, where) -> float:
    _num(m, key, value, where)
    if abs(value * 10 - round(value * 10)) > 1e-9:
        raise ConfigError(f"{where}.{key}: dBm values take at most one decimal place",
                          _line(m, key))
    return round(value * 10) / 10


# -- scenario model -----------------------------------------------------------


@dataclass
class NodeSpec:
    id: str
    location: Location
    radio: RadioParams
    tier: int
    balance: int = 0
    grant: bool = True


@dataclass
class ScriptTx:
    at: int
    kind: str
    seller_grant: str = ""
    buyer: str = ""
    location: Location | None = None
    price: int = 0
    donor: str = ""
    recipient: str = ""
    point: str = ""
    amount_mw: float = 0.0


@dataclass
class Workload:
    trades: int = 0
    interval: int = 5
    start: int = 1
    buyer_radius: float | None = None
    cross_only: bool = False
    price: int = 0
    script: list[ScriptTx] | None = None

    @property
    def size(self) -> int:
        return len(self.script) if self.script is not None else self.trades


@dataclass
class Generate:
    count: int
    tx_power: float = 20.0
    channels: tuple[int, ...] = (0,)
    balance: int = 100
    threshold: float = -80.0


@dataclass
class MarketSpec:
    valuations: list[tuple[str, float]]
    capacity: float
    alpha: float = 0.5
    step: float | None = None


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    tiers: int = 3
    band: BandPlan = field(default_factory=BandPlan)
    min_power: float = 0.0
    max_power: float = 30.0
    model: PropagationModel = field(default_factory=PropagationModel)
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    vote_timeout_set: bool = False
    area: tuple[float, float, float, float] = (0.0, 0.0, 2000.0, 2000.0)
    node_gen: Generate | None = None
    nodes: list[NodeSpec] | None = None
    point_gen: Generate | None = None
    points: list[ProtectionPoint] | None = None
    entrant_gen: Generate | None = None
    entrants: list[NodeSpec] | None = None
    budget_policy: str = "equal"
    tier_weights: dict[int, float] = field(default_factory=dict)
    chains: int = 1
    notaries: int = 3
    quorum: int = 2
    lock_timeout: int = 400
    workload: Workload = field(default_factory=Workload)
    market: MarketSpec | None = None

    def with_overrides(self, seed: int | None = None, chains: int | None = None) -> Scenario:
        from dataclasses import replace
        out = replace(self)
        if seed is not None:
            out.seed = seed
        if chains is not None:
            if chains < 1:
                raise ConfigError("chains must be >= 1")
            out.chains = chains
        out.network = replace(out.network, seed=out.seed)
        return out


def _parse_generate(m, where, *, threshold=False) -> Generate:
    spec = {"count": _REQUIRED}
    if threshold:
        spec["threshold_dbm"] = -80.0
    else:
        spec.update({"tx_power_dbm": 20.0, "channels": [0], "balance": 100})
    f = _fields(m, spec, where)
    g = Generate(count=_num(m, "count", f["count"], where, integer=True, nonneg=True))
    if threshold:
        g.threshold = _dbm(m, "threshold_dbm", f["threshold_dbm"], where)
    else:
        g.tx_power = _dbm(m, "tx_power_dbm", f["tx_power_dbm"], where)
        chans = f["channels"]
        if not isinstance(chans, list) or not chans:
            raise ConfigError(f"{where}.channels must be a non-empty list", _line(m, "channels"))
        g.channels = tuple(_num(m, "channels", c, where, integer=True, nonneg=True)
                           for c in chans)
        g.balance = _num(m, "balance", f["balance"], where, integer=True, nonneg=True)
    return g


def _parse_node_list(seq, where, band, tiers, limits, *, default_tier=None) -> list[NodeSpec]:
    if not isinstance(seq, list):
        raise ConfigError(f"{where} must be a list", _line(seq))
    out, seen = [], set()
    for item in seq:
        f = _fields(item, {"id": _REQUIRED, "x": _REQUIRED, "y": _REQUIRED,
                           "tx_power_dbm": 20.0, "channel": 0,
                           "tier": default_tier or 1, "balance": 0, "grant": True}, where)
        nid = str(f["id"])
        if nid in seen:
            raise ConfigError(f"duplicate id {nid!r} in {where}", _line(item, "id"))
        seen.add(nid)
        loc = Location(_num(item, "x", f["x"], where), _num(item, "y", f["y"], where))
        radio = RadioParams(_dbm(item, "tx_power_dbm", f["tx_power_dbm"], where),
                            _num(item, "channel", f["channel"], where, integer=True, nonneg=True))
        try:
            radio.check(band, *limits)
        except ValueError as exc:
            raise ConfigError(f"{where} {nid}: {exc}", _line(item)) from None
        tier = _num(item, "tier", f["tier"], where, integer=True, positive=True)
        if tier > tiers:
            raise ConfigError(f"{where} {nid}: tier {tier} exceeds tier count {tiers}",
                              _line(item, "tier"))
        out.append(NodeSpec(nid, loc, radio, tier,
                            _num(item, "balance", f["balance"], where, integer=True, nonneg=True),
                            bool(f["grant"])))
    return out


def _one_of(m, where, gen_key="generate", list_key="list"):
    f = _fields(m, {gen_key: None, list_key: None}, where)
    if (f[gen_key] is None) == (f[list_key] is None):
        raise ConfigError(f"{where} needs exactly one of {gen_key!r} or {list_key!r}", _line(m))
    return f


def parse_scenario(doc: Any) -> Scenario:
    top = _fields(doc, {
        "schema": _REQUIRED, "name": "scenario", "seed": 0, "tiers": 3, "band": None,
        "power_limits": None, "propagation": None, "consensus": None, "network": None,
        "area": [0.0, 0.0, 2000.0, 2000.0], "nodes": _REQUIRED, "protection_points": None,
        "budget": None, "regions": None, "notaries": None, "workload": None,
        "entrants": None, "market": None}, "scenario")
    if top["schema"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {top['schema']!r} (expected {SCHEMA_VERSION})",
                          _line(doc, "schema"))
    sc = Scenario(name=str(top["name"]),
                  seed=_num(doc, "seed", top["seed"], "scenario", integer=True, nonneg=True),
                  tiers=_num(doc, "tiers", top["tiers"], "scenario", integer=True, positive=True))

    b = _fields(top["band"], {"low_mhz": 3550.0, "high_mhz": 3700.0, "channels": 15}, "band")
    try:
        sc.band = BandPlan(b["low_mhz"], b["high_mhz"], b["channels"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"band: {exc}", _line(top["band"])) from None

    pl = _fields(top["power_limits"], {"min_dbm": 0.0, "max_dbm": 30.0}, "power_limits")
    sc.min_power = _dbm(top["power_limits"], "min_dbm", pl["min_dbm"], "power_limits")
    sc.max_power = _dbm(top["power_limits"], "max_dbm", pl["max_dbm"], "power_limits")

    m = top["propagation"]
    p = _fields(m, {"ref_loss_db": 40.0, "d0_m": 1.0, "exponent": 3.5, "min_distance_m": 1.0},
                "propagation")
    try:
        sc.model = PropagationModel(*(_num(m, k, p[k], "propagation")
                                      for k in ("ref_loss_db", "d0_m", "exponent",
                                                "min_distance_m")))
    except ValueError as exc:
        raise ConfigError(f"propagation: {exc}", _line(m)) from None

    m = top["network"]
    n = _fields(m, {"base_latency": 10, "jitter": 20, "loss_prob": 0.0}, "network")
    loss = _num(m, "loss_prob", n["loss_prob"], "network", nonneg=True)
    if loss >= 1:
        raise ConfigError("network.loss_prob must be < 1", _line(m, "loss_prob"))
    sc.network = NetworkConfig(_num(m, "base_latency", n["base_latency"], "network",
                                    integer=True, nonneg=True),
                               _num(m, "jitter", n["jitter"], "network", integer=True, nonneg=True),
                               float(loss), sc.seed)

    m = top["consensus"]
    c = _fields(m, {"sensitivity_dbm": -90.0, "tolerance_dbm": -60.0, "vote_timeout": None,
                    "block_interval": 20}, "consensus")
    timeout = c["vote_timeout"]
    sc.vote_timeout_set = timeout is not None
    if timeout is None:
        # a vote arriving exactly at the worst-case round trip still counts
        timeout = sc.network.round_trip + 1
    sens = c["sensitivity_dbm"]
    sens = -math.inf if sens in ("-inf", "-infinity") else _dbm(m, "sensitivity_dbm", sens,
                                                                   "consensus")
    sc.consensus = ConsensusConfig(
        sens, _dbm(m, "tolerance_dbm", c["tolerance_dbm"], "consensus"),
        vote_timeout=_num(m, "vote_timeout", timeout, "consensus", integer=True, positive=True),
        block_interval=_num(m, "block_interval", c["block_interval"], "consensus",
                            integer=True, positive=True))

    area = top["area"]
    if not isinstance(area, list) or len(area) != 4:
        raise ConfigError("area must be [xmin, ymin, xmax, ymax]", _line(doc, "area"))
    sc.area = tuple(float(_num(doc, "area", v, "scenario")) for v in area)
    if not (sc.area[2] > sc.area[0] and sc.area[3] > sc.area[1]):
        raise ConfigError("area must have positive extent", _line(doc, "area"))

    limits = (sc.min_power, sc.max_power)
    f = _one_of(top["nodes"], "nodes")
    if f["generate"] is not None:
        sc.node_gen = _parse_generate(f["generate"], "nodes.generate")
        _check_gen_radio(sc.node_gen, sc, f["generate"])
    else:
        sc.nodes = _parse_node_list(f["list"], "nodes.list", sc.band, sc.tiers, limits)

    if top["protection_points"] is not None:
        f = _one_of(top["protection_points"], "protection_points")
        if f["generate"] is not None:
            sc.point_gen = _parse_generate(f["generate"], "protection_points.generate",
                                           threshold=True)
        else:
            sc.points = []
            seen = set()
            for item in f["list"] or []:
                pf = _fields(item, {"id": _REQUIRED, "x": _REQUIRED, "y": _REQUIRED,
                                    "threshold_dbm": -80.0}, "protection_points.list")
                if str(pf["id"]) in seen:
                    raise ConfigError(f"duplicate protection point {pf['id']!r}", _line(item))
                seen.add(str(pf["id"]))
                sc.points.append(ProtectionPoint(
                    str(pf["id"]),
                    Location(_num(item, "x", pf["x"], "protection_points.list"),
                             _num(item, "y", pf["y"], "protection_points.list")),
                    _dbm(item, "threshold_dbm", pf["threshold_dbm"], "protection_points.list")))

    m = top["budget"]
    bf = _fields(m, {"policy": "equal", "tier_weights": None}, "budget")
    if bf["policy"] not in ("equal", "proportional"):
        raise ConfigError("budget.policy must be 'equal' or 'proportional'", _line(m, "policy"))
    sc.budget_policy = bf["policy"]
    if bf["tier_weights"] is not None:
        tw = bf["tier_weights"]
        if not isinstance(tw, dict):
            raise ConfigError("budget.tier_weights must map tier -> weight", _line(m, "tier_weights"))
        sc.tier_weights = {int(k): float(_num(tw, k, v, "budget.tier_weights", positive=True))
                           for k, v in tw.items()}
    if sc.budget_policy == "proportional":
        missing = [t for t in range(1, sc.tiers + 1) if t not in sc.tier_weights]
        if missing:
            raise ConfigError(f"budget.tier_weights missing tiers {missing}", _line(m))

    m = top["regions"]
    r = _fields(m, {"chains": 1, "lock_timeout": 400}, "regions")
    sc.chains = _num(m, "chains", r["chains"], "regions", integer=True, positive=True)
    sc.lock_timeout = _num(m, "lock_timeout", r["lock_timeout"], "regions", integer=True,
                           positive=True)

    m = top["notaries"]
    nf = _fields(m, {"count": 3, "quorum": 2}, "notaries")
    sc.notaries = _num(m, "count", nf["count"], "notaries", integer=True, positive=True)
    sc.quorum = _num(m, "quorum", nf["quorum"], "notaries", integer=True, positive=True)
    if sc.quorum > sc.notaries:
        raise ConfigError("notaries.quorum must not exceed notaries.count", _line(m, "quorum"))

    sc.workload = _parse_workload(top["workload"])

    if top["entrants"] is not None:
        f = _one_of(top["entrants"], "entrants")
        if f["generate"] is not None:
            sc.entrant_gen = _parse_generate(f["generate"], "entrants.generate")
            _check_gen_radio(sc.entrant_gen, sc, f["generate"])
        else:
            sc.entrants = _parse_node_list(f["list"], "entrants.list", sc.band, sc.tiers, limits,
                                           default_tier=sc.tiers)

    if top["market"] is not None:
        m = top["market"]
        mf = _fields(m, {"followers": _REQUIRED, "capacity": _REQUIRED, "alpha": 0.5,
                         "step": None}, "market")
        followers = []
        for item in mf["followers"] or []:
            ff = _fields(item, {"id": _REQUIRED, "valuation": _REQUIRED}, "market.followers")
            followers.append((str(ff["id"]), float(_num(item, "valuation", ff["valuation"],
                                                         "market.followers", positive=True))))
        alpha = _num(m, "alpha", mf["alpha"], "market", nonneg=True)
        if alpha > 1:
            raise ConfigError("market.alpha must be in [0, 1]", _line(m, "alpha"))
        step = mf["step"]
        if step is not None:
            step = float(_num(m, "step", step, "market", positive=True))
        sc.market = MarketSpec(followers, float(_num(m, "capacity", mf["capacity"], "market",
                                                      positive=True)), float(alpha), step)
    _check_references(sc, doc)
    return sc


def _check_gen_radio(g: Generate, sc: Scenario, m) -> None:
    try:
        for ch in g.channels:
            RadioParams(g.tx_power, ch).check(sc.band, sc.min_power, sc.max_power)
    except ValueError as exc:
        raise ConfigError(str(exc), _line(m)) from None


def _parse_workload(m) -> Workload:
    f = _fields(m, {"random": None, "script": None}, "workload")
    if f["random"] is not None and f["script"] is not None:
        raise ConfigError("workload takes either 'random' or 'script'", _line(m))
    if f["script"] is not None:
        out = []
        seq = f["script"]
        if not isinstance(seq, list):
            raise ConfigError("workload.script must be a list", _line(m, "script"))
        for item in seq:
            sf = _fields(item, {"at": _REQUIRED, "kind": "trade", "seller_grant": "", "buyer": "",
                                "x": None, "y": None, "price": 0, "donor": "", "recipient": "",
                                "point": "", "amount_mw": 0.0}, "workload.script")
            if sf["kind"] not in ("trade", "budget_adjust"):
                raise ConfigError(f"unknown transaction kind {sf['kind']!r}", _line(item, "kind"))
            loc = None
            if (sf["x"] is None) != (sf["y"] is None):
                raise ConfigError("give both x and y or neither", _line(item))
            if sf["x"] is not None:
                loc = Location(_num(item, "x", sf["x"], "workload.script"),
                               _num(item, "y", sf["y"], "workload.script"))
            out.append(ScriptTx(
                _num(item, "at", sf["at"], "workload.script", integer=True, nonneg=True),
                sf["kind"], str(sf["seller_grant"]), str(sf["buyer"]), loc,
                _num(item, "price", sf["price"], "workload.script", integer=True, nonneg=True),
                str(sf["donor"]), str(sf["recipient"]), str(sf["point"]),
                float(_num(item, "amount_mw", sf["amount_mw"], "workload.script", nonneg=True))))
            out[-1].line = _line(item)
        return Workload(script=out)
    r = f["random"]
    rf = _fields(r, {"trades": 0, "interval": 5, "start": 1, "buyer_radius_m": None,
                     "cross_only": False, "price": 0}, "workload.random")
    radius = rf["buyer_radius_m"]
    if radius is not None:
        radius = float(_num(r, "buyer_radius_m", radius, "workload.random", positive=True))
    return Workload(
        trades=_num(r, "trades", rf["trades"], "workload.random", integer=True, nonneg=True),
        interval=_num(r, "interval", rf["interval"], "workload.random", integer=True,
                      positive=True),
        start=_num(r, "start", rf["start"], "workload.random", integer=True, nonneg=True),
        buyer_radius=radius, cross_only=bool(rf["cross_only"]),
        price=_num(r, "price", rf["price"], "workload.random", integer=True, nonneg=True))


def _check_references(sc: Scenario, doc) -> None:
    """Scripted transactions must name genesis grants, nodes and points that
    exist. Only checkable when those are listed rather than generated."""
    script = sc.workload.script
    if not script:
        return
    node_ids = {n.id for n in sc.nodes} if sc.nodes is not None else None
    grant_ids = ({grant_id_for(n.id) for n in sc.nodes if n.grant}
                 if sc.nodes is not None else None)
    point_ids = {p.id for p in sc.points} if sc.points is not None else None
    for tx in script:
        line = getattr(tx, "line", None)
        if tx.kind == "trade":
            if grant_ids is not None and tx.seller_grant not in grant_ids:
                raise ConfigError(f"script trade names unknown grant {tx.seller_grant!r}", line)
            if node_ids is not None and tx.buyer not in node_ids:
                raise ConfigError(f"script trade names unknown buyer {tx.buyer!r}", line)
        else:
            for g in (tx.donor, tx.recipient):
                if grant_ids is not None and g not in grant_ids:
                    raise ConfigError(f"script budget_adjust names unknown grant {g!r}", line)
            if point_ids is not None and tx.point not in point_ids:
                raise ConfigError(f"script budget_adjust names unknown point {tx.point!r}", line)
            if not tx.amount_mw > 0:
                raise ConfigError("budget_adjust needs amount_mw > 0", line)


def load_scenario(path) -> Scenario:
    text = Path(path).read_text(encoding="utf-8")
    return loads_scenario(text)


def loads_scenario(text: str) -> Scenario:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except ConfigError:
        raise
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"malformed YAML: {exc.problem}", line) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from None
    return parse_scenario(doc)


# -- world --------------------------------------------------------------------


def grant_id_for(node_id: str) -> str:
    return f"g-{node_id}"


@dataclass
class World:
    scenario: Scenario
    seed: int
    nodes: dict[str, RadioNode]
    tiers: dict[str, int]
    grants: list[SpectrumGrant]
    points: list[ProtectionPoint]
    entrants: list[SpectrumGrant]
    balances: dict[str, int]

    @property
    def env(self) -> RadioEnvironment:
        return RadioEnvironment(dict(self.nodes), self.scenario.model)

    def genesis_config(self, grants=None, points=None, balances=None) -> GenesisConfig:
        return GenesisConfig(list(self.grants if grants is None else grants),
                             dict(self.balances if balances is None else balances),
                             list(self.points if points is None else points))


def _uniform_loc(rng: random.Random, area) -> Location:
    return Location(rng.uniform(area[0], area[2]), rng.uniform(area[1], area[3]))


def build_world(sc: Scenario, seed: int | None = None) -> World:
    seed = sc.seed if seed is None else seed
    rng = random.Random(f"world:{seed}")
    if sc.nodes is not None:
        specs = list(sc.nodes)
    else:
        g = sc.node_gen
        specs = []
        for i in range(g.count):
            loc = _uniform_loc(rng, sc.area)
            ch = rng.choice(g.channels)
            tier = rng.randint(1, sc.tiers)
            specs.append(NodeSpec(f"n{i:03d}", loc, RadioParams(g.tx_power, ch), tier, g.balance))
    if sc.points is not None:
        points = list(sc.points)
    elif sc.point_gen is not None:
        points = [ProtectionPoint(f"pp{i}", _uniform_loc(rng, sc.area), sc.point_gen.threshold)
                  for i in range(sc.point_gen.count)]
    else:
        points = []
    if sc.entrants is not None:
        entrant_specs = list(sc.entrants)
    elif sc.entrant_gen is not None:
        g = sc.entrant_gen
        entrant_specs = [NodeSpec(f"e{i:03d}", _uniform_loc(rng, sc.area),
                                  RadioParams(g.tx_power, rng.choice(g.channels)), sc.tiers)
                         for i in range(g.count)]
    else:
        entrant_specs = []

    holders = [s for s in specs if s.grant]
    devices = [(grant_id_for(s.id), s.tier) for s in holders] + \
              [(f"x-{s.id}", s.tier) for s in entrant_specs]
    budgets: dict[str, dict[str, int]] = {d: {} for d, _ in devices}
    if devices:
        if sc.budget_policy == "equal":
            weights = [1.0] * len(devices)
        else:
            weights = [sc.tier_weights[t] for _, t in devices]
        for pp in points:
            for (d, _), units in zip(devices, allocate_units(pp.threshold_dbm, weights)):
                budgets[d][pp.id] = units

    grants = []
    for s in holders:
        gid = grant_id_for(s.id)
        radio = _fit_power(s, budgets[gid], points, sc)
        if radio is None:
            continue
        grants.append(SpectrumGrant(gid, s.id, s.location, radio, s.tier, budgets[gid]))
    entrants = [SpectrumGrant(f"x-{s.id}", s.id, s.location, s.radio, s.tier,
                              budgets[f"x-{s.id}"]) for s in entrant_specs]
    return World(sc, seed,
                 {s.id: RadioNode(s.id, s.location, s.radio) for s in specs},
                 {s.id: s.tier for s in specs}, grants, points, entrants,
                 {s.id: s.balance for s in specs if s.balance})


def _fit_power(spec: NodeSpec, budget: dict[str, int], points, sc: Scenario) -> RadioParams | None:
    """Highest power (0.1 dB steps, at most the requested power) whose
    contribution at every protection point fits the grant's allowance.
    ``None`` when even the minimum power does not fit."""
    power = spec.radio.tx_power
    for pp in points:
        allowance = budget.get(pp.id, 0)
        if allowance <= 0:
            return None
        pl = path_loss_db(sc.model, spec.location.distance(pp.location))
        cap = 10.0 * math.log10(allowance * 1e-21) + pl
        power = min(power, math.floor(cap * 10) / 10)
    while power >= sc.min_power:
        radio = RadioParams(power, spec.radio.channel)
        probe = SpectrumGrant("probe", spec.id, spec.location, radio, spec.tier, budget)
        if all(contribution_units(probe, pp, sc.model) <= budget.get(pp.id, 0) for pp in points):
            return radio
        power = round(power * 10 - 1) / 10
    return None
