"""Synthetic startup ecosystems with a planted fund–startup compatibility model.

Each startup belongs to a sector (visible through its tags and description)
and to a hidden community (visible only through who invests in it). Each
fund prefers one sector and one community. The planted probability is

    p(f, c) = sigmoid(u_f . v_c / temperature)

optionally blended with label-flip noise. With ``structural_signal`` off the
community term is dropped, so the investment graph carries no information
beyond what the features already reveal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import StartupRecord
from .graph import InvestmentEvent, NodeId, fund, startup

TAG_NAMES = ("fintech", "saas", "biotech", "ai", "energy", "mobility", "retail", "edtech",
             "healthcare", "robotics", "agritech", "security", "gaming", "logistics", "media", "space")
LOCATIONS = ("tokyo", "osaka", "fukuoka", "kyoto", "nagoya", "sapporo")
GENERIC_WORDS = ("platform", "service", "solution", "customers", "team", "growth", "data",
                 "market", "product", "cloud", "users", "network")


@dataclass(frozen=True)
class WorldConfig:
    n_funds: int = 500
    n_startups: int = 2000
    n_sectors: int = 4
    n_communities: int = 4
    years: tuple[int, int] = (2014, 2024)
    activity_skew: float = 1.5
    mean_fund_degree: float = 4.5
    noise: float = 0.0
    temperature: float = 0.25
    preference_strength: float = 2.0
    margin: float = 0.5
    structural_signal: bool = True
    missing_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("n_funds", "n_startups", "n_sectors", "n_communities"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError(f"noise must lie in [0, 1], got {self.noise}")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError(f"missing_rate must lie in [0, 1), got {self.missing_rate}")
        if self.years[0] > self.years[1]:
            raise ValueError(f"empty year range {self.years}")
        if self.temperature <= 0 or self.activity_skew <= 0 or self.mean_fund_degree < 1:
            raise ValueError("temperature and activity_skew must be positive, mean_fund_degree >= 1")


@dataclass
class PlantedWorld:
    config: WorldConfig
    sector_prototypes: np.ndarray
    community_prototypes: np.ndarray
    funds: list[NodeId]
    startups: list[NodeId]
    fund_sector: np.ndarray
    fund_community: np.ndarray
    fund_vectors: np.ndarray
    fund_activity: np.ndarray
    startup_sector: np.ndarray
    startup_community: np.ndarray
    startup_vectors: np.ndarray
    founded: np.ndarray
    descriptions: list[str | None]
    tags: list[frozenset[str]]
    locations: list[str | None]
    employees_base: np.ndarray
    _fund_index: dict[NodeId, int] = field(default_factory=dict, repr=False)
    _startup_index: dict[NodeId, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._fund_index = {f: i for i, f in enumerate(self.funds)}
        self._startup_index = {s: i for i, s in enumerate(self.startups)}

    def fund_index(self, node: NodeId) -> int:
        try:
            return self._fund_index[node]
        except KeyError:
            raise KeyError(f"unknown fund {node}") from None

    def startup_index(self, node: NodeId) -> int:
        try:
            return self._startup_index[node]
        except KeyError:
            raise KeyError(f"unknown startup {node}") from None


def simplex_prototypes(k: int) -> np.ndarray:
    """``k`` unit vectors with pairwise dot product -1/(k-1)."""
    if k == 1:
        return np.ones((1, 1))
    protos = np.eye(k) - 1.0 / k
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def _balanced(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % k)


def _sector_vocabulary(k: int) -> list[str]:
    return [f"{TAG_NAMES[k % len(TAG_NAMES)]}{j}" for j in range(12)]


def _sector_tag(k: int) -> str:
    base = TAG_NAMES[k % len(TAG_NAMES)]
    return base if k < len(TAG_NAMES) else f"{base}-{k // len(TAG_NAMES)}"


def generate_world(config: WorldConfig) -> PlantedWorld:
    rng = np.random.default_rng([config.seed, 1])
    s_protos = simplex_prototypes(config.n_sectors)
    g_protos = simplex_prototypes(config.n_communities)
    a = config.preference_strength
    b = a if config.structural_signal else 0.0
    bias = a + b - config.margin

    fund_sector = _balanced(config.n_funds, config.n_sectors, rng)
    fund_community = _balanced(config.n_funds, config.n_communities, rng)
    startup_sector = _balanced(config.n_startups, config.n_sectors, rng)
    startup_community = _balanced(config.n_startups, config.n_communities, rng)

    fund_vectors = np.hstack([a * s_protos[fund_sector], b * g_protos[fund_community],
                              np.full((config.n_funds, 1), -bias)])
    startup_vectors = np.hstack([s_protos[startup_sector], g_protos[startup_community],
                                 np.ones((config.n_startups, 1))])

    # Pareto(activity_skew) weights give power-law fund degrees
    activity = (1.0 - rng.random(config.n_funds)) ** (-1.0 / config.activity_skew)

    y0, y1 = config.years
    founded = rng.integers(y0 - 4, y1 + 1, size=config.n_startups)

    all_tags = [_sector_tag(k) for k in range(max(config.n_sectors, 4))]
    descriptions, tags, locations = [], [], []
    for i in range(config.n_startups):
        k = int(startup_sector[i])
        own = {_sector_tag(k)} if rng.random() < 0.95 else set()
        if rng.random() < 0.2:
            own.add(all_tags[int(rng.integers(len(all_tags)))])
        tags.append(frozenset(own))
        if rng.random() < config.missing_rate:
            descriptions.append(None)
        else:
            vocab = _sector_vocabulary(k)
            words = [vocab[j] for j in rng.integers(len(vocab), size=8)]
            words += [GENERIC_WORDS[j] for j in rng.integers(len(GENERIC_WORDS), size=5)]
            rng.shuffle(words)
            descriptions.append(" ".join(words))
        loc = LOCATIONS[min(int(rng.geometric(0.45)) - 1, len(LOCATIONS) - 1)]
        locations.append(None if rng.random() < config.missing_rate else loc)
    employees_base = rng.lognormal(1.5, 0.5, size=config.n_startups)

    return PlantedWorld(
        config=config, sector_prototypes=s_protos, community_prototypes=g_protos,
        funds=[fund(f"F{i:05d}") for i in range(config.n_funds)],
        startups=[startup(f"S{i:05d}") for i in range(config.n_startups)],
        fund_sector=fund_sector, fund_community=fund_community, fund_vectors=fund_vectors,
        fund_activity=activity, startup_sector=startup_sector, startup_community=startup_community,
        startup_vectors=startup_vectors, founded=founded, descriptions=descriptions, tags=tags,
        locations=locations, employees_base=employees_base,
    )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def _blend(prob, noise: float):
    return (1.0 - noise) * prob + noise * (1.0 - prob)


def ground_truth_prob(world: PlantedWorld, fund_id: NodeId, startup_id: NodeId) -> float:
    u = world.fund_vectors[world.fund_index(fund_id)]
    v = world.startup_vectors[world.startup_index(startup_id)]
    return float(_blend(_sigmoid(u @ v / world.config.temperature), world.config.noise))


def compatibility_matrix(world: PlantedWorld) -> np.ndarray:
    """Planted probabilities for every (fund, startup), shape (n_funds, n_startups)."""
    logits = world.fund_vectors @ world.startup_vectors.T / world.config.temperature
    return _blend(_sigmoid(logits), world.config.noise)


def generate_events(world: PlantedWorld, config: WorldConfig | None = None) -> list[InvestmentEvent]:
    """Year-by-year investments; each fund picks targets with probability ∝ planted compatibility."""
    config = config or world.config
    rng = np.random.default_rng([config.seed, 2])
    n_f, n_s = len(world.funds), len(world.startups)
    y0, y1 = config.years
    years = np.arange(y0, y1 + 1)

    total = int(round(config.mean_fund_degree * n_f))
    weights = world.fund_activity / world.fund_activity.sum()
    degrees = 1 + rng.multinomial(max(total - n_f, 0), weights)
    degrees = np.minimum(degrees, n_s)

    compat = compatibility_matrix(world)
    slots = []
    for f in range(n_f):
        for y in rng.choice(years, size=degrees[f]):
            slots.append((int(y), f, int(rng.integers(1, 13))))
    slots.sort()

    taken = np.zeros((n_f, n_s), dtype=bool)
    events = []
    for year, f, month in slots:
        mask = (world.founded <= year) & ~taken[f]
        if not mask.any():
            continue
        p = np.where(mask, compat[f], 0.0)
        if p.sum() <= 0:
            p = mask.astype(np.float64)
        s = int(rng.choice(n_s, p=p / p.sum()))
        taken[f, s] = True
        events.append(InvestmentEvent(world.funds[f], world.startups[s], year, month,
                                      "vc" if rng.random() < 0.8 else "corporate",
                                      float(np.round(rng.lognormal(4.0, 1.0), 2))))
    return events


def _stage_for_age(age: int) -> str:
    if age < 2:
        return "seed"
    if age < 4:
        return "series a"
    if age < 7:
        return "series b"
    return "series c"


def startup_records(world: PlantedWorld, events: list[InvestmentEvent]) -> list[StartupRecord]:
    """Feature records: yearly age/employees/funding with gaps, static text and categories."""
    config = world.config
    rng = np.random.default_rng([config.seed, 3])
    raised: dict[NodeId, dict[int, float]] = {}
    for ev in events:
        by_year = raised.setdefault(ev.startup, {})
        by_year[ev.year] = by_year.get(ev.year, 0.0) + (ev.amount or 0.0)

    y1 = config.years[1]
    records = []
    for i, sid in enumerate(world.startups):
        founded = int(world.founded[i])
        cumulative = 0.0
        numericals = {}
        for year in range(founded, y1 + 1):
            cumulative += raised.get(sid, {}).get(year, 0.0)
            age = year - founded
            values = {
                "age": float(age),
                "employees": float(np.round(world.employees_base[i] * 1.35 ** age)),
                "cumulative_funding": float(np.round(cumulative, 2)),
            }
            values = {k: v for k, v in values.items() if rng.random() >= config.missing_rate}
            if values:
                numericals[year] = values
        stage = None if rng.random() < config.missing_rate else _stage_for_age(y1 - founded)
        records.append(StartupRecord(sid, numericals, world.descriptions[i], world.tags[i],
                                     stage, world.locations[i]))
    return records
