"""Deterministic LLM-pool simulator and synthetic benchmark generator.

No network calls anywhere: model behavior is a fixed skill table plus hashed
noise streams, so any (seed, query, action) triple replays bit-identically.
Query embeddings reserve coordinate 0 for a difficulty scalar and coordinate 1
for a draft-role marker; family content lives in the remaining coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .memory import QueryNode, ResponseNode, RoleHubNode, HubSet
from .streams import det_rng

# -- roles -------------------------------------------------------------------


@dataclass(frozen=True)
class RoleSpec:
    name: str
    description: str
    tokens_in_mu: float   # lognormal location for prompt tokens
    tokens_out_mu: float  # lognormal location for completion tokens


# Descriptions are this package's own one-line summaries; they only feed the
# hashed text embeddings and the CLI inspect output.
BASE_ROLES: list[RoleSpec] = [
    RoleSpec("planner", "splits a query into smaller sub-queries", math.log(150.0), math.log(90.0)),
    RoleSpec("executor", "answers the current query directly", math.log(240.0), math.log(180.0)),
    RoleSpec("summarizer", "fuses resolved sub-answers into one synthesis", math.log(380.0), math.log(260.0)),
]

EXTRA_ROLES: list[RoleSpec] = [
    RoleSpec("thinker", "drafts intermediate analysis before execution", math.log(240.0), math.log(220.0)),
    RoleSpec("verifier", "checks an existing draft and repairs its answer", math.log(200.0), math.log(120.0)),
]

ALL_ROLES: list[RoleSpec] = BASE_ROLES + EXTRA_ROLES

PLANNER, EXECUTOR, SUMMARIZER, THINKER, VERIFIER = range(5)

TOKEN_SIGMA = 0.25

# -- model catalog -------------------------------------------------------------


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    scale: str        # small | medium | large
    price_in: float   # dollars per 1M prompt tokens
    price_out: float  # dollars per 1M completion tokens


DEFAULT_CATALOG: list[CatalogEntry] = [
    CatalogEntry("Qwen2.5 (7B)", "small", 0.20, 0.20),
    CatalogEntry("CodeGemma (7B)", "small", 0.20, 0.20),
    CatalogEntry("Mistral (7B)", "small", 0.20, 0.20),
    CatalogEntry("LLaMA-3.1 (8B)", "small", 0.20, 0.20),
    CatalogEntry("LLaMA-3 ChatQA (8B)", "small", 0.20, 0.20),
    CatalogEntry("Gemma-2 (9B)", "small", 0.20, 0.20),
    CatalogEntry("Mistral-Nemo (12B)", "small", 0.30, 0.30),
    CatalogEntry("LLaMA-3.3 Nemotron Super (49B)", "medium", 0.90, 0.90),
    CatalogEntry("LLaMA-3.1 Nemotron (51B)", "medium", 0.90, 0.90),
    CatalogEntry("Mixtral (8x7B)", "medium", 0.60, 0.60),
    CatalogEntry("LLaMA-3 ChatQA (70B)", "medium", 0.90, 0.90),
    CatalogEntry("Mixtral (8x22B)", "large", 1.20, 1.20),
]


def load_catalog(path: str) -> list[CatalogEntry]:
    with open(path) as fh:
        rows = json.load(fh)
    return [CatalogEntry(r["name"], r["scale"], float(r["price_in"]), float(r["price_out"]))
            for r in rows]


def save_catalog(path: str, catalog: list[CatalogEntry]) -> None:
    rows = [{"name": c.name, "scale": c.scale, "price_in": c.price_in,
             "price_out": c.price_out} for c in catalog]
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)


@dataclass
class LLMProfile:
    name: str
    scale: str
    price_in: float
    price_out: float
    skill: np.ndarray      # (n_roles_total, n_families) in [0, 1]
    embedding: np.ndarray  # (d_hub - 2,)


@dataclass
class ActionOutcome:
    response_embedding: np.ndarray
    quality: float
    tokens_in: int
    tokens_out: int


@dataclass(frozen=True)
class BenchmarkSpec:
    kind: str                      # separable | memory-dependent | uniform
    families: tuple[str, ...]
    queries_per_family: int
    width_profile: tuple[int, ...]
    seed: int


KINDS = ("separable", "memory-dependent", "uniform")

EVAL_INDEX_OFFSET = 100_000


def _hashed_text_embedding(text: str, dim: int) -> np.ndarray:
    # norm sqrt(dim): coordinates stay O(1) so learned projections see a
    # usable signal scale at any embedding width
    v = det_rng("text-embed", text).normal(size=dim)
    return v / np.linalg.norm(v) * np.sqrt(dim)


def cost_of(outcome: ActionOutcome, profile: LLMProfile) -> float:
    """Dollar cost of one invocation, linear in both token counts."""
    return (outcome.tokens_in / 1e6) * profile.price_in + \
           (outcome.tokens_out / 1e6) * profile.price_out


class Benchmark:
    """A frozen task distribution plus the simulated model pool serving it."""

    def __init__(self, spec: BenchmarkSpec, profiles: list[LLMProfile],
                 family_dirs: np.ndarray, d_q: int, roles: list[RoleSpec],
                 difficulty: tuple[float, float], noise_sigma: float,
                 margin: float, noise: bool = True):
        self.spec = spec
        self.profiles = profiles
        self.family_dirs = family_dirs
        self.d_q = d_q
        self.roles = roles
        self.difficulty = difficulty
        self.noise_sigma = noise_sigma
        self.margin = margin
        self.noise = noise

    # -- basic accessors ------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.spec.seed

    @property
    def n_models(self) -> int:
        return len(self.profiles)

    @property
    def n_families(self) -> int:
        return len(self.spec.families)

    @property
    def d_hub(self) -> int:
        # hub features are the role/model embedding plus the two running stats
        return self.profiles[0].embedding.shape[0] + 2

    def role_index(self, name: str) -> int:
        for i, r in enumerate(self.roles):
            if r.name == name:
                return i
        raise ValueError(f"unknown role: {name!r}")

    def with_noise(self, flag: bool) -> "Benchmark":
        clone = Benchmark(self.spec, self.profiles, self.family_dirs, self.d_q,
                          self.roles, self.difficulty, self.noise_sigma,
                          self.margin, noise=flag)
        return clone

    def extended_with(self, extra: list[LLMProfile]) -> "Benchmark":
        return Benchmark(self.spec, self.profiles + list(extra), self.family_dirs,
                         self.d_q, self.roles, self.difficulty, self.noise_sigma,
                         self.margin, noise=self.noise)

    # -- queries ---------------------------------------------------------------

    def generate_query(self, family: int, index: int) -> QueryNode:
        if not (0 <= family < self.n_families):
            raise ValueError(f"unknown family index: {family}")
        if index < 0:
            raise ValueError("query index must be nonnegative")
        rng = det_rng(self.seed, "query", family, index)
        lo, hi = self.difficulty
        diff = lo + (hi - lo) * rng.uniform()
        emb = np.zeros(self.d_q)
        emb[0] = diff
        content = self.family_dirs[family] + 0.30 * self._content_noise(rng)
        emb += content
        profile = self.spec.width_profile
        hint = profile[index % len(profile)] if profile else 1
        return QueryNode(id=f"f{family}q{index}", embedding=emb, depth=0,
                         parent=None, family=family, width_hint=int(hint))

    def _content_noise(self, rng: np.random.Generator) -> np.ndarray:
        v = rng.normal(size=self.d_q)
        v[0] = 0.0
        v[1] = 0.0
        return v / np.linalg.norm(v) * np.sqrt(self.d_q)

    def train_query(self, i: int) -> QueryNode:
        return self.generate_query(i % self.n_families, i // self.n_families)

    def eval_query(self, i: int) -> QueryNode:
        return self.generate_query(i % self.n_families,
                                   EVAL_INDEX_OFFSET + i // self.n_families)

    @staticmethod
    def difficulty_of(query: QueryNode) -> float:
        return float(np.clip(query.embedding[0], 0.0, 1.0))

    @staticmethod
    def content_of(embedding: np.ndarray) -> np.ndarray:
        c = embedding.copy()
        c[0] = 0.0
        c[1] = 0.0
        return c

    # -- model behavior ----------------------------------------------------------

    def _context_bonus(self, context: list[ResponseNode]) -> float:
        thinker_idx = None
        for i, r in enumerate(self.roles):
            if r.name == "thinker":
                thinker_idx = i
        plain = sum(1 for c in context if c.produced_by[0] != thinker_idx)
        has_thinker = any(c.produced_by[0] == thinker_idx for c in context)
        return min(0.15, 0.05 * plain) + (0.15 if has_thinker else 0.0)

    def invoke(self, model_index: int, role_index: int, query: QueryNode,
               context: list[ResponseNode]) -> ActionOutcome:
        """Simulate one model call; bitwise deterministic per (seed, inputs)."""
        if not (0 <= model_index < self.n_models):
            raise ValueError(f"unknown model index: {model_index}")
        if not (0 <= role_index < len(self.roles)):
            raise ValueError(f"unknown role index: {role_index}")
        profile = self.profiles[model_index]
        role = self.roles[role_index]
        skill = float(profile.skill[role_index, query.family])
        bonus = self._context_bonus(context)
        diff = self.difficulty_of(query)
        noise_term = 0.0
        if self.noise:
            noise_rng = det_rng(self.seed, "noise", query.id, role.name, profile.name)
            noise_term = noise_rng.uniform(-self.noise_sigma, self.noise_sigma)
        quality = float(np.clip(skill + bonus - 0.5 * diff + noise_term, 0.0, 1.0))

        if role.name == "verifier" and context:
            # A verify pass returns the best draft, never below the
            # verifier's own level.
            quality = max(quality, max(c.quality for c in context), skill)
        if role.name == "executor":
            verifier_idx = self.role_index("verifier") if any(
                r.name == "verifier" for r in self.roles) else None
            if verifier_idx is not None:
                floors = [c.quality for c in context if c.produced_by[0] == verifier_idx]
                if floors:
                    quality = max(quality, max(floors))

        tok_rng = det_rng(self.seed, "tokens", query.id, role.name, profile.name)
        t_in = 1 + int(round(math.exp(role.tokens_in_mu + TOKEN_SIGMA * tok_rng.normal())))
        t_out = 1 + int(round(math.exp(role.tokens_out_mu + TOKEN_SIGMA * tok_rng.normal())))

        emb_rng = det_rng(self.seed, "resp", query.id, role.name, profile.name)
        noise_vec = emb_rng.normal(size=self.d_q)
        noise_vec[0] = 0.0
        noise_vec[1] = 0.0
        emb = (2.0 * quality - 1.0) * self.content_of(query.embedding) + 0.15 * noise_vec
        emb[1] = 1.0 if role.name == "thinker" else 0.0

        return ActionOutcome(response_embedding=emb, quality=quality,
                             tokens_in=t_in, tokens_out=t_out)

    def decompose(self, query: QueryNode, width: int) -> list[QueryNode]:
        """Split a query into exactly `width` easier children."""
        if width < 1:
            raise ValueError("decompose width must be >= 1")
        rng = det_rng(self.seed, "decomp", query.id)
        parent_diff = self.difficulty_of(query)
        parent_content = self.content_of(query.embedding)
        out = []
        for i in range(width):
            factor = 0.45 + 0.10 * rng.uniform()
            child_diff = parent_diff * factor
            perturb = rng.normal(size=self.d_q)
            perturb[0] = 0.0
            perturb[1] = 0.0
            perturb *= np.sqrt(self.d_q) / np.linalg.norm(perturb)
            emb = parent_content + 0.25 * perturb
            emb[0] = child_diff
            out.append(QueryNode(
                id=f"{query.id}.{i}", embedding=emb, depth=query.depth + 1,
                parent=query.id, family=query.family,
                width_hint=max(1, query.width_hint - 1)))
        return out

    def summary_query(self, root: QueryNode, child_answers: list[ResponseNode]) -> QueryNode:
        """Synthesis query whose resolution finishes a summarized episode."""
        emb = self.content_of(root.embedding)
        if child_answers:
            mean_ans = np.mean([self.content_of(c.embedding) for c in child_answers], axis=0)
            emb = emb + 0.2 * mean_ans
        emb[0] = 0.3 * self.difficulty_of(root)
        return QueryNode(id=f"{root.id}.s", embedding=emb, depth=root.depth + 1,
                         parent=root.id, family=root.family, is_summary=True,
                         width_hint=1)

    # -- hubs -----------------------------------------------------------------

    def role_text_embedding(self, role_index: int) -> np.ndarray:
        role = self.roles[role_index]
        return _hashed_text_embedding(f"role: {role.name}: {role.description}",
                                      self.profiles[0].embedding.shape[0])

    def hub_embedding(self, role_index: int, model_index: int) -> np.ndarray:
        return 0.5 * (self.role_text_embedding(role_index)
                      + self.profiles[model_index].embedding)

    def build_hubs(self, n_roles: int) -> HubSet:
        """Fresh zero-statistics hub set over the first n_roles roles."""
        hubs = []
        for r in range(n_roles):
            for m in range(self.n_models):
                hubs.append(RoleHubNode(
                    role_index=r, model_index=m,
                    role_name=self.roles[r].name,
                    model_name=self.profiles[m].name,
                    role_embedding=self.hub_embedding(r, m)))
        return HubSet(hubs, n_roles=n_roles, n_models=self.n_models)


def final_utility(answer_quality: float, sub_qualities: list[float],
                  summarized: bool, mode: str = "continuous") -> float:
    """Task utility of a finished episode.

    The final answer quality stands alone unless a summarizer was used, in
    which case it is averaged with the mean resolved sub-answer quality.
    Binary mode thresholds at 0.5.
    """
    if mode not in ("continuous", "binary"):
        raise ValueError(f"unknown utility mode: {mode!r}")
    u = float(answer_quality)
    if summarized:
        if not sub_qualities:
            raise ValueError("summarized episode without resolved sub-answers")
        u = 0.5 * (u + float(np.mean(sub_qualities)))
    if mode == "binary":
        return 1.0 if u >= 0.5 else 0.0
    return u


# -- pool construction -----------------------------------------------------------


def _skill_anchor_dirs(seed: int, n_families: int, dim: int) -> np.ndarray:
    dirs = np.stack([det_rng(seed, "skill-anchor", f).normal(size=dim)
                     for f in range(n_families)])
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * np.sqrt(dim)


def skill_correlated_embedding(seed: int, skill: np.ndarray, name: str,
                               n_families: int, dim: int,
                               executor_row: int = EXECUTOR) -> np.ndarray:
    """Profile embedding whose direction encodes the executor skill vector."""
    anchors = _skill_anchor_dirs(seed, n_families, dim)
    base = skill[executor_row] @ anchors
    jitter = det_rng(seed, "embed-jitter", name).normal(size=dim)
    return base + 0.15 * jitter * np.sqrt(dim) / np.linalg.norm(jitter)


def _build_skills(kind: str, seed: int, n_models: int, n_families: int,
                  margin: float, overrides: dict[str, float] | None) -> list[np.ndarray]:
    """Per-model (n_roles_total, n_families) skill tables for one benchmark kind."""
    n_roles = len(ALL_ROLES)
    tables = []
    for m in range(n_models):
        t = np.zeros((n_roles, n_families))
        for f in range(n_families):
            if kind == "separable":
                # top level 0.75 leaves headroom for stronger held-out probes
                dominant = f % n_models == m
                if dominant:
                    base = 0.75
                else:
                    u = det_rng(seed, "skill-jitter", m, f).uniform()
                    base = 0.75 - margin - 0.05 * u
                for r in (PLANNER, EXECUTOR, SUMMARIZER):
                    t[r, f] = base
            elif kind == "memory-dependent":
                specialist = f % n_models == m
                t[EXECUTOR, f] = 0.9 if specialist else 0.5
                t[PLANNER, f] = 0.6
                t[SUMMARIZER, f] = 0.65
            elif kind == "uniform":
                for r in (PLANNER, EXECUTOR, SUMMARIZER):
                    t[r, f] = 0.7
            else:
                raise ValueError(f"unknown benchmark kind: {kind!r}")
        t[THINKER] = np.clip(t[EXECUTOR] - 0.1, 0.0, 1.0)
        t[VERIFIER] = t[EXECUTOR].copy()
        if overrides:
            for role_name, val in overrides.items():
                idx = [i for i, r in enumerate(ALL_ROLES) if r.name == role_name]
                if not idx:
                    raise ValueError(f"unknown role in skill override: {role_name!r}")
                t[idx[0], :] = val
        tables.append(np.clip(t, 0.0, 1.0))
    return tables


def make_benchmark(spec: BenchmarkSpec, k_models: int = 4,
                   d_q: int = 64, d_hub: int = 64,
                   catalog: list[CatalogEntry] | None = None,
                   difficulty: tuple[float, float] = (0.1, 0.5),
                   noise_sigma: float = 0.05, margin: float = 0.2,
                   skill_overrides: dict[str, float] | None = None) -> Benchmark:
    """Build the benchmark instance and its simulated model pool.

    Models are drawn evenly across the catalog so the pool spans the price
    range. Separable and uniform pools get skill-correlated embeddings;
    memory-dependent pools mask skills from the embeddings entirely.
    """
    if spec.kind not in KINDS:
        raise ValueError(f"unknown benchmark kind: {spec.kind!r}")
    if k_models < 1:
        raise ValueError("pool needs at least one model")
    if spec.queries_per_family < 1:
        raise ValueError("queries_per_family must be positive")
    if not spec.families:
        raise ValueError("at least one family is required")
    if not (0.0 < difficulty[0] <= difficulty[1] <= 1.0):
        raise ValueError("difficulty range must satisfy 0 < lo <= hi <= 1")
    catalog = catalog if catalog is not None else DEFAULT_CATALOG
    if k_models > len(catalog):
        raise ValueError("pool size exceeds the catalog")

    if k_models == 1:
        picks = [0]
    else:
        picks = [round(j * (len(catalog) - 1) / (k_models - 1)) for j in range(k_models)]
    entries = [catalog[i] for i in picks]

    n_families = len(spec.families)
    skills = _build_skills(spec.kind, spec.seed, k_models, n_families, margin,
                           skill_overrides)
    d_embed = d_hub - 2
    profiles = []
    if spec.kind == "memory-dependent":
        # one shared embedding and one flat price for the whole pool: the
        # models are then interchangeable to any fixed weight matrix, and
        # the specialist assignment is identifiable only through the
        # accumulated interaction record
        shared = det_rng(spec.seed, "model-embed-shared").normal(size=d_embed)
        shared *= np.sqrt(d_embed) / np.linalg.norm(shared)
    for m, entry in enumerate(entries):
        if spec.kind == "memory-dependent":
            emb = shared.copy()
            price_in = price_out = 0.4
        else:
            emb = skill_correlated_embedding(spec.seed, skills[m], entry.name,
                                             n_families, d_embed)
            price_in, price_out = entry.price_in, entry.price_out
        profiles.append(LLMProfile(name=entry.name, scale=entry.scale,
                                   price_in=price_in, price_out=price_out,
                                   skill=skills[m], embedding=emb))

    fam_dirs = np.zeros((n_families, d_q))
    for f in range(n_families):
        v = det_rng(spec.seed, "family-dir", f).normal(size=d_q)
        v[0] = 0.0
        v[1] = 0.0
        fam_dirs[f] = v / np.linalg.norm(v) * np.sqrt(d_q)

    return Benchmark(spec, profiles, fam_dirs, d_q, list(ALL_ROLES),
                     difficulty, noise_sigma, margin)


def make_unseen_profile(bench: Benchmark, name: str, level: float,
                        price_in: float = 0.6, price_out: float = 0.6,
                        scale: str = "medium",
                        strong_family: int | None = None,
                        off_level: float | None = None) -> LLMProfile:
    """A held-out model whose embedding is correlated with its skill vector.

    With strong_family set, the probe is a specialist: `level` on that family
    and `off_level` elsewhere (defaulting to an unremarkable mid level), so
    its embedding differs from an incumbent specialist's along exactly one
    anchor. Otherwise the skill is flat at `level` across families.
    """
    n_families = bench.n_families
    if strong_family is not None and not (0 <= strong_family < n_families):
        raise ValueError(f"strong_family out of range: {strong_family}")
    t = np.zeros((len(ALL_ROLES), n_families))
    for r in (PLANNER, EXECUTOR, SUMMARIZER):
        if strong_family is None:
            t[r, :] = level
        else:
            t[r, :] = off_level if off_level is not None else 0.52
            t[r, strong_family] = level
    t[THINKER] = np.clip(t[EXECUTOR] - 0.1, 0.0, 1.0)
    t[VERIFIER] = t[EXECUTOR].copy()
    t = np.clip(t, 0.0, 1.0)
    emb = skill_correlated_embedding(bench.seed, t, name, n_families,
                                     bench.profiles[0].embedding.shape[0])
    return LLMProfile(name=name, scale=scale, price_in=price_in,
                      price_out=price_out, skill=t, embedding=emb)
