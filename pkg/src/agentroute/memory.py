"""Heterogeneous workflow and history graphs with shared role hubs.

A workflow graph holds one episode's query/response tree plus a fixed set of
(role, model) hub nodes. The history graph accumulates consolidated episodes
across the run and shares the same hub objects by identity, so hub statistics
written during consolidation are visible from both graphs. Both graph kinds
freeze into plain-array encoder inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

FORMAT_VERSION = 1

STATUS_PENDING = "pending"
STATUS_RESOLVED = "resolved"
STATUS_SUMMARY_PENDING = "summary-pending"

EDGE_QUERY_HUB = "query-hub"
EDGE_RESPONSE_HUB = "response-hub"
EDGE_QUERY_RESPONSE = "query-response"
EDGE_QUERY_PARENT = "query-parent"


@dataclass
class QueryNode:
    id: str
    embedding: np.ndarray
    depth: int
    parent: str | None
    family: int
    status: str = STATUS_PENDING
    is_summary: bool = False
    width_hint: int = 1
    answer_id: str | None = None


@dataclass
class ResponseNode:
    id: str
    embedding: np.ndarray
    produced_by: tuple[int, int]  # (role index, model index)
    tokens_in: int
    tokens_out: int
    quality: float


@dataclass
class RoleHubNode:
    role_index: int
    model_index: int
    role_name: str
    model_name: str
    role_embedding: np.ndarray  # joint role+model text embedding, dim d_hub - 2
    utility_ema: float = 0.0
    cost_ema: float = 0.0

    def features(self) -> np.ndarray:
        return np.concatenate([self.role_embedding, [self.utility_ema, self.cost_ema]])


class HubSet:
    """All K*R role hubs, ordered by (role index, model index)."""

    def __init__(self, hubs: list[RoleHubNode], n_roles: int, n_models: int):
        if len(hubs) != n_roles * n_models:
            raise ValueError("hub set must contain exactly R*K hubs")
        for i, h in enumerate(hubs):
            want = (i // n_models, i % n_models)
            if (h.role_index, h.model_index) != want:
                raise ValueError("hubs must be ordered by (role, model)")
        self.hubs = hubs
        self.n_roles = n_roles
        self.n_models = n_models

    def __len__(self) -> int:
        return len(self.hubs)

    def index(self, role_index: int, model_index: int) -> int:
        if not (0 <= role_index < self.n_roles and 0 <= model_index < self.n_models):
            raise ValueError(f"hub index out of range: ({role_index}, {model_index})")
        return role_index * self.n_models + model_index

    def get(self, role_index: int, model_index: int) -> RoleHubNode:
        return self.hubs[self.index(role_index, model_index)]

    def features(self) -> np.ndarray:
        return np.stack([h.features() for h in self.hubs])


@dataclass
class EncoderInput:
    """Immutable array view of one graph, ready for message passing.

    Global node order is [hubs, queries, responses]; edges are undirected and
    stored as aligned (src, dst) index arrays with both directions present.
    """

    hub_feats: np.ndarray
    query_feats: np.ndarray
    response_feats: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    n_hubs: int
    n_queries: int
    n_responses: int

    @property
    def n_nodes(self) -> int:
        return self.n_hubs + self.n_queries + self.n_responses


class HeteroGraph:
    """Typed node/edge store for one workflow episode or the shared history."""

    def __init__(self, kind: str, hubs: HubSet, capacity: int | None = None):
        if kind not in ("workflow", "history"):
            raise ValueError(f"unknown graph kind: {kind!r}")
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive when set")
        self.kind = kind
        self.hubs = hubs
        self.capacity = capacity
        self.queries: dict[str, QueryNode] = {}
        self.responses: dict[str, ResponseNode] = {}
        self.edges: dict[str, list[tuple]] = {
            EDGE_QUERY_HUB: [],
            EDGE_RESPONSE_HUB: [],
            EDGE_QUERY_RESPONSE: [],
            EDGE_QUERY_PARENT: [],  # entries: (child, parent, action or None)
        }
        # History bookkeeping: nodes tagged by consolidation episode, FIFO order.
        self.episode_of: dict[str, str] = {}
        self.episode_order: list[str] = []
        self._episode_counter = 0

    # -- construction helpers ------------------------------------------------

    def _connect_query_to_hubs(self, qid: str) -> None:
        for i in range(len(self.hubs)):
            self.edges[EDGE_QUERY_HUB].append((qid, i))

    def add_query(self, q: QueryNode, episode: str | None = None) -> None:
        if q.id in self.queries:
            raise ValueError(f"duplicate query id: {q.id}")
        self.queries[q.id] = q
        self._connect_query_to_hubs(q.id)
        if q.parent is not None:
            self.edges[EDGE_QUERY_PARENT].append((q.id, q.parent, None))
        if self.kind == "history" and episode is not None:
            self.episode_of[q.id] = episode

    def add_response(self, query_id: str, r: ResponseNode, answers: bool,
                     episode: str | None = None) -> None:
        if query_id not in self.queries:
            raise ValueError(f"unknown query id: {query_id}")
        if r.id in self.responses:
            raise ValueError(f"duplicate response id: {r.id}")
        role_idx, model_idx = r.produced_by
        hub_idx = self.hubs.index(role_idx, model_idx)  # validates range
        q = self.queries[query_id]
        if answers and q.answer_id is not None:
            raise ValueError(f"query {query_id} already has an answer")
        self.responses[r.id] = r
        self.edges[EDGE_QUERY_RESPONSE].append((query_id, r.id))
        self.edges[EDGE_RESPONSE_HUB].append((r.id, hub_idx))
        if answers:
            q.answer_id = r.id
            q.status = STATUS_RESOLVED
        if self.kind == "history" and episode is not None:
            self.episode_of[r.id] = episode

    def children_of(self, query_id: str) -> list[QueryNode]:
        out = [self.queries[c] for c, p, _ in self.edges[EDGE_QUERY_PARENT]
               if p == query_id and c in self.queries]
        return out

    def responses_of(self, query_id: str) -> list[ResponseNode]:
        return [self.responses[r] for q, r in self.edges[EDGE_QUERY_RESPONSE]
                if q == query_id and r in self.responses]

    @property
    def interaction_count(self) -> int:
        return len(self.queries) + len(self.responses)

    def new_episode_tag(self) -> str:
        """Mint the next episode tag and register it in eviction order."""
        if self.kind != "history":
            raise ValueError("episode tags only apply to history graphs")
        tag = f"ep{self._episode_counter}"
        self._episode_counter += 1
        self.episode_order.append(tag)
        return tag

    # -- eviction --------------------------------------------------------------

    def _drop_nodes(self, doomed: set[str]) -> None:
        for nid in doomed:
            self.queries.pop(nid, None)
            self.responses.pop(nid, None)
            self.episode_of.pop(nid, None)
        self.edges[EDGE_QUERY_HUB] = [e for e in self.edges[EDGE_QUERY_HUB]
                                      if e[0] not in doomed]
        self.edges[EDGE_RESPONSE_HUB] = [e for e in self.edges[EDGE_RESPONSE_HUB]
                                         if e[0] not in doomed]
        self.edges[EDGE_QUERY_RESPONSE] = [e for e in self.edges[EDGE_QUERY_RESPONSE]
                                           if e[0] not in doomed and e[1] not in doomed]
        self.edges[EDGE_QUERY_PARENT] = [e for e in self.edges[EDGE_QUERY_PARENT]
                                         if e[0] not in doomed and e[1] not in doomed]

    def enforce_capacity(self) -> None:
        """Evict oldest episodes until the interaction budget is met."""
        self._evict_to_capacity()

    def _evict_to_capacity(self) -> None:
        if self.capacity is None:
            return
        # Whole oldest episodes go first; a single over-large episode is then
        # truncated by dropping its oldest nodes.
        while self.interaction_count > self.capacity and len(self.episode_order) > 1:
            ep = self.episode_order.pop(0)
            doomed = {nid for nid, e in self.episode_of.items() if e == ep}
            self._drop_nodes(doomed)
        if self.interaction_count > self.capacity:
            excess = self.interaction_count - self.capacity
            all_ids = self._insertion_order()
            doomed = set(all_ids[:excess])
            self._drop_nodes(doomed)

    def _insertion_order(self) -> list[str]:
        # Queries and responses interleaved in true insertion order is not
        # tracked separately; approximate with query order then response order
        # inside each episode, which matches how episodes are consolidated.
        by_episode: dict[str, list[str]] = {}
        for nid in self.queries:
            ep = self.episode_of.get(nid)
            if ep is not None:
                by_episode.setdefault(ep, []).append(nid)
        for nid in self.responses:
            ep = self.episode_of.get(nid)
            if ep is not None:
                by_episode.setdefault(ep, []).append(nid)
        out: list[str] = []
        for ep in self.episode_order:
            out.extend(by_episode.get(ep, []))
        return out

    # -- freezing ----------------------------------------------------------------

    def freeze(self) -> EncoderInput:
        """Copy the graph into aligned arrays for the encoder."""
        qids = list(self.queries)
        rids = list(self.responses)
        qpos = {qid: len(self.hubs) + i for i, qid in enumerate(qids)}
        rpos = {rid: len(self.hubs) + len(qids) + i for i, rid in enumerate(rids)}

        hub_feats = self.hubs.features()
        if qids:
            query_feats = np.stack([self.queries[q].embedding for q in qids])
        else:
            query_feats = np.zeros((0, 0))
        if rids:
            response_feats = np.stack([self.responses[r].embedding for r in rids])
        else:
            response_feats = np.zeros((0, 0))

        src: list[int] = []
        dst: list[int] = []

        def link(a: int, b: int) -> None:
            src.append(a)
            dst.append(b)
            src.append(b)
            dst.append(a)

        for qid, hub_idx in self.edges[EDGE_QUERY_HUB]:
            if qid in qpos:
                link(qpos[qid], hub_idx)
        for rid, hub_idx in self.edges[EDGE_RESPONSE_HUB]:
            if rid in rpos:
                link(rpos[rid], hub_idx)
        for qid, rid in self.edges[EDGE_QUERY_RESPONSE]:
            if qid in qpos and rid in rpos:
                link(qpos[qid], rpos[rid])
        for child, parent, _ in self.edges[EDGE_QUERY_PARENT]:
            if child in qpos and parent in qpos:
                link(qpos[child], qpos[parent])

        return EncoderInput(
            hub_feats=hub_feats,
            query_feats=query_feats,
            response_feats=response_feats,
            edge_src=np.asarray(src, dtype=np.int64),
            edge_dst=np.asarray(dst, dtype=np.int64),
            n_hubs=len(self.hubs),
            n_queries=len(qids),
            n_responses=len(rids),
        )


# -- module-level operations ---------------------------------------------------


def new_workflow(root: QueryNode, hubs: HubSet) -> HeteroGraph:
    """Fresh per-episode graph: the root query plus every role hub."""
    if len(hubs) == 0:
        raise ValueError("hub set is empty")
    if root.depth != 0 or root.parent is not None:
        raise ValueError("workflow root must have depth 0 and no parent")
    g = HeteroGraph("workflow", hubs)
    g.add_query(root)
    return g


def attach_subqueries(g: HeteroGraph, parent_id: str, children: list[QueryNode],
                      width_limit: int | None = None) -> list[str]:
    """Attach decomposition children under a pending parent, order preserved."""
    if parent_id not in g.queries:
        raise ValueError(f"unknown parent query: {parent_id}")
    parent = g.queries[parent_id]
    if parent.status != STATUS_PENDING:
        raise ValueError(f"parent {parent_id} is not pending")
    if not children:
        raise ValueError("attach_subqueries with an empty child list")
    existing = len(g.children_of(parent_id))
    if width_limit is not None and existing + len(children) > width_limit:
        raise ValueError("child count exceeds the configured width")
    ids = []
    for c in children:
        if c.depth != parent.depth + 1:
            raise ValueError("child depth must be parent depth + 1")
        if c.parent != parent_id:
            raise ValueError("child parent pointer mismatch")
        g.add_query(c)
        ids.append(c.id)
    return ids


def attach_response(g: HeteroGraph, query_id: str, r: ResponseNode, answers: bool) -> None:
    """Attach a response; when it answers a pending query the query resolves.

    Non-answer responses may attach to already-resolved queries (e.g. a
    summary hung on the root); answering twice is an error.
    """
    if answers and query_id in g.queries and g.queries[query_id].status == STATUS_RESOLVED:
        raise ValueError(f"query {query_id} is already resolved")
    g.add_response(query_id, r, answers=answers)


def add_summary_query(g: HeteroGraph, root_id: str, summary: QueryNode) -> None:
    """Attach the synthesis query created by a summarizer under the root."""
    if root_id not in g.queries:
        raise ValueError(f"unknown root query: {root_id}")
    if not summary.is_summary:
        raise ValueError("summary query must be flagged is_summary")
    g.add_query(summary)


def update_hub_stats(hub: RoleHubNode, observed_utility: float, observed_cost: float,
                     decay: float = 0.9) -> None:
    """EMA update: ema <- decay * ema + (1 - decay) * observed."""
    if not (0.0 <= decay < 1.0):
        raise ValueError("decay must lie in [0, 1)")
    if not (0.0 <= observed_utility <= 1.0):
        raise ValueError("observed utility must lie in [0, 1]")
    if observed_cost < 0.0:
        raise ValueError("observed cost must be nonnegative")
    hub.utility_ema = decay * hub.utility_ema + (1.0 - decay) * observed_utility
    hub.cost_ema = decay * hub.cost_ema + (1.0 - decay) * observed_cost


def consolidate(workflow: HeteroGraph, history: HeteroGraph) -> str:
    """Copy a finished episode's nodes into history, then evict to capacity.

    Node ids are prefixed with a fresh episode tag, so consolidating the same
    workflow twice grows history twice (no dedup). Returns the episode tag.
    """
    if workflow.kind != "workflow" or history.kind != "history":
        raise ValueError("consolidate copies a workflow into a history graph")
    if workflow.hubs is not history.hubs:
        raise ValueError("graphs must share the same hub set")
    tag = history.new_episode_tag()

    def rename(nid: str) -> str:
        return f"{tag}/{nid}"

    for q in workflow.queries.values():
        clone = replace(q, id=rename(q.id),
                        parent=None if q.parent is None else rename(q.parent),
                        embedding=q.embedding.copy(),
                        answer_id=None if q.answer_id is None else rename(q.answer_id))
        history.add_query(clone, episode=tag)
    for qid, rid in workflow.edges[EDGE_QUERY_RESPONSE]:
        r = workflow.responses[rid]
        clone = replace(r, id=rename(r.id), embedding=r.embedding.copy())
        # statuses and answer pointers were already cloned on the query side
        history.add_response(rename(qid), clone, answers=False, episode=tag)
    history._evict_to_capacity()
    return tag


def clone_workflow(g: HeteroGraph) -> HeteroGraph:
    """Independent copy of a workflow graph sharing the same hub objects.

    Used by the enumeration oracle to branch mid-episode without disturbing
    the live environment.
    """
    if g.kind != "workflow":
        raise ValueError("clone_workflow copies workflow graphs only")
    out = HeteroGraph("workflow", g.hubs, capacity=g.capacity)
    for q in g.queries.values():
        out.queries[q.id] = replace(q, embedding=q.embedding)
    for r in g.responses.values():
        out.responses[r.id] = replace(r, embedding=r.embedding)
    out.edges = {k: list(v) for k, v in g.edges.items()}
    return out


def copy_hub_stats(src: HubSet, dst: HubSet) -> None:
    """Carry running hub statistics over to a larger or equal hub set."""
    if dst.n_roles < src.n_roles or dst.n_models < src.n_models:
        raise ValueError("destination hub set must cover the source")
    for r in range(src.n_roles):
        for m in range(src.n_models):
            dst.get(r, m).utility_ema = src.get(r, m).utility_ema
            dst.get(r, m).cost_ema = src.get(r, m).cost_ema


def rebase_history(old: HeteroGraph, new_hubs: HubSet,
                   capacity: int | None = None) -> HeteroGraph:
    """Rebuild a history graph over an extended hub set.

    Node content, parent/answer structure, and episode bookkeeping carry over
    unchanged; hub edges are regenerated because hub indices shift when
    models or roles are added. Running hub statistics are copied for every
    (role, model) pair the old set knew about.
    """
    if old.kind != "history":
        raise ValueError("rebase_history rebuilds history graphs only")
    copy_hub_stats(old.hubs, new_hubs)
    out = HeteroGraph("history", new_hubs,
                      capacity=old.capacity if capacity is None else capacity)
    out.queries = {q.id: replace(q, embedding=q.embedding.copy())
                   for q in old.queries.values()}
    out.responses = {r.id: replace(r, embedding=r.embedding.copy())
                     for r in old.responses.values()}
    out.edges[EDGE_QUERY_PARENT] = list(old.edges[EDGE_QUERY_PARENT])
    out.edges[EDGE_QUERY_RESPONSE] = list(old.edges[EDGE_QUERY_RESPONSE])
    for nid in old._insertion_order():
        if nid in out.queries:
            out._connect_query_to_hubs(nid)
        else:
            r = out.responses[nid]
            hub_idx = new_hubs.index(*r.produced_by)
            out.edges[EDGE_RESPONSE_HUB].append((nid, hub_idx))
    out.episode_of = dict(old.episode_of)
    out.episode_order = list(old.episode_order)
    out._episode_counter = old._episode_counter
    return out


# -- persistence -----------------------------------------------------------------


def _arr(x: np.ndarray) -> list:
    return np.asarray(x, dtype=np.float64).reshape(-1).tolist()


def serialize(g: HeteroGraph) -> bytes:
    blob = {
        "format_version": FORMAT_VERSION,
        "kind": g.kind,
        "capacity": g.capacity,
        "n_roles": g.hubs.n_roles,
        "n_models": g.hubs.n_models,
        "episode_counter": g._episode_counter,
        "episode_order": list(g.episode_order),
        "hubs": [
            {
                "role_index": h.role_index,
                "model_index": h.model_index,
                "role_name": h.role_name,
                "model_name": h.model_name,
                "role_embedding": _arr(h.role_embedding),
                "utility_ema": h.utility_ema,
                "cost_ema": h.cost_ema,
            }
            for h in g.hubs.hubs
        ],
        "queries": [
            {
                "id": q.id,
                "embedding": _arr(q.embedding),
                "depth": q.depth,
                "parent": q.parent,
                "family": q.family,
                "status": q.status,
                "is_summary": q.is_summary,
                "width_hint": q.width_hint,
                "answer_id": q.answer_id,
                "episode": g.episode_of.get(q.id),
            }
            for q in g.queries.values()
        ],
        "responses": [
            {
                "id": r.id,
                "embedding": _arr(r.embedding),
                "produced_by": list(r.produced_by),
                "tokens_in": r.tokens_in,
                "tokens_out": r.tokens_out,
                "quality": r.quality,
                "episode": g.episode_of.get(r.id),
            }
            for r in g.responses.values()
        ],
        "edges": {
            EDGE_QUERY_HUB: [list(e) for e in g.edges[EDGE_QUERY_HUB]],
            EDGE_RESPONSE_HUB: [list(e) for e in g.edges[EDGE_RESPONSE_HUB]],
            EDGE_QUERY_RESPONSE: [list(e) for e in g.edges[EDGE_QUERY_RESPONSE]],
            EDGE_QUERY_PARENT: [list(e) for e in g.edges[EDGE_QUERY_PARENT]],
        },
    }
    return json.dumps(blob, sort_keys=True).encode("utf-8")


def deserialize(data: bytes) -> HeteroGraph:
    try:
        blob = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"truncated or corrupt graph stream: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported graph format version: {blob.get('format_version')!r}")
    hubs = HubSet(
        [
            RoleHubNode(
                role_index=h["role_index"],
                model_index=h["model_index"],
                role_name=h["role_name"],
                model_name=h["model_name"],
                role_embedding=np.asarray(h["role_embedding"], dtype=np.float64),
                utility_ema=h["utility_ema"],
                cost_ema=h["cost_ema"],
            )
            for h in blob["hubs"]
        ],
        n_roles=blob["n_roles"],
        n_models=blob["n_models"],
    )
    g = HeteroGraph(blob["kind"], hubs, capacity=blob["capacity"])
    g._episode_counter = blob["episode_counter"]
    g.episode_order = list(blob["episode_order"])
    for q in blob["queries"]:
        node = QueryNode(
            id=q["id"],
            embedding=np.asarray(q["embedding"], dtype=np.float64),
            depth=q["depth"],
            parent=q["parent"],
            family=q["family"],
            status=q["status"],
            is_summary=q["is_summary"],
            width_hint=q["width_hint"],
            answer_id=q["answer_id"],
        )
        g.queries[node.id] = node
        if q.get("episode") is not None:
            g.episode_of[node.id] = q["episode"]
    for r in blob["responses"]:
        node = ResponseNode(
            id=r["id"],
            embedding=np.asarray(r["embedding"], dtype=np.float64),
            produced_by=tuple(r["produced_by"]),
            tokens_in=r["tokens_in"],
            tokens_out=r["tokens_out"],
            quality=r["quality"],
        )
        g.responses[node.id] = node
        if r.get("episode") is not None:
            g.episode_of[node.id] = r["episode"]
    g.edges = {
        EDGE_QUERY_HUB: [tuple(e) for e in blob["edges"][EDGE_QUERY_HUB]],
        EDGE_RESPONSE_HUB: [tuple(e) for e in blob["edges"][EDGE_RESPONSE_HUB]],
        EDGE_QUERY_RESPONSE: [tuple(e) for e in blob["edges"][EDGE_QUERY_RESPONSE]],
        EDGE_QUERY_PARENT: [tuple(e) for e in blob["edges"][EDGE_QUERY_PARENT]],
    }
    return g


def graphs_equal(a: HeteroGraph, b: HeteroGraph) -> bool:
    """Structural equality: nodes, edges, hub statistics, insertion order."""
    if a.kind != b.kind or a.capacity != b.capacity:
        return False
    if list(a.queries) != list(b.queries) or list(a.responses) != list(b.responses):
        return False
    if a.episode_order != b.episode_order:
        return False
    for ha, hb in zip(a.hubs.hubs, b.hubs.hubs):
        if (ha.role_index, ha.model_index, ha.role_name, ha.model_name) != \
           (hb.role_index, hb.model_index, hb.role_name, hb.model_name):
            return False
        if ha.utility_ema != hb.utility_ema or ha.cost_ema != hb.cost_ema:
            return False
        if not np.array_equal(ha.role_embedding, hb.role_embedding):
            return False
    for qa, qb in zip(a.queries.values(), b.queries.values()):
        if (qa.id, qa.depth, qa.parent, qa.family, qa.status, qa.is_summary,
                qa.width_hint, qa.answer_id) != \
           (qb.id, qb.depth, qb.parent, qb.family, qb.status, qb.is_summary,
                qb.width_hint, qb.answer_id):
            return False
        if not np.array_equal(qa.embedding, qb.embedding):
            return False
    for ra, rb in zip(a.responses.values(), b.responses.values()):
        if (ra.id, ra.produced_by, ra.tokens_in, ra.tokens_out, ra.quality) != \
           (rb.id, rb.produced_by, rb.tokens_in, rb.tokens_out, rb.quality):
            return False
        if not np.array_equal(ra.embedding, rb.embedding):
            return False
    return a.edges == b.edges
