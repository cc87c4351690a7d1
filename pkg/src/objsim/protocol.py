"""Group-based evaluation: retrieval over paired-object groups, plus oddity.

Four group protocols are built from a catalog, per category pair:

* illumination: one group per pose; both instances under all 4 lightings (8).
* pose: one group per lighting; both instances under all 24 poses (48).
* wild: one group; both instances across the 4 scenes (8).
* all: one group with every image of the pair (200).

Every member serves once as the query against the rest; candidates are ranked
by score (descending, ties by ascending member index) and scored by top-1
accuracy and mean average precision.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from .catalog import LIGHTINGS, N_POSES, N_SCENES, Catalog, ImageRef, Studio, Wild
from .features import Embedding, cosine

logger = logging.getLogger(__name__)


class Protocol(enum.Enum):
    ILLUMINATION = "illumination"
    POSE = "pose"
    WILD = "wild"
    ALL = "all"


GROUP_SIZE = {
    Protocol.ILLUMINATION: 2 * len(LIGHTINGS),
    Protocol.POSE: 2 * N_POSES,
    Protocol.WILD: 2 * N_SCENES,
    Protocol.ALL: 2 * (len(LIGHTINGS) * N_POSES + N_SCENES),
}

GROUPS_PER_PAIR = {
    Protocol.ILLUMINATION: N_POSES,
    Protocol.POSE: len(LIGHTINGS),
    Protocol.WILD: 1,
    Protocol.ALL: 1,
}


@dataclass(frozen=True)
class EvalGroup:
    """One retrieval/clustering trial: labeled members of a category pair."""

    protocol: Protocol
    category: str
    key: str
    members: tuple[tuple[ImageRef, int], ...]  # (image, identity label)

    def __post_init__(self) -> None:
        assert len(self.members) == GROUP_SIZE[self.protocol], (
            f"{self.protocol.value} group must have {GROUP_SIZE[self.protocol]} members, "
            f"got {len(self.members)}"
        )
        labels = {identity for _, identity in self.members}
        assert len(labels) == 2, f"group must hold exactly 2 identities, got {labels}"

    @property
    def refs(self) -> tuple[ImageRef, ...]:
        return tuple(ref for ref, _ in self.members)

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(identity for _, identity in self.members)


def _pair_index(catalog: Catalog, category: str) -> dict | None:
    """Records of the category's first two instances, keyed by condition."""
    instances = catalog.instances(category)
    if len(instances) < 2:
        return None
    pair = instances[:2]
    index = {
        (r.instance, r.condition): r
        for r in catalog.records
        if r.category == category and r.instance in pair
    }
    return {"pair": pair, "by_condition": index}


def _collect(index: dict, conditions: Sequence) -> list[tuple[ImageRef, int]] | None:
    members = []
    for instance in index["pair"]:
        for cond in conditions:
            ref = index["by_condition"].get((instance, cond))
            if ref is None:
                return None
            members.append((ref, instance))
    return members


def build_groups(catalog: Catalog, protocol: Protocol) -> list[EvalGroup]:
    """Build every complete group for the protocol; incomplete pairs are skipped.

    A pair is included only if all of its groups for the protocol are complete,
    otherwise it is skipped with a warning.
    """
    studio_conditions = [
        Studio(lighting, pose) for lighting in LIGHTINGS for pose in range(N_POSES)
    ]
    wild_conditions = [Wild(scene) for scene in range(N_SCENES)]
    groups: list[EvalGroup] = []
    for category in sorted(catalog.categories):
        index = _pair_index(catalog, category)
        if index is None:
            logger.warning("category %s has fewer than 2 instances: skipped", category)
            continue
        candidate: list[EvalGroup] = []
        complete = True
        if protocol is Protocol.ILLUMINATION:
            for pose in range(N_POSES):
                members = _collect(index, [Studio(li, pose) for li in LIGHTINGS])
                if members is None:
                    complete = False
                    break
                candidate.append(
                    EvalGroup(protocol, category, f"pose_{pose:02d}", tuple(members))
                )
        elif protocol is Protocol.POSE:
            for lighting in LIGHTINGS:
                members = _collect(index, [Studio(lighting, p) for p in range(N_POSES)])
                if members is None:
                    complete = False
                    break
                candidate.append(
                    EvalGroup(protocol, category, f"lighting_{lighting}", tuple(members))
                )
        elif protocol is Protocol.WILD:
            members = _collect(index, wild_conditions)
            if members is None:
                complete = False
            else:
                candidate.append(EvalGroup(protocol, category, "wild", tuple(members)))
        elif protocol is Protocol.ALL:
            members = _collect(index, studio_conditions + wild_conditions)
            if members is None:
                complete = False
            else:
                candidate.append(EvalGroup(protocol, category, "all", tuple(members)))
        if complete:
            groups.extend(candidate)
        else:
            logger.warning(
                "category %s incomplete for protocol %s: skipped",
                category,
                protocol.value,
            )
    return groups


def average_precision(ranked_relevance: Sequence[bool]) -> float:
    """AP of a ranked relevance list: mean over relevant ranks k of (hits@k / k).

    Raises:
        ValueError: If no item is relevant.
    """
    hits = 0
    total = 0.0
    for k, rel in enumerate(ranked_relevance, start=1):
        if rel:
            hits += 1
            total += hits / k
    if hits == 0:
        raise ValueError("average precision undefined without a relevant item")
    return total / hits


@dataclass
class GroupResult:
    """Per-group partial retrieval result; merged into a RetrievalReport."""

    category: str
    key: str
    aps: list[float]
    top1_hits: int

    @property
    def n_queries(self) -> int:
        return len(self.aps)


@dataclass
class RetrievalReport:
    """Aggregate retrieval scores with per-group and per-category breakdowns."""

    map: float
    top1: float
    query_count: int
    per_group: list[dict]
    per_category: dict[str, dict]
    failed_groups: list[dict]

    def to_dict(self) -> dict:
        return {
            "mAP": self.map,
            "top1": self.top1,
            "query_count": self.query_count,
            "per_group": self.per_group,
            "per_category": self.per_category,
            "failed_groups": self.failed_groups,
        }


Scorer = Callable[[ImageRef, ImageRef], float]


def eval_group(group: EvalGroup, scorer: Scorer) -> GroupResult:
    """Score one group: every member queries the remaining members."""
    refs = group.refs
    labels = group.labels
    n = len(refs)
    aps: list[float] = []
    top1_hits = 0
    for qi in range(n):
        candidates = [j for j in range(n) if j != qi]
        scores = [float(scorer(refs[qi], refs[j])) for j in candidates]
        order = sorted(range(len(candidates)), key=lambda t: (-scores[t], candidates[t]))
        ranked = [labels[candidates[t]] == labels[qi] for t in order]
        aps.append(average_precision(ranked))
        top1_hits += int(ranked[0])
    return GroupResult(group.category, group.key, aps, top1_hits)


def merge_results(results: Sequence[GroupResult], failed: Sequence[dict] = ()) -> RetrievalReport:
    """Merge per-group partials into a report; order-independent.

    The overall mAP/top-1 are unweighted means over all queries; per-category
    entries give each pair's own means.
    """
    ordered = sorted(results, key=lambda r: (r.category, r.key))
    all_aps: list[float] = []
    hits = 0
    per_group = []
    per_category: dict[str, dict] = {}
    for r in ordered:
        all_aps.extend(r.aps)
        hits += r.top1_hits
        per_group.append(
            {
                "category": r.category,
                "key": r.key,
                "mAP": sum(r.aps) / r.n_queries,
                "top1": r.top1_hits / r.n_queries,
                "queries": r.n_queries,
            }
        )
        cat = per_category.setdefault(
            r.category, {"ap_sum": 0.0, "hits": 0, "queries": 0}
        )
        cat["ap_sum"] += sum(r.aps)
        cat["hits"] += r.top1_hits
        cat["queries"] += r.n_queries
    for cat, acc in per_category.items():
        q = acc.pop("queries")
        per_category[cat] = {
            "mAP": acc["ap_sum"] / q,
            "top1": acc["hits"] / q,
            "queries": q,
        }
    n = len(all_aps)
    return RetrievalReport(
        map=sum(all_aps) / n if n else 0.0,
        top1=hits / n if n else 0.0,
        query_count=n,
        per_group=per_group,
        per_category=per_category,
        failed_groups=list(failed),
    )


def retrieval_eval(
    groups: Sequence[EvalGroup], scorer: Scorer, jobs: int = 1
) -> RetrievalReport:
    """Run retrieval over all groups; a scorer failure aborts only its group.

    Groups are independent; with ``jobs > 1`` they are evaluated in parallel
    and merged in canonical order, so the report does not depend on worker
    count.
    """
    results: list[GroupResult] = []
    failed: list[dict] = []

    def run(group: EvalGroup):
        try:
            return eval_group(group, scorer)
        except Exception as exc:  # noqa: BLE001 - recorded, not swallowed silently
            return {"category": group.category, "key": group.key, "error": str(exc)}

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, groups))
    else:
        outcomes = [run(g) for g in groups]
    for outcome in outcomes:
        if isinstance(outcome, GroupResult):
            results.append(outcome)
        else:
            logger.warning("group %(category)s/%(key)s failed: %(error)s", outcome)
            failed.append(outcome)
    return merge_results(results, sorted(failed, key=lambda f: (f["category"], f["key"])))


def oddity(embeddings: Sequence[Embedding]) -> int:
    """Pick the odd one out of four embeddings.

    Returns the index whose summed cosine similarity to the other three is
    smallest (the embedding lying farthest from the rest); ties go to the
    lowest index.
    """
    if len(embeddings) != 4:
        raise ValueError(f"oddity needs exactly 4 embeddings, got {len(embeddings)}")
    sums = []
    for i in range(4):
        sums.append(sum(cosine(embeddings[i], embeddings[j]) for j in range(4) if j != i))
    best = min(range(4), key=lambda i: (sums[i], i))
    return best
