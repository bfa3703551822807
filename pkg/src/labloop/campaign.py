"""Closed-loop virtual screening: generate, dock, score, repeat until the
hit criteria hold or the iteration budget runs out.

The controller is deliberately thin. Every stage result is appended to the
campaign's record chain as it happens, in deterministic molecule order, and
the final hit list is recomputed from the scores it recorded — so the chain
alone always suffices to audit or rebuild the outcome.
"""

import threading
from dataclasses import dataclass, field
from enum import Enum

from .gateway.server import GatewayError, GatewayTimeout
from .records import RecordStore
from .simlab.services import AffinityScore, Molecule

DEFAULT_BATCH_SIZE = 20
DEFAULT_AFFINITY_THRESHOLD = -1_400_000
DEFAULT_MIN_HITS = 10
DEFAULT_MAX_ITERATIONS = 10
DEFAULT_TOP_K_SEEDS = 3


class GatewayUnavailable(Exception):
    """The screening services could not be reached after protocol retries."""


class CampaignStatus(str, Enum):
    CRITERIA_MET = "CriteriaMet"
    EXHAUSTED = "Exhausted"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class CampaignConfig:
    campaign_id: str
    target_id: str
    target_sequence: str
    seed: int
    batch_size: int = DEFAULT_BATCH_SIZE
    affinity_threshold: int = DEFAULT_AFFINITY_THRESHOLD
    min_hits: int = DEFAULT_MIN_HITS
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    top_k_seeds: int = DEFAULT_TOP_K_SEEDS

    def __post_init__(self):
        if not self.campaign_id:
            raise ValueError("campaign_id required")
        if not self.target_id or not self.target_sequence:
            raise ValueError("target_id and target_sequence required")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")
        if self.batch_size < 1 or self.max_iterations < 1:
            raise ValueError("batch_size and max_iterations must be >= 1")
        if self.affinity_threshold >= 0:
            raise ValueError("affinity_threshold must be negative")
        if self.min_hits < 1:
            raise ValueError("min_hits must be >= 1")
        if not 1 <= self.top_k_seeds <= self.batch_size:
            raise ValueError("top_k_seeds must be in [1, batch_size]")

    def to_payload(self) -> dict[str, str | int | bool]:
        return {
            "campaign_id": self.campaign_id,
            "target_id": self.target_id,
            "target_sequence": self.target_sequence,
            "seed": self.seed,
            "batch_size": self.batch_size,
            "affinity_threshold": self.affinity_threshold,
            "min_hits": self.min_hits,
            "max_iterations": self.max_iterations,
            "top_k_seeds": self.top_k_seeds,
        }


@dataclass(frozen=True)
class IterationSummary:
    iteration: int
    generated: int
    new_hits: int
    cumulative_hits: int
    best_affinity: int


@dataclass(frozen=True)
class CampaignResult:
    status: CampaignStatus
    iterations: tuple[IterationSummary, ...]
    hits: tuple[AffinityScore, ...]  # ascending affinity, ties by smiles


def evaluate_criteria(scored: list[AffinityScore], cfg: CampaignConfig) -> bool:
    """True once enough molecules sit at or below the affinity threshold."""
    qualifying = sum(1 for s in scored if s.affinity <= cfg.affinity_threshold)
    return qualifying >= cfg.min_hits


def select_seeds(scored: list[AffinityScore], k: int) -> list[Molecule]:
    """The k best-scoring molecules so far, ties broken by smiles."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(scored, key=lambda s: (s.affinity, s.smiles))
    return [Molecule(smiles=s.smiles, origin="seeded") for s in ranked[:k]]


def _sorted_hits(scored: list[AffinityScore], threshold: int) -> tuple[AffinityScore, ...]:
    hits = [s for s in scored if s.affinity <= threshold]
    return tuple(sorted(hits, key=lambda s: (s.affinity, s.smiles)))


def run_campaign(cfg: CampaignConfig, services, records: RecordStore, clock,
                 abort: threading.Event | None = None) -> CampaignResult:
    """Drive one campaign to a terminal status, appending every stage event
    to the chain keyed by cfg.campaign_id.

    services provides fold/generate/dock/score (see simlab.adapter for the
    gateway-backed and in-process implementations). Abort requests are
    honored between stages, never mid-stage.
    """
    chain = cfg.campaign_id

    def aborted() -> bool:
        return abort is not None and abort.is_set()

    def append(kind: str, payload: dict) -> None:
        records.append(chain, kind, payload, ts=clock.now())

    def call(stage, **kwargs):
        try:
            return stage(**kwargs)
        except (GatewayTimeout, GatewayError) as exc:
            append("campaign_error", {"detail": str(exc)})
            raise GatewayUnavailable(str(exc)) from exc

    append("campaign_started", cfg.to_payload())

    folded = call(services.fold, target_id=cfg.target_id,
                  sequence=cfg.target_sequence)
    structure_id = folded["structure_id"]
    append(
        "fold_skipped" if folded.get("cached") else "fold_computed",
        {"target_id": cfg.target_id, "structure_id": structure_id,
         "cached": bool(folded.get("cached"))},
    )

    scored: list[AffinityScore] = []
    seen: list[str] = []
    summaries: list[IterationSummary] = []
    status = CampaignStatus.EXHAUSTED
    best: int | None = None

    for iteration in range(1, cfg.max_iterations + 1):
        if aborted():
            status = CampaignStatus.ABORTED
            break

        seeds = [m.smiles for m in select_seeds(scored, cfg.top_k_seeds)] if scored else []
        batch = call(
            services.generate,
            campaign_seed=cfg.seed,
            iteration=iteration,
            n=cfg.batch_size,
            seeds=seeds,
            exclude=list(seen),
        )
        for smiles in batch:
            append("molecule_generated",
                   {"iteration": iteration, "smiles": smiles, "origin": "generated"})
        seen.extend(batch)

        if aborted():
            status = CampaignStatus.ABORTED
            break
        for smiles in batch:
            pose_id = call(services.dock, smiles=smiles, structure_id=structure_id)
            append("molecule_docked",
                   {"iteration": iteration, "smiles": smiles,
                    "structure_id": structure_id, "pose_id": pose_id})

        if aborted():
            status = CampaignStatus.ABORTED
            break
        new_hits = 0
        for smiles in batch:
            affinity = call(services.score, smiles=smiles, target_id=cfg.target_id)
            scored.append(AffinityScore(smiles=smiles, target_id=cfg.target_id,
                                        affinity=affinity))
            append("affinity_scored",
                   {"iteration": iteration, "smiles": smiles,
                    "target_id": cfg.target_id, "affinity": affinity})
            if affinity <= cfg.affinity_threshold:
                new_hits += 1
            best = affinity if best is None else min(best, affinity)

        cumulative = sum(1 for s in scored if s.affinity <= cfg.affinity_threshold)
        summary = IterationSummary(
            iteration=iteration,
            generated=len(batch),
            new_hits=new_hits,
            cumulative_hits=cumulative,
            best_affinity=best if best is not None else 0,
        )
        summaries.append(summary)
        append("iteration_completed", {
            "iteration": summary.iteration,
            "generated": summary.generated,
            "new_hits": summary.new_hits,
            "cumulative_hits": summary.cumulative_hits,
            "best_affinity": summary.best_affinity,
        })

        if evaluate_criteria(scored, cfg):
            status = CampaignStatus.CRITERIA_MET
            break

    hits = _sorted_hits(scored, cfg.affinity_threshold)
    append("campaign_finished", {
        "status": status.value,
        "iterations": len(summaries),
        "total_hits": len(hits),
        "best_affinity": best if best is not None else 0,
    })
    return CampaignResult(status=status, iterations=tuple(summaries), hits=hits)
