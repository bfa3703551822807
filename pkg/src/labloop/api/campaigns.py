"""Campaign lifecycle for the API: one controller thread per campaign,
recording into the shared store under the campaign id."""

import re
import threading

from ..campaign import CampaignConfig, CampaignResult, GatewayUnavailable, run_campaign
from ..clock import CountingClock
from ..records import RecordStore
from .views import UnknownCampaign

CAMPAIGN_ID_RE = re.compile(r"^cmp-(\d{4,})$")

CONFIG_FIELDS = frozenset((
    "campaign_id",
    "target_id",
    "target_sequence",
    "seed",
    "batch_size",
    "affinity_threshold",
    "min_hits",
    "max_iterations",
    "top_k_seeds",
))


class DuplicateCampaign(Exception):
    pass


def config_from(doc: dict, campaign_id: str) -> CampaignConfig:
    """CampaignConfig from a request document; absent optional fields keep
    their defaults, unknown fields are rejected."""
    if not isinstance(doc, dict):
        raise ValueError("campaign config must be a mapping")
    unknown = sorted(set(doc) - CONFIG_FIELDS)
    if unknown:
        raise ValueError(f"unknown config fields: {', '.join(unknown)}")
    for required in ("target_id", "target_sequence", "seed"):
        if required not in doc:
            raise ValueError(f"missing config field {required!r}")
    kwargs = {k: v for k, v in doc.items() if k != "campaign_id"}
    return CampaignConfig(campaign_id=campaign_id, **kwargs)


class CampaignManager:
    def __init__(self, store: RecordStore, services):
        self._store = store
        self._services = services
        self._mint = threading.Lock()
        self._threads: dict[str, threading.Thread] = {}
        self._aborts: dict[str, threading.Event] = {}
        self._results: dict[str, CampaignResult] = {}
        self._next = 1 + max(
            (int(m.group(1))
             for m in map(CAMPAIGN_ID_RE.match, store.chains()) if m),
            default=0,
        )

    def start(self, doc: dict) -> str:
        """Validate the config, claim the id, and launch the controller.
        Raises ValueError on a bad config and DuplicateCampaign when the id
        already has a chain or a live controller."""
        with self._mint:
            raw_id = doc.get("campaign_id") if isinstance(doc, dict) else None
            if raw_id is None:
                campaign_id = f"cmp-{self._next:04d}"
            else:
                campaign_id = str(raw_id)
            cfg = config_from(doc, campaign_id)
            if campaign_id in self._threads or self._store.chain_length(campaign_id):
                raise DuplicateCampaign(campaign_id)
            if raw_id is None:
                self._next += 1
            abort = threading.Event()
            thread = threading.Thread(
                target=self._drive, args=(cfg, abort), daemon=True,
                name=f"campaign-{campaign_id}",
            )
            self._threads[campaign_id] = thread
            self._aborts[campaign_id] = abort
        thread.start()
        return campaign_id

    def _drive(self, cfg: CampaignConfig, abort: threading.Event) -> None:
        # Ticking clock, not wall time: identical configs must produce
        # byte-identical chains.
        clock = CountingClock()
        try:
            result = run_campaign(cfg, self._services, self._store, clock, abort)
            self._results[cfg.campaign_id] = result
        except GatewayUnavailable:
            pass  # already recorded as campaign_error
        except Exception as exc:  # controller must never die silently
            self._store.append(cfg.campaign_id, "campaign_error",
                               {"detail": f"{type(exc).__name__}: {exc}"},
                               ts=clock.now())

    def abort(self, campaign_id: str) -> None:
        abort = self._aborts.get(campaign_id)
        if abort is None:
            raise UnknownCampaign(campaign_id)
        abort.set()

    def result(self, campaign_id: str) -> CampaignResult | None:
        return self._results.get(campaign_id)

    def wait(self, campaign_id: str, timeout: float | None = None) -> bool:
        thread = self._threads.get(campaign_id)
        if thread is None:
            raise UnknownCampaign(campaign_id)
        thread.join(timeout)
        return not thread.is_alive()

    def stop(self, timeout: float = 5.0) -> None:
        for abort in self._aborts.values():
            abort.set()
        for thread in self._threads.values():
            thread.join(timeout)
