"""REST surface, event streaming, service wiring, and the CLI."""

from .app import create_app
from .campaigns import CampaignManager, DuplicateCampaign
from .config import DEFAULT_RESOURCES, ServiceConfig, load_config
from .engine import (
    REGISTRY_CHAIN,
    RunEngine,
    UnknownWorkflow,
    WorkflowConflict,
    WorkflowInvalid,
)
from .service import LabService
from .views import (
    TERMINAL_KINDS,
    UnknownCampaign,
    UnknownRun,
    campaign_view,
    record_to_event,
    run_view,
)

__all__ = [
    "CampaignManager",
    "DEFAULT_RESOURCES",
    "DuplicateCampaign",
    "LabService",
    "REGISTRY_CHAIN",
    "RunEngine",
    "ServiceConfig",
    "TERMINAL_KINDS",
    "UnknownCampaign",
    "UnknownRun",
    "UnknownWorkflow",
    "WorkflowConflict",
    "WorkflowInvalid",
    "campaign_view",
    "create_app",
    "load_config",
    "record_to_event",
    "run_view",
]
