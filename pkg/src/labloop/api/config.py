"""Service configuration: YAML file plus environment overrides.

Recognized env vars: LAB_API_PORT, LAB_API_TOKEN, LAB_GATEWAY_TOKEN.
"""

import os
from dataclasses import dataclass, field

import yaml

from ..scheduling import BatchPolicy, Resource

DEFAULT_API_PORT = 7431
DEFAULT_GATEWAY_PORT = 7430

DEFAULT_RESOURCES = (
    Resource(id="robot-1", klass="robot", capacity=1),
    Resource(id="robot-2", klass="robot", capacity=1),
    Resource(id="reader-1", klass="plate_reader", capacity=1),
    Resource(id="incubator-1", klass="incubator", capacity=4),
    Resource(id="operator-1", klass="personnel", capacity=1),
    Resource(id="operator-2", klass="personnel", capacity=1),
    Resource(id="gpu-1", klass="model", capacity=2),
)


@dataclass(frozen=True)
class ServiceConfig:
    api_host: str = "127.0.0.1"
    api_port: int = DEFAULT_API_PORT
    api_token: str = ""
    gateway_host: str = "127.0.0.1"
    gateway_port: int = DEFAULT_GATEWAY_PORT
    gateway_token: str = "dev-token"
    ping_interval_s: float = 5.0
    dead_after_s: float = 15.0
    data_dir: str = "./labloop-data"
    resources: tuple[Resource, ...] = DEFAULT_RESOURCES
    policy: BatchPolicy = field(default_factory=BatchPolicy)
    sim_embedded: bool = True
    sim_fault_rate: float = 0.0
    sim_latency_s: float = 0.0
    console_dir: str = ""


def _resources_from(doc: list) -> tuple[Resource, ...]:
    out = []
    for item in doc:
        out.append(Resource(id=str(item["id"]), klass=str(item["class"]),
                            capacity=int(item["capacity"])))
    return tuple(out)


def load_config(path: str | None = None) -> ServiceConfig:
    doc: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ValueError("config root must be a mapping")
            doc = loaded

    api = doc.get("api") or {}
    gateway = doc.get("gateway") or {}
    policy = doc.get("policy") or {}
    simlab = doc.get("simlab") or {}

    cfg = ServiceConfig(
        api_host=str(api.get("host", "127.0.0.1")),
        api_port=int(api.get("port", DEFAULT_API_PORT)),
        api_token=str(api.get("token", "")),
        gateway_host=str(gateway.get("host", "127.0.0.1")),
        gateway_port=int(gateway.get("port", DEFAULT_GATEWAY_PORT)),
        gateway_token=str(gateway.get("token", "dev-token")),
        ping_interval_s=float(gateway.get("ping_interval_s", 5.0)),
        dead_after_s=float(gateway.get("dead_after_s", 15.0)),
        data_dir=str(doc.get("data_dir", "./labloop-data")),
        resources=_resources_from(doc["resources"]) if "resources" in doc
        else DEFAULT_RESOURCES,
        policy=BatchPolicy(
            batch_window_s=int(policy.get("batch_window_s", 300)),
            setup_s=int(policy.get("setup_s", 60)),
            per_item_s=int(policy.get("per_item_s", 10)),
        ),
        sim_embedded=bool(simlab.get("embedded", True)),
        sim_fault_rate=float(simlab.get("fault_rate", 0.0)),
        sim_latency_s=float(simlab.get("latency_s", 0.0)),
        console_dir=str(doc.get("console_dir", "")),
    )

    # Environment wins over the file.
    overrides = {}
    if os.environ.get("LAB_API_PORT"):
        overrides["api_port"] = int(os.environ["LAB_API_PORT"])
    if os.environ.get("LAB_API_TOKEN"):
        overrides["api_token"] = os.environ["LAB_API_TOKEN"]
    if os.environ.get("LAB_GATEWAY_TOKEN"):
        overrides["gateway_token"] = os.environ["LAB_GATEWAY_TOKEN"]
    if overrides:
        from dataclasses import replace
        cfg = replace(cfg, **overrides)
    return cfg
