"""Composition root: record store, gateway, engine, campaigns, and the
embedded simulated adapters, started and stopped as one unit."""

from ..clock import WallClock
from ..gateway.server import GatewayServer
from ..records import RecordStore
from ..simlab.adapter import (
    INSTRUMENTS_ADAPTER_ID,
    MODELS_ADAPTER_ID,
    GatewayScreening,
    start_sim_adapters,
)
from .campaigns import CampaignManager
from .config import ServiceConfig
from .engine import RunEngine


class LabService:
    def __init__(self, cfg: ServiceConfig, clock=None):
        self.cfg = cfg
        self.clock = clock if clock is not None else WallClock()
        self.store = RecordStore(cfg.data_dir)
        self.gateway = GatewayServer(
            cfg.gateway_token,
            host=cfg.gateway_host,
            port=cfg.gateway_port,
            clock=self.clock,
            ping_interval_s=cfg.ping_interval_s,
            dead_after_s=cfg.dead_after_s,
        )
        self.engine = RunEngine(
            self.store, self.gateway, self.clock, cfg.resources, cfg.policy
        )
        self.screening = GatewayScreening(self.gateway)
        self.campaigns = CampaignManager(self.store, self.screening)
        self.adapters: dict = {}

    def start(self, wait_adapters_s: float = 10.0) -> None:
        self.gateway.start()
        if self.cfg.sim_embedded:
            self.adapters = start_sim_adapters(
                self.cfg.gateway_host,
                self.gateway.port,
                self.cfg.gateway_token,
                fault_rate=self.cfg.sim_fault_rate,
                latency_s=self.cfg.sim_latency_s,
            )
            for adapter_id in (MODELS_ADAPTER_ID, INSTRUMENTS_ADAPTER_ID):
                self.gateway.wait_for_adapter(adapter_id, wait_adapters_s)

    def stop(self) -> None:
        self.campaigns.stop()
        self.engine.stop()
        for adapter in self.adapters.values():
            adapter.stop()
        self.adapters = {}
        self.gateway.stop()
