"""Gateway-facing surface of the simulated lab.

Two adapters dial the orchestrator: one carries the mock model services
(generate, fold, dock, score), the other the mock instruments
(instrument.run). Request handlers are stateless where possible — generate
takes the campaign's exclusion list in the request — so a replayed or
re-dispatched request can never diverge from the original.

ScreeningServices is the interface the campaign controller consumes; it has
a gateway-backed implementation and an in-process one with identical
semantics for tests that do not need sockets.
"""

import time

from ..gateway.client import AdapterClient
from ..gateway.frames import Message
from ..gateway.server import GatewayServer
from .services import (
    FoldCache,
    InstrumentSim,
    Molecule,
    generate_molecules,
    pose_digest,
    score_affinity,
)

MODELS_ADAPTER_ID = "sim-models"
INSTRUMENTS_ADAPTER_ID = "sim-instruments"
MODEL_CAPABILITIES = ["generate", "fold", "dock", "score"]
INSTRUMENT_CAPABILITIES = ["instrument.run"]


def default_routes() -> dict[str, str]:
    routes = {cap: MODELS_ADAPTER_ID for cap in MODEL_CAPABILITIES}
    routes.update({cap: INSTRUMENTS_ADAPTER_ID for cap in INSTRUMENT_CAPABILITIES})
    return routes


def _need(args: dict, key: str, typ) -> object:
    value = args.get(key)
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        raise ValueError(f"argument {key!r} must be {typ.__name__}")
    return value


def models_handler(fold_cache: FoldCache | None = None, latency_s: float = 0.0):
    """Request handler covering the model-service capabilities."""
    cache = fold_cache if fold_cache is not None else FoldCache()

    def handle(req: Message) -> dict:
        op = req.payload.get("op")
        args = req.payload.get("args") or {}
        if not isinstance(args, dict):
            raise ValueError("args must be a mapping")

        if op == "generate":
            seeds = args.get("seeds") or []
            exclude = args.get("exclude") or []
            molecules = generate_molecules(
                campaign_seed=_need(args, "campaign_seed", int),
                iteration=_need(args, "iteration", int),
                n=_need(args, "n", int),
                seeds=[Molecule(smiles=s, origin="seeded") for s in seeds],
                seen=set(exclude),
            )
            return {"molecules": [m.smiles for m in molecules]}

        if op == "fold":
            structure, cached = cache.fold(
                target_id=_need(args, "target_id", str),
                sequence=_need(args, "sequence", str),
            )
            return {"target_id": structure.target_id,
                    "structure_id": structure.structure_id,
                    "cached": cached}

        if op == "dock":
            smiles = _need(args, "smiles", str)
            structure_id = _need(args, "structure_id", str)
            Molecule(smiles=smiles, origin="generated")  # bounds check
            if latency_s > 0:
                time.sleep(latency_s)
            return {"pose_id": pose_digest(smiles, structure_id)}

        if op == "score":
            molecule = Molecule(smiles=_need(args, "smiles", str), origin="generated")
            score = score_affinity(molecule, _need(args, "target_id", str))
            return {"affinity": score.affinity}

        raise ValueError(f"unknown op {op!r}")

    return handle


def instruments_handler(sim: InstrumentSim | None = None):
    """Request handler for the mock instrument pool."""
    instrument = sim if sim is not None else InstrumentSim()

    def handle(req: Message) -> dict:
        op = req.payload.get("op")
        if op != "instrument.run":
            raise ValueError(f"unknown op {op!r}")
        args = req.payload.get("args") or {}
        if not isinstance(args, dict):
            raise ValueError("args must be a mapping")
        params = args.get("params") or {}
        if not isinstance(params, dict):
            raise ValueError("params must be a mapping")
        result = instrument.run(
            step_id=_need(args, "step_id", str),
            duration_s=_need(args, "duration_s", int),
            params=params,
        )
        return {"readout": result.readout, "elapsed_s": result.elapsed_s}

    return handle


def start_sim_adapters(host: str, port: int, token: str, *, fault_rate: float = 0.0,
                       latency_s: float = 0.0, instrument_seed: int = 1,
                       delay_ms=None, clock=None) -> dict[str, AdapterClient]:
    """Dial both simulated adapters at the given orchestrator. Returns them
    keyed by adapter id, already started but not necessarily connected."""
    from ..gateway.session import reconnect_delay
    delay = delay_ms or reconnect_delay
    kwargs = {"delay_ms": delay}
    if clock is not None:
        kwargs["clock"] = clock
    models = AdapterClient(
        host, port, token,
        adapter_id=MODELS_ADAPTER_ID,
        capabilities=list(MODEL_CAPABILITIES),
        handler=models_handler(latency_s=latency_s),
        **kwargs,
    )
    instruments = AdapterClient(
        host, port, token,
        adapter_id=INSTRUMENTS_ADAPTER_ID,
        capabilities=list(INSTRUMENT_CAPABILITIES),
        handler=instruments_handler(InstrumentSim(fault_rate=fault_rate,
                                                  seed=instrument_seed)),
        **kwargs,
    )
    models.start()
    instruments.start()
    return {MODELS_ADAPTER_ID: models, INSTRUMENTS_ADAPTER_ID: instruments}


class GatewayScreening:
    """Campaign screening services reached through the gateway, the way a
    production deployment would call on-prem model services."""

    def __init__(self, gateway: GatewayServer, routes: dict[str, str] | None = None,
                 timeout_s: float = 30.0):
        self._gateway = gateway
        self._routes = routes or default_routes()
        self._timeout_s = timeout_s

    def _call(self, op: str, args: dict) -> dict:
        adapter_id = self._routes[op]
        return self._gateway.request(adapter_id, {"op": op, "args": args},
                                     timeout_s=self._timeout_s)

    def fold(self, target_id: str, sequence: str) -> dict:
        return self._call("fold", {"target_id": target_id, "sequence": sequence})

    def generate(self, campaign_seed: int, iteration: int, n: int,
                 seeds: list[str], exclude: list[str]) -> list[str]:
        reply = self._call("generate", {
            "campaign_seed": campaign_seed,
            "iteration": iteration,
            "n": n,
            "seeds": seeds,
            "exclude": exclude,
        })
        return list(reply["molecules"])

    def dock(self, smiles: str, structure_id: str) -> str:
        return self._call("dock", {"smiles": smiles,
                                   "structure_id": structure_id})["pose_id"]

    def score(self, smiles: str, target_id: str) -> int:
        return self._call("score", {"smiles": smiles,
                                    "target_id": target_id})["affinity"]


class LocalScreening:
    """Same contract as GatewayScreening, no sockets. For tests and for the
    stand-alone oracle comparisons."""

    def __init__(self, latency_s: float = 0.0):
        self._cache = FoldCache()
        self._latency_s = latency_s

    @property
    def fold_work_count(self) -> int:
        return self._cache.work_count

    def fold(self, target_id: str, sequence: str) -> dict:
        structure, cached = self._cache.fold(target_id, sequence)
        return {"target_id": target_id, "structure_id": structure.structure_id,
                "cached": cached}

    def generate(self, campaign_seed: int, iteration: int, n: int,
                 seeds: list[str], exclude: list[str]) -> list[str]:
        molecules = generate_molecules(
            campaign_seed, iteration, n,
            [Molecule(smiles=s, origin="seeded") for s in seeds],
            set(exclude),
        )
        return [m.smiles for m in molecules]

    def dock(self, smiles: str, structure_id: str) -> str:
        Molecule(smiles=smiles, origin="generated")  # bounds check
        if self._latency_s > 0:
            time.sleep(self._latency_s)
        return pose_digest(smiles, structure_id)

    def score(self, smiles: str, target_id: str) -> int:
        molecule = Molecule(smiles=smiles, origin="generated")
        return score_affinity(molecule, target_id).affinity
