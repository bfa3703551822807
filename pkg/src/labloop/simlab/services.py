"""Mock model services and instruments.

These stand in for the real generation/folding/docking/scoring model
services and for instrument drivers. Outputs are bit-exact functions of
their inputs (see rng.py); there is no chemistry here, only reproducible
shapes: SMILES-looking fragment strings, hex digests for structures and
poses, and an integer affinity score where more negative is better.
"""

import time
from dataclasses import dataclass, field

from .rng import Prng, fnv1a64

# Fragment table for generated molecules. Index = successive PRNG draw mod 16.
FRAGMENTS = (
    "C", "CC", "CCC", "c1ccccc1", "C(=O)O", "N", "O", "Cl",
    "F", "C#N", "S", "C1CCCCC1", "OC", "NC(=O)", "C=C", "Br",
)

MAX_SMILES_LEN = 512
AFFINITY_SCALE = 2_000_000


class ExhaustionError(Exception):
    """The draw budget ran out before enough unique molecules appeared."""


class InjectedFault(Exception):
    """Configured instrument failure injection fired."""


@dataclass(frozen=True)
class Molecule:
    smiles: str
    origin: str = "generated"  # generated | seeded

    def __post_init__(self):
        if not self.smiles or len(self.smiles) > MAX_SMILES_LEN:
            raise ValueError("smiles must be nonempty and at most 512 chars")
        if self.origin not in ("generated", "seeded"):
            raise ValueError(f"origin must be generated or seeded, got {self.origin!r}")


@dataclass(frozen=True)
class TargetStructure:
    target_id: str
    sequence: str
    structure_id: str  # 16 hex chars, fnv1a64(sequence)


@dataclass(frozen=True)
class Pose:
    molecule: Molecule
    structure_id: str
    pose_id: str  # 16 hex chars, fnv1a64(smiles "|" structure_id)


@dataclass(frozen=True)
class AffinityScore:
    smiles: str
    target_id: str
    affinity: int  # dimensionless, in (-2_000_000, 0]


@dataclass(frozen=True)
class InstrumentResult:
    step_id: str
    readout: dict[str, str | int | bool]
    elapsed_s: int


def fold_structure_id(sequence: str) -> str:
    return format(fnv1a64(sequence), "016x")


def pose_digest(smiles: str, structure_id: str) -> str:
    return format(fnv1a64(f"{smiles}|{structure_id}"), "016x")


def dock(molecule: Molecule, target: TargetStructure, latency_s: float = 0.0) -> Pose:
    if latency_s > 0:
        time.sleep(latency_s)
    return Pose(
        molecule=molecule,
        structure_id=target.structure_id,
        pose_id=pose_digest(molecule.smiles, target.structure_id),
    )


def score_affinity(molecule: Molecule, target_id: str) -> AffinityScore:
    # affinity = -round(AFFINITY_SCALE * h / 2^64), round half-up in exact
    # integer arithmetic so no platform float rounding can leak in.
    h = fnv1a64(f"{molecule.smiles}:{target_id}")
    affinity = -((h * AFFINITY_SCALE + (1 << 63)) >> 64)
    return AffinityScore(smiles=molecule.smiles, target_id=target_id, affinity=affinity)


def mix_stream_seed(campaign_seed: int, iteration: int, seed_smiles: list[str]) -> int:
    """PRNG stream seed for one generation call: campaign seed, iteration,
    and the hash of the concatenated seed molecules (0 when there are none)."""
    seeds_term = fnv1a64("".join(seed_smiles)) if seed_smiles else 0
    return (campaign_seed ^ iteration ^ seeds_term) & ((1 << 64) - 1)


def generate_molecules(
    campaign_seed: int,
    iteration: int,
    n: int,
    seeds: list[Molecule],
    seen: set[str] | None = None,
) -> list[Molecule]:
    """Draw n campaign-unique molecules from the fragment table.

    `seen` is the campaign's accumulated SMILES set; duplicates against it
    (or within this call) are skipped and regenerated. The budget is 100*n
    raw PRNG draws; each attempt costs 1 + k draws.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if iteration < 1:
        raise ValueError("iteration must be >= 1")
    seen = seen if seen is not None else set()
    prng = Prng(mix_stream_seed(campaign_seed, iteration, [m.smiles for m in seeds]))
    budget = 100 * n
    out: list[Molecule] = []
    while len(out) < n:
        if budget <= 0:
            raise ExhaustionError(
                f"{100 * n} draws produced only {len(out)} of {n} unique molecules"
            )
        k = 2 + (prng.next_u64() % 3)
        budget -= 1
        parts = []
        for _ in range(k):
            if budget <= 0:
                raise ExhaustionError(
                    f"{100 * n} draws produced only {len(out)} of {n} unique molecules"
                )
            parts.append(FRAGMENTS[prng.next_u64() % 16])
            budget -= 1
        smiles = "".join(parts)
        if smiles in seen:
            continue
        seen.add(smiles)
        out.append(Molecule(smiles=smiles, origin="generated"))
    return out


class MoleculeGenerator:
    """Per-campaign generation state: enforces campaign-wide SMILES uniqueness."""

    def __init__(self, campaign_seed: int):
        self.campaign_seed = campaign_seed
        self.seen: set[str] = set()

    def generate(self, iteration: int, n: int, seeds: list[Molecule]) -> list[Molecule]:
        return generate_molecules(self.campaign_seed, iteration, n, seeds, self.seen)


class FoldCache:
    """Structure cache backing the fold service: recomputation only on miss.

    `work_count` counts actual folds, so "(if needed)" economy is assertable.
    """

    def __init__(self):
        self._cache: dict[tuple[str, str], TargetStructure] = {}
        self.work_count = 0

    def fold(self, target_id: str, sequence: str) -> tuple[TargetStructure, bool]:
        """Returns (structure, cached). cached=True means no fold work ran."""
        if not sequence:
            raise ValueError("sequence must be nonempty")
        if not sequence.isupper() or not sequence.isalpha():
            raise ValueError("sequence must be uppercase A-Z")
        key = (target_id, sequence)
        hit = self._cache.get(key)
        if hit is not None:
            return hit, True
        self.work_count += 1
        structure = TargetStructure(
            target_id=target_id,
            sequence=sequence,
            structure_id=fold_structure_id(sequence),
        )
        self._cache[key] = structure
        return structure, False


class InstrumentSim:
    """Mock instrument pool: synthetic readouts with optional fault injection."""

    def __init__(self, fault_rate: float = 0.0, seed: int = 1):
        if not 0.0 <= fault_rate <= 1.0:
            raise ValueError("fault_rate must be in [0, 1]")
        self.fault_rate = fault_rate
        self._prng = Prng(seed)

    def run(self, step_id: str, duration_s: int, params: dict) -> InstrumentResult:
        if self.fault_rate > 0.0:
            draw = self._prng.next_u64() / float(1 << 64)
            if draw < self.fault_rate:
                raise InjectedFault(f"injected fault on step {step_id!r}")
        reading = fnv1a64(step_id) % 1_000_000
        readout: dict[str, str | int | bool] = {
            "step_id": step_id,
            "reading": reading,
            "unit": "au",
            "ok": True,
        }
        for key, value in sorted(params.items()):
            if isinstance(value, (str, int, bool)) and not isinstance(value, float):
                readout[f"param_{key}"] = value
        return InstrumentResult(step_id=step_id, readout=readout, elapsed_s=duration_s)
