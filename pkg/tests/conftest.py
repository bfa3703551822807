import pytest

from labloop.records import RecordStore

ASSAY_WORKFLOW = """
id: assay-demo
name: Plate assay demo
labware:
  - id: plate-1
    kind: 96-well
steps:
  - id: prep
    kind: instrument
    duration_s: 30
    requires:
      - class: robot
        qty: 1
  - id: incubate
    kind: instrument
    duration_s: 60
    depends_on: [prep]
    requires:
      - class: incubator
        qty: 1
  - id: read
    kind: instrument
    duration_s: 20
    depends_on: [incubate]
    requires:
      - class: plate_reader
        qty: 1
    params:
      wavelength_nm: 450
  - id: review
    kind: manual
    depends_on: [read]
    duration_s: 120
    requires:
      - class: personnel
        qty: 1
  - id: accept
    kind: decision
    depends_on: [review]
    duration_s: 1
"""

TARGET_SEQUENCE = "MKTAYIAKQRQISFVKSHFSRQLEERLGLIEVQ"


@pytest.fixture
def assay_workflow() -> str:
    return ASSAY_WORKFLOW


@pytest.fixture
def store(tmp_path) -> RecordStore:
    return RecordStore(tmp_path / "records", fsync=False)
