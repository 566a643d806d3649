import numpy as np
import pytest

from procrec.dataset import Event, GeneratorConfig, InteractionDataset, generate_synthetic
from procrec.features import FeatureSchema, SparseVector


@pytest.fixture(scope="session")
def tiny_schema() -> FeatureSchema:
    """Three suppliers, two purchasers, one categorical block, two tokens."""
    return FeatureSchema(
        supplier_ids=("s0", "s1", "s2"),
        purchaser_ids=("p0", "p1"),
        categorical_blocks=(("timezone", ("tz0", "tz1", "tz2")),),
        vocabulary=("freight", "lane"),
    )


@pytest.fixture(scope="session")
def reference_shape_dataset() -> InteractionDataset:
    """Dataset matching the reference participation statistics of the
    real-world road-freight data this pipeline targets.

    165 events over 1690 suppliers with 7023 interactions in total
    (93 events with 43 participants plus 72 events with 42).
    """
    schema = FeatureSchema(
        supplier_ids=tuple(f"s{i:04d}" for i in range(1690)),
        purchaser_ids=("p0",),
        categorical_blocks=(),
        vocabulary=(),
    )
    events = []
    for e in range(165):
        size = 43 if e < 93 else 42
        start = (e * 17) % (1690 - size)
        events.append(
            Event(
                event_id=f"e{e:03d}",
                features=SparseVector.from_entries([(0, 1.0)]),
                participants=frozenset(range(start, start + size)),
            )
        )
    ds = InteractionDataset(schema=schema, events=tuple(events))
    assert ds.n_interactions == 7023
    return ds


@pytest.fixture(scope="session")
def planted_dataset() -> InteractionDataset:
    """Small planted-affinity dataset for cheap training tests."""
    config = GeneratorConfig(
        n_events=40,
        n_suppliers=30,
        n_purchasers=10,
        n_regions=3,
        base_participation_rate=0.08,
        affinity_boost=5.0,
        seed=7,
    )
    return generate_synthetic(config)


def random_sparse_vector(rng: np.random.Generator, n: int, max_nnz: int | None = None) -> SparseVector:
    """Random instance with nonzero values, indices inside [0, n)."""
    max_nnz = n if max_nnz is None else min(max_nnz, n)
    nnz = int(rng.integers(1, max_nnz + 1))
    idx = np.sort(rng.choice(n, size=nnz, replace=False))
    val = rng.normal(size=nnz)
    val[val == 0.0] = 1.0
    return SparseVector(idx, val)
