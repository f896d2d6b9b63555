import numpy as np
import pytest

from busarrival.dataprep import NormStats, RouteSpec, TrainingExample, TripRecord


def make_example(rng, m, n_sections, day_index=8, trip_id=1):
    """Random but valid training example with plausible magnitudes."""
    k = n_sections - m
    return TrainingExample(
        m=m, t_c=float(rng.uniform(30000, 40000)), day_index=day_index,
        trip_id=trip_id,
        enc=rng.uniform(60, 200, (m, 2)),
        dec=np.column_stack([rng.uniform(60, 200, k), rng.uniform(60, 200, k),
                             rng.uniform(20000, 30000, k),
                             rng.uniform(20000, 30000, k)]),
        targets=rng.uniform(60, 200, k),
        prev_trip_ids=np.zeros(k, dtype=np.int64), pw_trip_id=2,
        fallback_mask=np.zeros(k, dtype=bool))


def make_trip(trip_id, day_index, start_s, travel_times):
    travel = np.asarray(travel_times, dtype=np.float64)
    entries = start_s + np.concatenate([[0.0], np.cumsum(travel[:-1])])
    return TripRecord(trip_id=trip_id, day_index=day_index,
                      weekday=day_index % 7, entry_times=entries,
                      travel_times=travel)


@pytest.fixture
def toy_norm():
    return NormStats(travel_mean=130.0, travel_std=40.0, tod_min=0.0,
                     tod_max=86400.0)


@pytest.fixture
def small_route():
    return RouteSpec(6, 800.0)
