"""End-to-end on a reduced route: simulate, train both decoders, compare.

A smaller route and fewer trips keep this demo around a minute; the full-
scale comparison (34 sections, 40 trips/day, 8 weeks) lives in the
acceptance suite and the CLI.
"""

import numpy as np

from busarrival.dataprep import RouteSpec, TripDataset, build_examples
from busarrival.evalkit import (baseline_hist_mean, baseline_persistence,
                                evaluate_grid, fit_hist_mean)
from busarrival.seq2seq import TrainConfig, predict, train_bank
from busarrival.simulator import SimConfig, simulate_dataset, split_train_test

sim = SimConfig(route=RouteSpec(16, 800.0), weeks=4, trips_per_day=20, seed=3)
trips, _ = simulate_dataset(sim)
dataset = TripDataset(trips, sim.route)
train_trips, test_trips = split_train_test(trips)
train_days = sorted({t.day_index for t in train_trips})
test_days = sorted({t.day_index for t in test_trips})

train_ex, skipped = build_examples(dataset, days=train_days)
print(f"{len(train_ex)} training examples ({len(skipped)} skipped: first "
      "week has no previous-week inputs)")

cfg = TrainConfig(max_epochs=15, patience=4, hidden_enc=24, hidden_dec_edu=24,
                  hidden_dec_edb=14, seed=0)
banks = {}
for kind in ("edu", "edb"):
    result = train_bank(kind, train_ex, sim.route.n_sections, cfg)
    banks[kind] = result.bank
    spans = {f"{lo}-{hi}": len(h) for (lo, hi), h in result.histories.items()}
    print(f"trained {kind}: epochs per bank {spans}")

i_values = (5, 10)
test_ex, _ = build_examples(dataset, positions=list(i_values), days=test_days)
hist = fit_hist_mean(train_trips)
methods = {
    "edu": lambda ex: predict(banks["edu"], ex).travel_s,
    "edb": lambda ex: predict(banks["edb"], ex).travel_s,
    "persistence": baseline_persistence,
    "hist_mean": lambda ex: baseline_hist_mean(hist, ex),
}
rows, _ = evaluate_grid(methods, test_ex, sim.route.n_sections,
                        i_values=i_values)

print(f"\ntest week: {len(test_ex)} queries")
print(f"{'i':>3} {'j':>3} | " + " | ".join(f"{m:>12}" for m in methods))
seen = sorted({(r.i, r.j) for r in rows})
table = {(r.i, r.j, r.method): r for r in rows}
for i, j in seen:
    cells = [f"{table[(i, j, m)].mae_s:9.1f} s" for m in methods]
    flag = " <- EDB better" if (table[(i, j, 'edb')].mae_s
                                < table[(i, j, 'edu')].mae_s) else ""
    print(f"{i:>3} {j:>3} | " + " | ".join(f"{c:>12}" for c in cells) + flag)

# one live-style query
ex = test_ex[0]
result = predict(banks["edb"], ex)
print(f"\ntrip {ex.trip_id} at end of section {ex.m} "
      f"(T_c = {ex.t_c / 3600:.2f} h):")
for sec, z, arr in zip(result.sections[:5], result.travel_s[:5],
                       result.arrival_s[:5]):
    print(f"  section {sec:2d}: {z:6.1f} s, arrival {arr / 3600:.3f} h")
print(f"  ... end of route at {result.arrival_s[-1] / 3600:.3f} h "
      f"(true {(ex.t_c + ex.targets.sum()) / 3600:.3f} h)")
