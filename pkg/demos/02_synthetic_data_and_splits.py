"""Synthetic admission records and leakage-safe splitting.

Run with: python3 demos/02_synthetic_data_and_splits.py
"""

from collections import Counter

from fedvra.data import (
    SynthConfig,
    assign_institutions,
    generate_synthetic,
    make_split_plan,
    verify_split_plan,
    ward_counts,
)

records = generate_synthetic(
    SynthConfig(n_patients=300, seed=5, positive_rate=0.12, class_separation=1.5)
)
print(f"generated {len(records)} admissions for 300 patients")

counts = ward_counts(records)
print("\n== ward census ==")
for ward in sorted(counts):
    print(f"  {ward:<4} {counts[ward]:>4} records")

# two simulated institutions: the ward partition that balances record
# counts as evenly as possible
institution_of = assign_institutions(counts)
print("\n== institution assignment ==")
for inst in ("A", "B"):
    wards = sorted(w for w, i in institution_of.items() if i == inst)
    total = sum(counts[w] for w in wards)
    print(f"  institution {inst}: wards {', '.join(wards)} ({total} records)")

plan = make_split_plan(records, test_fraction=0.2, n_folds=5, seed=0)
print("\n== split plan ==")
print(f"  test records:    {len(plan.test_ids)} (latest slice per institution)")
print(f"  folded records:  {len(plan.fold_of_record)} in {plan.n_folds} patient-disjoint folds")
print(f"  dropped records: {len(plan.dropped_ids)} (train-era admissions of test-set patients)")

fold_sizes = Counter(plan.fold_of_record.values())
print("  fold sizes:     ", dict(sorted(fold_sizes.items())))

violations = verify_split_plan(records, plan)
print(f"\nindependent verifier found {len(violations)} violations")

# sabotage the plan to show the verifier working: leak one folded
# record into the test set
broken = type(plan)(
    institution_of_ward=plan.institution_of_ward,
    test_ids=plan.test_ids + (next(iter(plan.fold_of_record)),),
    fold_of_record=plan.fold_of_record,
    dropped_ids=plan.dropped_ids,
)
print("after leaking one record into the test set:")
for message in verify_split_plan(records, broken)[:3]:
    print(f"  {message}")
