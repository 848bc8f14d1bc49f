"""Federated averaging across two silos vs pooling all the data.

Run with: python3 demos/03_federated_vs_central.py
"""

import numpy as np

from fedvra.data import SynthConfig, features_matrix, generate_synthetic, make_split_plan
from fedvra.experiment import Treatment, silos_for_treatment
from fedvra.federated import federated_train
from fedvra.network import TrainConfig
from fedvra.experiment import train_centralized

records = generate_synthetic(
    SynthConfig(n_patients=400, seed=11, positive_rate=0.15, class_separation=1.5, ward_shift=1.0)
)
plan = make_split_plan(records, test_fraction=0.2, n_folds=5, seed=0)
config = TrainConfig(lr0=0.01, hidden_size=16, seed=3, batch_size=32, max_epochs=30, patience=5)

print("== two-silo federation (institutions A and B, fold 1 held out) ==")
silos = silos_for_treatment(Treatment.FEDERATED, records, plan, heldout_fold=1)
for silo in silos:
    neg, pos = silo.label_counts()
    print(f"  silo {silo.name}: {silo.n_train} train ({pos} positive), {silo.n_val} val")

params, logs = federated_train(silos, config)
print(f"trained for {len(logs)} rounds; per-round validation loss:")
for log in logs:
    per_silo = "  ".join(f"{k}={v:.3f}" for k, v in log.train_losses.items())
    print(f"  epoch {log.epoch:>2}: val={log.val_loss:.4f}  train {per_silo}  f1={log.metrics['f1']:.3f}")

print("\n== single-silo federation equals plain training bit for bit ==")
pool = silos_for_treatment(Treatment.CENTRALISED, records, plan, heldout_fold=1)
fed_params, _ = federated_train(pool, config)
flat_params, _ = train_centralized(
    pool[0].train_features, pool[0].train_labels, pool[0].val_features, pool[0].val_labels, config
)
print(f"parameters identical: {fed_params == flat_params}")

print("\n== what averaging does to held-out loss ==")
# train each silo alone, then the federation, and compare on the full
# validation pool
from fedvra.federated import federated_validate, resolve_pos_weight

pos_weight = resolve_pos_weight(config, silos)
for label, train_silos in (("A alone", silos[:1]), ("B alone", silos[1:]), ("federated", silos)):
    p, _ = federated_train(train_silos, config)
    loss, metrics, _, _ = federated_validate(p, silos, pos_weight)
    print(f"  {label:<10} pooled val loss={loss:.4f}  f1={metrics['f1']:.3f}")
