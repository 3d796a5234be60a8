"""Train a small model on a synthetic corpus and inspect what it learned.

A compact end-to-end run (smaller than the full acceptance setup so it
finishes in under a minute): generate data, train, evaluate all three
decision strategies, and dump context weights for one pair.

Run:  python demos/04_train_end_to_end.py
"""

import numpy as np

from docrelex.data import collect_facts, default_schema, generate_synthetic_corpus
from docrelex.training import TrainConfig, dump_context_weights, evaluate, train

schema = default_schema()
train_docs = generate_synthetic_corpus(seed=0, n_docs=80, schema=schema)
dev_docs = generate_synthetic_corpus(seed=1, n_docs=20, schema=schema)
print(f"train: {len(train_docs)} docs, dev: {len(dev_docs)} docs, "
      f"relations: {schema.names}")

config = TrainConfig(epochs=12, seed=0)
result = train(config, train_docs, dev_docs, schema)
print(f"\nbest dev F1 {result.best_dev_f1:.3f} at epoch {result.best_epoch}")
for h in result.history[-3:]:
    print(f"  epoch {h['epoch']:2d}  loss {h['train_loss']:.3f}  "
          f"dev F1 {h['dev_f1']:.3f}")

print("\nstrategy comparison on dev:")
for strategy in ("adaptive", "global", "per_class"):
    report = evaluate(result.checkpoint, dev_docs, strategy=strategy)
    print(f"  {strategy:>9s}: P {report['precision']:.3f} "
          f"R {report['recall']:.3f} F1 {report['f1']:.3f}")

facts = collect_facts(train_docs, schema)
report = evaluate(result.checkpoint, dev_docs, train_facts=facts)
print(f"\nIgn F1 (facts shared with training removed): {report['ign_f1']['f1']:.3f} "
      f"({report['ign_f1']['removed_gold']} gold tuples removed)")

doc = next(d for d in dev_docs if d.gold_labels)
lab = doc.gold_labels[0]
record = dump_context_weights(result.checkpoint, doc, lab.subject_idx, lab.object_idx)
order = np.argsort(record["weights"])[::-1][:5]
print(f"\ntop context tokens for gold pair "
      f"({doc.surface_form(lab.subject_idx)}, {doc.surface_form(lab.object_idx)}), "
      f"relation {schema.name_of(lab.relation_id)!r}:")
for pos in order:
    print(f"  {record['tokens'][pos]:>10s}  {record['weights'][pos]:.4f}")
