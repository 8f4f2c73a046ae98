"""
Learning query weights from labeled examples
=============================================

Ground truth is produced with a hidden weight vector; training sees
only (query, relevant ids) pairs and recovers weights whose k-nearest
answers overlap the hidden ones almost perfectly.
"""

import numpy as np

from mmsearch import EngineConfig, QueryCase, SearchEngine, train
from mmsearch.synth import random_query, synthetic_dataset

dataset = synthetic_dataset(600, seed=5, blobs=6, sample_pairs=4000)
engine = SearchEngine(dataset, EngineConfig(leaf_capacity=48, seed=5))
engine.build_all()

hidden = (0.7, 0.2, 0.1)
rng = np.random.Generator(np.random.PCG64(40))
cases = []
for _ in range(30):
    q = random_query(dataset, rng)
    truth = engine.execute_knn(q, hidden, 50).ids   # what "relevant" means here
    cases.append(QueryCase(components=tuple(q), truth=truth, k=50))
print(f"built {len(cases)} labeled cases from hidden weights {hidden}")

result = train(cases, engine, epochs=300, seed=3)
print(f"\ntrained {result.epochs_run} epochs "
      f"(best epoch {result.best_epoch}, final lr {result.lr_final:.4f})")
print("loss   first/last:", round(result.loss_history[0], 4),
      "/", round(result.loss_history[-1], 4))
print("recall first/best:", round(result.recall_history[0], 3),
      "/", round(result.best_recall, 3))

# weights are only identified up to scale: compare directions
learned = result.weights / np.linalg.norm(result.weights)
target = np.asarray(hidden) / np.linalg.norm(hidden)
print(f"\nlearned direction {np.round(learned, 3)}")
print(f"hidden  direction {np.round(target, 3)}")
print(f"cosine similarity {float(learned @ target):.4f}")

# the learned weights answer a fresh query almost like the hidden ones
q = random_query(dataset, rng)
got = set(engine.execute_knn(q, result.weights, 50).ids)
want = set(engine.execute_knn(q, hidden, 50).ids)
print(f"fresh query overlap: {len(got & want)}/50")
