"""
One pipeline run by hand
========================

Normalise, rank features by chi-square, train the three classifiers and
compare their macro F-measure on a stratified 70/30 split.
"""
import numpy as np

from flowforge.classifiers import ClassifierConfig
from flowforge.dataset import LabelTask, derive_labels
from flowforge.evaluate import format_percent, train_and_evaluate
from flowforge.feature_select import select_top_k
from flowforge.partitioned import PartitionedExecutor
from flowforge.preprocess import clean, default_plan, min_max_normalize, row_class_names, \
    split_train_test, undersample
from flowforge.synthetic import default_spec, generate_synthetic

table, _ = clean(generate_synthetic(default_spec(seed=3, scale=0.3)))

# undersampling is keyed by subcategory; every class is capped so the total lands near 5000
keys = row_class_names(table)
plan = default_plan({k: keys.count(k) for k in set(keys)}, total=5000, seed=3)
table = undersample(table, plan, keys=keys)
print("rows after sampling", table.row_count)

task = LabelTask.binary()
table = derive_labels(table, task)
train, test = split_train_test(table, 0.7, seed=3)
print("train", train.row_count, "test", test.row_count)

# which features carry the most class signal (ranking on the normalised train split)
ranking, top = select_top_k(min_max_normalize(train)[0], k=5)
for s in ranking.scores[:5]:
    print(f"  {s.feature:<12} chi2 {s.chi2:10.1f}  dof {s.dof}")

# training histograms are merged across 4 partitions; the model is the same for any count
ex = PartitionedExecutor(4)
for name in ("DT", "RF", "NB"):
    run = train_and_evaluate(train, test, task, ClassifierConfig(name), feature_k=5, executor=ex, seed=3)
    per_class = ", ".join(f"{m.name} {format_percent(m.f1)}" for m in run.report.per_class)
    print(f"{name}: macro f1 {format_percent(run.report.macro_f1)}  ({per_class})")

print(run.report.render())
print("confusion (rows actual, columns predicted)")
print(np.asarray(run.report.confusion.counts))
