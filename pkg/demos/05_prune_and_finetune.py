"""End-to-end: train, prune 30% per layer, fine-tune, compare.

The complete pipeline on a small CNN and synthetic image classes:
capture activations, score with the nuclear-norm criterion, plan and
execute the structural rewrite, then recover accuracy with a short
fine-tune on the smaller network.

Run:  python3 demos/05_prune_and_finetune.py   (about a minute)
"""

from energyprune import (PruningSpec, TrainConfig, count_complexity,
                         evaluate, prune_pipeline, train)
from energyprune.toybench import ZOO_BUILDERS, gen_class_images

data = gen_class_images(classes=4, samples_per_class=192, seed=0)
trainset = (data.train_x, data.train_y)
testset = (data.test_x, data.test_y)

model = ZOO_BUILDERS["toy-cnn-plain"](4, 0)
model, _ = train(model, trainset,
                 TrainConfig(lr=0.02, max_epochs=25, patience=8,
                             batch_size=64, seed=0))
base = count_complexity(model)
print(f"trained:  acc {100 * evaluate(model, testset):.1f}%  "
      f"{base.flops} FLOPs  {base.params} params")

spec = PruningSpec(mode="per-layer", ratio=0.30, criterion="nuclear")
finetune = TrainConfig(lr=0.01, max_epochs=30, patience=30,
                       batch_size=64, seed=0)
pruned, report = prune_pipeline(model, trainset, spec, finetune=finetune)

final = count_complexity(pruned)
fl, pa = final.reduction_vs(base)
print(f"pruned:   acc {100 * evaluate(pruned, testset):.1f}%  "
      f"{final.flops} FLOPs (-{fl:.1f}%)  {final.params} params (-{pa:.1f}%)")
print(f"removed {report['removed_channels']} channels at 30% per layer,")
print("then fine-tuned on the smaller network.")
