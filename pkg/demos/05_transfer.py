"""
fc6 features and linear SVMs
============================

Reuses the checkpoint written by ``04_desk_training.py``. A second synthetic
dataset (new seed) plays the role of the target scene benchmark.
"""

from minivgg import augment, evaluate as ev, storage

net = storage.load_checkpoint("vgg11_desk.ckpt")
aug = augment.AugmentConfig()
target = augment.generate_synthetic(8, 150, 64, seed=7)
train_set, test_set = augment.split_per_class(target, 100)

# %%
# l2-normalized fc6 activations (post-ReLU, center crop) against raw pixels.
for name, featurize in (("fc6", lambda d: ev.extract_fc6(net, d, aug)),
                        ("pixels", lambda d: ev.pixel_features(d, aug))):
    tr, te = featurize(train_set), featurize(test_set)
    svm = ev.svm_train(tr, C=1.0)
    pred, _ = ev.svm_predict(svm, te)
    print(f"{name:>6}: {tr.dim}-d features, test accuracy {(pred == te.labels).mean():.3f}")
