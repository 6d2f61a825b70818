import numpy as np

from hhscore.pairs import LabeledUtterance


def random_unit(rng, D):
    v = rng.standard_normal(D)
    return v / np.linalg.norm(v)


def labeled(rng, label, count, D, center=None, noise=0.1):
    """Utterances scattered around a unit center."""
    if center is None:
        center = random_unit(rng, D)
    utterances = []
    for i in range(count):
        v = center + noise * rng.standard_normal(D)
        utterances.append(LabeledUtterance("%s-%d" % (label, i), label, v / np.linalg.norm(v)))
    return utterances
