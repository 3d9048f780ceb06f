import numpy as np

from mvaction.data_model import CENSUS, DatasetManifest, IdRanges, ManifestEntry, SkeletonSequence


def make_sequence(frames=4, bodies=1, seed=0, view="front", sample_id="S", class_id=1, group_id=1):
    rng = np.random.default_rng(seed)
    joints = rng.normal(size=(frames, bodies, 25, 3))
    return SkeletonSequence(joints, np.arange(frames), np.ones((frames, bodies), bool), view, sample_id,
                            class_id, group_id, CENSUS)


def manifest_of(specs, modality="rgb"):
    """``specs``: iterable of (sample_id, view, group_id[, class_id])."""
    entries = []
    for spec in specs:
        sid, view, group = spec[:3]
        cls = spec[3] if len(spec) > 3 else 1
        entries.append(ManifestEntry(sid, view, modality, cls, group, f"{view}/{sid}", 1))
    return DatasetManifest(tuple(entries))


def group_manifest(groups, views=("front",)):
    return manifest_of([(f"G{g:03d}A01R1", v, g) for g in groups for v in views])


LOOSE = IdRanges(30, 89)
