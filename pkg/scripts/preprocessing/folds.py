from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from scripts.preprocessing.sample import ImageSample
from scripts.utils.errors import ContractViolation


@dataclass
class FoldAssignment:
    """
    Per-sample fold index.

    Attributes:
        folds (Dict[str, int]): sample_id -> fold index in 0..n_folds-1.
        n_folds (int): Number of folds.
        subjects (Dict[str, str]): sample_id -> subject_id.
    """

    folds: Dict[str, int]
    n_folds: int
    subjects: Dict[str, str] = field(default_factory=dict)

    def held_out(self, k: int) -> List[str]:
        """Sample ids evaluated in iteration k."""
        return [sid for sid, fold in self.folds.items() if fold == k]

    def training(self, k: int) -> List[str]:
        """Sample ids trained on in iteration k."""
        return [sid for sid, fold in self.folds.items() if fold != k]

    def fold_sizes(self) -> List[int]:
        counts = Counter(self.folds.values())
        return [counts.get(k, 0) for k in range(self.n_folds)]


def make_folds(samples: Sequence[ImageSample], n_folds: int = 5, seed: int = 0) -> FoldAssignment:
    """
    Subject-level, phase-stratified k-fold partition.

    Subjects are shuffled by `seed`, grouped by the phase signature of their samples
    (e.g. "ED+ES" or "ED"), and dealt out group by group to the fold that currently
    holds the fewest samples, lowest index first. All samples of a subject share a
    fold.

    Args:
        samples (Sequence[ImageSample]): Samples to partition.
        n_folds (int): Number of folds.
        seed (int): Shuffle seed.

    Returns:
        FoldAssignment: The partition.

    Raises:
        ContractViolation: If there are fewer subjects than folds.
    """
    if n_folds < 2:
        raise ContractViolation(f"need at least 2 folds, got {n_folds}")
    by_subject: "OrderedDict[str, List[ImageSample]]" = OrderedDict()
    for sample in samples:
        by_subject.setdefault(sample.subject_id, []).append(sample)
    if len(by_subject) < n_folds:
        raise ContractViolation(f"{len(by_subject)} subjects cannot fill {n_folds} folds")

    subjects = sorted(by_subject)
    order = np.random.default_rng(seed).permutation(len(subjects))
    shuffled = [subjects[i] for i in order]

    strata: "OrderedDict[str, List[str]]" = OrderedDict()
    for subject in shuffled:
        signature = "+".join(sorted(s.phase for s in by_subject[subject]))
        strata.setdefault(signature, []).append(subject)

    sizes = [0] * n_folds
    folds: Dict[str, int] = {}
    owners: Dict[str, str] = {}
    for signature in sorted(strata):
        for subject in strata[signature]:
            k = int(np.argmin(sizes))
            for sample in by_subject[subject]:
                folds[sample.sample_id] = k
                owners[sample.sample_id] = subject
            sizes[k] += len(by_subject[subject])
    return FoldAssignment(folds=folds, n_folds=n_folds, subjects=owners)
