import numpy as np
import pytest

from wrag.embedding import LocalHashEmbedder
from wrag.model import ScoredHit
from wrag.vindex import FlatIndex


# Acceptance checks append "PASS/FAIL [nn] title" lines here; the summary
# hook prints them after the run, outside pytest's output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def embedder():
    return LocalHashEmbedder(dim=384)


def unit_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    m = rng.standard_normal((n, dim))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    return m.astype(np.float32)


def make_index(source: str, rng: np.random.Generator, n: int, dim: int) -> FlatIndex:
    ids = [f"{source}-c{i:05d}" for i in range(n)]
    return FlatIndex(source, dim, ids, unit_vectors(rng, n, dim))


def hit(chunk_id: str, source: str, raw: float, weight: float = 1.0) -> ScoredHit:
    return ScoredHit(
        chunk_id=chunk_id,
        source=source,
        raw_distance=raw,
        adjusted_distance=weight * raw,
        weight_applied=weight,
    )


class FixedEmbedder:
    """Embeds every text to one fixed vector; for pipeline geometry tests."""

    def __init__(self, vec: np.ndarray):
        self.vec = np.asarray(vec, dtype=np.float64)
        self.dim = self.vec.shape[0]

    def embed(self, text: str) -> np.ndarray:
        return self.vec
