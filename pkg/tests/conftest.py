import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def write_csv(directory: Path, name: str, header: list[str], rows: list[list]) -> Path:
    path = directory / f"{name}.csv"
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join("" if c is None else str(c) for c in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def make_toy_corpus(directory: Path, n_good: int = 4, rows: int = 30, seed: int = 0) -> Path:
    """n_good trainable tables plus two that the cleaner must discard."""
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for t in range(n_good):
        data = []
        for i in range(rows):
            x = rng.normal(t, 1.0)
            y = rng.normal(-t, 2.0)
            g = ["red", "green", "blue"][int(rng.integers(3))]
            data.append([f"{x:.4f}", f"{y:.4f}", g])
        write_csv(directory, f"table{t}", ["x", "y", "color"], data)
    # All columns are identities: discarded for too many dropped columns.
    write_csv(
        directory,
        "all_ids",
        ["user_id", "item_id"],
        [[i + 1, 100 + i] for i in range(rows)],
    )
    # Only one column survives: discarded for too few columns.
    write_csv(
        directory,
        "too_thin",
        ["session_id", "value"],
        [[i + 1, f"{rng.normal():.3f}"] for i in range(rows)],
    )
    return directory


@pytest.fixture
def toy_corpus(tmp_path):
    return make_toy_corpus(tmp_path / "corpus")
