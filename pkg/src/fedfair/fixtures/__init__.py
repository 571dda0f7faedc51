"""Tables transcribed from the source study, bundled for replay and regression tests.

table1.csv        motivating example: local, FedAvg and four personalized columns, 9 users
table3.csv        per-user CIFAR-10 accuracies for three splits; the ``local`` column is
                  a placeholder set 5 points below FedAvg because local accuracies
                  were not published
table3_footer.csv printed average / standard deviation rows of table3
table4.csv        printed PUI, MPI, API and average accuracy per method and split
tiny-images.idx   two 3x3 IDX images (bytes written by hand), with tiny-labels.idx
mlp_tiny.json     3-sample batch with fixed MLP parameters and hand-computed loss
blobs_ds3.json    pinned desk-scale experiment: 3-class blobs, 10 clients, DS3 split
"""

from pathlib import Path

FIXTURE_DIR = Path(__file__).parent


def fixture_path(name: str) -> Path:
    p = FIXTURE_DIR / name
    if not p.exists():
        raise FileNotFoundError(f"no bundled fixture {name!r}")
    return p
