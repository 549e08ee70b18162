"""Synthetic federated classification data with quantity, label and feature skew."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class GeneratorSpec:
    num_clients: int = 200
    num_classes: int = 12
    dim: int = 40
    dirichlet_alpha: float = 0.3
    quantity_sigma: float = 0.8
    feature_shift: float = 1.0
    samples_mean: float = 45.0
    test_size: int = 2400
    class_sep: float = 3.5
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_clients", "num_classes", "dim", "test_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.dirichlet_alpha <= 0:
            raise ConfigError("dirichlet_alpha must be > 0")
        if self.quantity_sigma < 0 or self.feature_shift < 0 or self.class_sep < 0:
            raise ConfigError("quantity_sigma, feature_shift and class_sep must be >= 0")
        if self.samples_mean <= 0:
            raise ConfigError("samples_mean must be > 0")
        if self.test_size < self.num_classes:
            raise ConfigError("test_size must be at least num_classes so every class is tested")


@dataclass(frozen=True, eq=False)
class ClientDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    sample_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DataError("features must be [n, d] with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels outside [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True, eq=False)
class FederationData:
    clients: list[ClientDataset]
    global_test: ClientDataset
    spec: GeneratorSpec
    class_means: np.ndarray | None = None
    client_shifts: np.ndarray | None = None

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    @property
    def num_classes(self) -> int:
        return self.global_test.num_classes

    @property
    def dim(self) -> int:
        return self.global_test.dim

    def pooled(self) -> ClientDataset:
        return ClientDataset(
            np.concatenate([c.features for c in self.clients]),
            np.concatenate([c.labels for c in self.clients]),
            self.num_classes,
        )


def _quota_counts(proportions: np.ndarray, n: int) -> np.ndarray:
    """Largest-remainder split of ``n`` items according to ``proportions``."""
    raw = proportions * n
    counts = np.floor(raw).astype(np.int64)
    short = n - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def generate_federation(spec: GeneratorSpec | None = None, **overrides) -> FederationData:
    """Draw a seeded synthetic federation.

    Class ``c`` is ``N(m_c, I)`` with random mean of norm ``class_sep``. Client
    ``k`` gets ``n_k = max(1, round(samples_mean * LogNormal(0, sigma)))``
    samples split over classes by a ``Dirichlet(alpha)`` draw, and all of its
    features are offset by a private vector of norm ``feature_shift``.
    The test set is class-balanced and unshifted.
    """
    spec = spec if spec is not None else GeneratorSpec()
    if overrides:
        spec = GeneratorSpec(**{**asdict(spec), **overrides})
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    K, C, d = spec.num_clients, spec.num_classes, spec.dim

    means = rng.standard_normal((C, d))
    means *= spec.class_sep / np.linalg.norm(means, axis=1, keepdims=True)

    shifts = rng.standard_normal((K, d))
    shifts *= spec.feature_shift / np.linalg.norm(shifts, axis=1, keepdims=True)

    sizes = np.rint(spec.samples_mean * rng.lognormal(0.0, spec.quantity_sigma, size=K))
    sizes = np.maximum(sizes, 1).astype(np.int64)
    props = rng.dirichlet(np.full(C, spec.dirichlet_alpha), size=K)
    if not np.all(np.isfinite(props)):
        raise ConfigError("Dirichlet draw underflowed; increase dirichlet_alpha")

    next_id = 0
    clients = []
    for k in range(K):
        counts = _quota_counts(props[k], int(sizes[k]))
        labels = np.repeat(np.arange(C), counts)
        labels = labels[rng.permutation(labels.size)]
        x = means[labels] + rng.standard_normal((labels.size, d)) + shifts[k]
        ids = np.arange(next_id, next_id + labels.size)
        next_id += labels.size
        clients.append(ClientDataset(x, labels, C, ids))

    test_counts = _quota_counts(np.full(C, 1.0 / C), spec.test_size)
    test_labels = np.repeat(np.arange(C), test_counts)
    test_x = means[test_labels] + rng.standard_normal((test_labels.size, d))
    test = ClientDataset(test_x, test_labels, C, np.arange(next_id, next_id + test_labels.size))
    return FederationData(clients, test, spec, means, shifts)


@dataclass(frozen=True)
class ClientStat:
    n: int
    q: np.ndarray = field(repr=False)
    entropy: float


def normalized_entropy(q: np.ndarray) -> float:
    """Shannon entropy of ``q`` divided by ``log C`` (0 log 0 := 0)."""
    q = np.asarray(q, dtype=np.float64)
    C = q.size
    if C <= 1:
        return 0.0
    nz = q[q > 0]
    h = float(-np.sum(nz * np.log(nz)) / np.log(C))
    return min(max(h, 0.0), 1.0)


def client_stats(data: FederationData | list[ClientDataset]) -> list[ClientStat]:
    clients = data.clients if isinstance(data, FederationData) else data
    out = []
    for c in clients:
        counts = c.class_counts
        if c.n < 1:
            raise DataError("client with no samples")
        q = counts / c.n
        out.append(ClientStat(c.n, q, normalized_entropy(q)))
    return out


# --- directory export / import -------------------------------------------

def _write_csv(path: Path, ds: ClientDataset) -> None:
    header = ",".join([f"f{i}" for i in range(ds.dim)] + ["label"])
    rows = [
        ",".join([repr(float(v)) for v in x] + [str(int(y))])
        for x, y in zip(ds.features, ds.labels)
    ]
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows))


def _read_csv(path: Path, num_classes: int) -> ClientDataset:
    lines = path.read_text().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    d = len(lines[0].split(",")) - 1
    if len(lines) == 1:
        raise DataError(f"{path}: client has no samples")
    arr = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if arr.shape[1] != d + 1:
        raise DataError(f"{path}: ragged rows")
    labels = arr[:, -1].astype(np.int64)
    if not np.array_equal(labels, arr[:, -1]):
        raise DataError(f"{path}: non-integer labels")
    return ClientDataset(arr[:, :-1].copy(), labels, num_classes)


def export_federation(data: FederationData, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(data.num_clients - 1)))
    stats = client_stats(data)
    files = []
    for k, ds in enumerate(data.clients):
        name = f"client_{k:0{width}d}.csv"
        _write_csv(directory / name, ds)
        files.append(name)
    _write_csv(directory / "test.csv", data.global_test)
    manifest = {
        "format": "fedkws-federation",
        "version": 1,
        "generator_spec": asdict(data.spec),
        "num_clients": data.num_clients,
        "num_classes": data.num_classes,
        "dim": data.dim,
        "test_file": "test.csv",
        "test_size": data.global_test.n,
        "clients": [
            {"file": f, "n": s.n, "class_counts": data.clients[k].class_counts.tolist(),
             "entropy": s.entropy}
            for k, (f, s) in enumerate(zip(files, stats))
        ],
        "mean_entropy": float(np.mean([s.entropy for s in stats])),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_federation(directory: str | Path) -> FederationData:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{manifest_path}: manifest not found")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "fedkws-federation" or manifest.get("version") != 1:
        raise DataError(f"{manifest_path}: unsupported manifest format/version")
    C = int(manifest["num_classes"])
    spec = GeneratorSpec(**manifest["generator_spec"])
    clients = []
    for entry in manifest["clients"]:
        ds = _read_csv(directory / entry["file"], C)
        if ds.n != entry["n"] or ds.class_counts.tolist() != entry["class_counts"]:
            raise DataError(f"{entry['file']}: contents disagree with manifest")
        if ds.dim != manifest["dim"]:
            raise DataError(f"{entry['file']}: feature width {ds.dim} != {manifest['dim']}")
        clients.append(ds)
    if len(clients) != manifest["num_clients"] or not clients:
        raise DataError("manifest client count mismatch")
    test = _read_csv(directory / manifest["test_file"], C)
    if test.dim != manifest["dim"]:
        raise DataError("test set feature width mismatch")
    if np.any(test.class_counts == 0):
        raise DataError("test set is missing a class")
    # reassign ids so train/test disjointness is checkable after reload
    pos = 0
    with_ids = []
    for ds in clients + [test]:
        with_ids.append(ClientDataset(ds.features, ds.labels, C, np.arange(pos, pos + ds.n)))
        pos += ds.n
    return FederationData(with_ids[:-1], with_ids[-1], spec)
