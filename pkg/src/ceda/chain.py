"""Chained feature-set refinement of classification uncertainty.

The first feature set produces a predictive map.  Every uncertain category
(one mixing several true labels) is then re-classified under the next
feature set, using a label tree built on that set from the full training
data, and so on down the chain.  Certain categories are never refined, so a
parent's count always equals the sum of its children's counts.

Composite categories are named by joining per-link label-set names with "-"
("e-be" reads: first link predicted {e}, second link {b, e}).

dissect_external places an external classifier's singleton predictions into
the chain's deepest categories and partitions all points into four cases:
certainty/uncertainty crossed with coherent/incoherent, where coherence
means the external label belongs to the deepest link's predicted set.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import ZStats, feature_matrix
from .errors import ConfigError, DataError
from .label_tree import tree_from_training
from .predictive_map import CompetitionConfig, TreeClassifier, set_name

log = logging.getLogger(__name__)

CASES = (
    "certainty-coherent",
    "certainty-incoherent",
    "uncertainty-coherent",
    "uncertainty-incoherent",
)


@dataclass(frozen=True)
class ChainLink:
    name: str
    features: tuple
    cfg: CompetitionConfig = None

    def config(self):
        return self.cfg or CompetitionConfig()


@dataclass
class FeatureChain:
    links: list

    def __post_init__(self):
        if not self.links:
            raise ConfigError("a feature chain needs at least one link")
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate chain link names")

    def __len__(self):
        return len(self.links)


@dataclass
class CompositeCategory:
    path_sets: tuple       # one sorted label tuple per link, deepest last
    name: str              # joined display name, no star
    certain: bool
    counts: np.ndarray     # per true label
    member_rows: np.ndarray

    @property
    def display_name(self):
        return self.name if self.certain else "*" + self.name

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def deepest_set(self):
        return self.path_sets[-1]


@dataclass
class OrderedCategoryTable:
    depth: int
    link_names: tuple
    true_labels: list
    categories: list

    def total(self):
        return int(sum(cat.total for cat in self.categories))

    def certain_fraction(self):
        total = self.total()
        if total == 0:
            return 0.0
        return sum(cat.total for cat in self.categories if cat.certain) / total

    def to_csv_text(self):
        lines = ["category," + ",".join(str(l) for l in self.true_labels)]
        for cat in self.categories:
            lines.append(cat.display_name + "," + ",".join(str(int(c)) for c in cat.counts))
        return "\n".join(lines) + "\n"

    def to_json_dict(self):
        return {
            "depth": self.depth,
            "links": list(self.link_names),
            "true_labels": [str(l) for l in self.true_labels],
            "categories": [
                {
                    "name": cat.display_name,
                    "path": [list(s) for s in cat.path_sets],
                    "certain": cat.certain,
                    "counts": {str(l): int(c) for l, c in zip(self.true_labels, cat.counts)},
                    "rows": [int(r) for r in cat.member_rows],
                }
                for cat in self.categories
            ],
        }


@dataclass
class ChainResult:
    chain: FeatureChain
    true_labels: list
    tables: list
    final_category_per_row: list = field(default_factory=list)
    true_value_per_row: list = field(default_factory=list)
    trees: dict = field(default_factory=dict)

    def verify_conservation(self):
        """Each refined parent's count must equal the sum of its children."""
        for d in range(1, len(self.tables)):
            parents = {c.path_sets: c for c in self.tables[d - 1].categories if not c.certain}
            child_totals = {}
            for child in self.tables[d].categories:
                child_totals.setdefault(child.path_sets[:-1], 0)
                child_totals[child.path_sets[:-1]] += child.total
            for key, parent in parents.items():
                if child_totals.get(key, 0) != parent.total:
                    return False
            extra = set(child_totals) - set(parents)
            if extra:
                return False
        return True


def _seed_for_link(seed, idx):
    return int(np.random.SeedSequence([int(seed), int(idx)]).generate_state(1)[0])


def _sort_key(path_sets):
    return tuple((len(s) == 0, len(s), s) for s in path_sets)


def _tabulate(depth, link_names, keys_per_row, rows, true_values, true_labels, universe):
    label_pos = {lab: i for i, lab in enumerate(true_labels)}
    buckets = {}
    for row in rows:
        key = keys_per_row[row]
        bucket = buckets.setdefault(key, {"counts": np.zeros(len(true_labels), dtype=int), "rows": []})
        bucket["counts"][label_pos[true_values[row]]] += 1
        bucket["rows"].append(row)
    categories = []
    for key in sorted(buckets, key=_sort_key):
        counts = buckets[key]["counts"]
        categories.append(CompositeCategory(
            path_sets=key,
            name="-".join(set_name(s, universe) for s in key),
            certain=int(np.count_nonzero(counts)) == 1,
            counts=counts,
            member_rows=np.asarray(buckets[key]["rows"], dtype=int),
        ))
    return OrderedCategoryTable(depth=depth, link_names=link_names, true_labels=list(true_labels), categories=categories)


def chain_categories(test, train, chain, samples_per_triplet=200, seed=0, threads=1):
    """Run the refinement chain over a test set.

    Label trees are rebuilt per link on the full training data with seeds
    derived from (seed, link index), so a chain run is reproducible and the
    same link always sees the same tree regardless of refinement depth.
    """
    universe = list(train.labels)
    true_values = test.label_values
    n = test.n_rows
    keys = {row: () for row in range(n)}
    tables = []
    trees = {}
    final = [None] * n
    active_rows = list(range(n))
    test_X_cache = {}
    for depth, link in enumerate(chain.links, start=1):
        tree = tree_from_training(
            train, list(link.features),
            samples_per_triplet=samples_per_triplet,
            seed=_seed_for_link(seed, depth - 1),
        )
        trees[link.name] = tree
        clf = TreeClassifier(tree, train, list(link.features), link.config())
        X = feature_matrix(test.table, list(link.features))
        preds = [clf.classify(X[row]) for row in active_rows]
        for row, pred in zip(active_rows, preds):
            keys[row] = keys[row] + (tuple(sorted(pred.labels)),)
        table = _tabulate(
            depth, tuple(l.name for l in chain.links[:depth]),
            keys, active_rows, true_values, list(test.labels), universe,
        )
        tables.append(table)
        next_rows = []
        for cat in table.categories:
            for row in cat.member_rows:
                final[row] = cat
            if not cat.certain:
                next_rows.extend(cat.member_rows.tolist())
        active_rows = sorted(next_rows)
        if not active_rows:
            break
    return ChainResult(chain=chain, true_labels=list(test.labels), tables=tables,
                       final_category_per_row=final,
                       true_value_per_row=[str(v) for v in true_values], trees=trees)


# ---------------------------------------------------------------------------
# Dissection of an external classifier


@dataclass
class DissectionReport:
    records: list   # dicts: row, true, external, category, depth, case
    totals: dict    # case -> count

    def rate_in_uncertain(self, correct):
        """Fraction of correct (or incorrect) external predictions that fall
        in uncertainty cases."""
        sel = [r for r in self.records if (r["external"] == r["true"]) == correct]
        if not sel:
            return float("nan")
        return sum(1 for r in sel if r["case"].startswith("uncertainty")) / len(sel)

    def to_csv_text(self):
        lines = ["row,true,external,category,depth,case"]
        for r in self.records:
            lines.append("%d,%s,%s,%s,%d,%s" % (
                r["row"], r["true"], r["external"], r["category"], r["depth"], r["case"],
            ))
        return "\n".join(lines) + "\n"

    def to_json_dict(self):
        return {"totals": {c: int(self.totals.get(c, 0)) for c in CASES}, "points": self.records}


def dissect_external(external, result):
    """Partition externally-predicted points by chain certainty and coherence.

    ``external`` maps test row position to a singleton predicted label.  Every
    test row must be covered and every key must be a valid row.
    """
    n = len(result.final_category_per_row)
    external = {int(k): str(v) for k, v in external.items()}
    missing = [r for r in range(n) if r not in external]
    if missing:
        raise DataError("external predictions missing rows: %s%s" % (
            ", ".join(str(r) for r in missing[:10]), "..." if len(missing) > 10 else ""))
    unknown = sorted(set(external) - set(range(n)))
    if unknown:
        raise DataError("external predictions for unknown rows: %s" % unknown[:10])
    depth_of = {}
    for d, table in enumerate(result.tables, start=1):
        for cat in table.categories:
            depth_of[cat.path_sets] = d
    records = []
    totals = {c: 0 for c in CASES}
    for row in range(n):
        cat = result.final_category_per_row[row]
        ext = external[row]
        case = "%s-%s" % ("certainty" if cat.certain else "uncertainty",
                          "coherent" if ext in cat.deepest_set else "incoherent")
        totals[case] += 1
        records.append({
            "row": row,
            "true": result.true_value_per_row[row],
            "external": ext,
            "category": cat.display_name,
            "depth": depth_of[cat.path_sets],
            "case": case,
        })
    return DissectionReport(records=records, totals=totals)


def load_external_predictions(path):
    """Read (row_id, predicted_label) CSV with a header."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError("external predictions file %s is empty" % path)
            out = {}
            for i, row in enumerate(reader):
                if len(row) < 2:
                    raise DataError("external predictions row %d is malformed" % i)
                try:
                    rid = int(row[0])
                except ValueError:
                    raise DataError("external predictions row %d: bad row id '%s'" % (i, row[0]))
                out[rid] = row[1].strip()
    except OSError as exc:
        raise DataError("cannot read %s: %s" % (path, exc))
    if not out:
        raise DataError("external predictions file %s has no rows" % path)
    return out


def knn_baseline_predict(train, test, features, k=20):
    """Plain k-nearest-neighbor majority vote (the built-in reference
    external classifier).  Ties: smallest label alphabetically."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    Xtr = feature_matrix(train.table, features)
    zs = ZStats.fit(Xtr)
    Ztr = zs.transform(Xtr)
    Zte = zs.transform(feature_matrix(test.table, features))
    y = train.label_values
    labels = sorted(set(y.tolist()))
    pos = {lab: i for i, lab in enumerate(labels)}
    codes = np.array([pos[v] for v in y])
    out = []
    kk = min(k, len(Ztr))
    row_idx = np.arange(len(Ztr))
    for x in Zte:
        d = np.linalg.norm(Ztr - x, axis=1)
        order = np.lexsort((row_idx, d))[:kk]
        votes = np.bincount(codes[order], minlength=len(labels))
        out.append(labels[int(np.argmax(votes))])  # argmax takes first max: alphabetical tie-break
    return out
