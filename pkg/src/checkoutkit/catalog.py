"""In-memory exemplar catalog used by pruning and scene synthesis."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Iterator

from .geometry import ExemplarImage
from .pruning import PoseRecord, PruneConfig, prune_poses, score_poses

__all__ = ["CatalogEntry", "ExemplarCatalog"]


@dataclass(frozen=True, eq=False)
class CatalogEntry:
    """One (category, view) exemplar plus its pruning bookkeeping."""

    exemplar: ExemplarImage
    area: int
    ratio: float | None = None
    realistic: bool | None = None

    @property
    def category(self) -> int:
        return self.exemplar.category

    @property
    def view(self) -> int:
        return self.exemplar.view


class ExemplarCatalog:
    """Exemplars keyed by (category, view).

    Entries with ``realistic`` left unset (a catalog that was never pruned)
    are treated as usable for synthesis.
    """

    def __init__(self, entries: Iterable[CatalogEntry]) -> None:
        self._entries: dict[tuple[int, int], CatalogEntry] = {}
        for entry in entries:
            key = (entry.category, entry.view)
            if key in self._entries:
                raise ValueError(f"duplicate exemplar for category/view {key}")
            if entry.exemplar.mask is None:
                raise ValueError(f"exemplar {key} has no mask")
            self._entries[key] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[CatalogEntry]:
        return iter(self._entries[key] for key in sorted(self._entries))

    def get(self, category: int, view: int) -> CatalogEntry:
        return self._entries[(category, view)]

    def categories(self) -> list[int]:
        return sorted({category for category, _ in self._entries})

    def views(self, category: int) -> list[int]:
        return sorted(view for cat, view in self._entries if cat == category)

    def realistic_views(self, category: int) -> list[int]:
        return sorted(
            view
            for cat, view in self._entries
            if cat == category and self._entries[(cat, view)].realistic is not False
        )

    def categories_with_realistic_views(self) -> list[int]:
        return sorted(
            {category for category in self.categories() if self.realistic_views(category)}
        )

    def pose_records(self) -> list[PoseRecord]:
        return [
            PoseRecord(category=e.category, view=e.view, area=e.area)
            for e in self
        ]

    def pruned(self, cfg: PruneConfig | None = None) -> "ExemplarCatalog":
        """New catalog with ratios and realistic flags filled in."""
        kept, pruned = prune_poses(score_poses(self.pose_records()), cfg)
        flags = {(r.category, r.view): r for r in kept + pruned}
        entries = []
        for entry in self:
            record = flags[(entry.category, entry.view)]
            entries.append(
                replace(entry, ratio=record.ratio, realistic=record.realistic)
            )
        return ExemplarCatalog(entries)
