from pydantic import BaseModel, Field

from app.schemas.experiment import RankingVariant
from app.schemas.ranking import TripletCensus

BENCH_COLUMNS = [
    "variant",
    "batch_size",
    "class_count",
    "confident_fraction",
    "triplets",
    "pairwise_terms",
    "wall_time_ns_median",
    "repetitions",
]

CENSUS_COLUMNS = [
    "batch_size",
    "class_count",
    "batch_all_triplets",
    "batch_hard_triplets",
    "batch_mean_triplets",
    "pairwise_terms",
    "closed_form_batch_all",
    "matches_closed_form",
]


class BenchRecord(BaseModel):
    """Median forward+backward time of one loss variant on one batch"""

    variant: RankingVariant
    batch_size: int = Field(ge=1)
    class_count: int = Field(ge=1)
    confident_fraction: float = Field(default=1.0, ge=0, le=1)
    census: TripletCensus
    pair_count: int = 0
    wall_time_ns: int = Field(ge=0)
    baseline_ns: int = Field(default=0, ge=0)
    repetitions: int = Field(ge=5)

    @property
    def triplets(self) -> int:
        """Terms the variant actually evaluates"""
        if self.variant == RankingVariant.BATCH_ALL:
            return self.census.batch_all_triplets
        if self.variant == RankingVariant.BATCH_HARD:
            return self.census.batch_hard_triplets
        if self.variant == RankingVariant.BATCH_MEAN:
            return self.census.batch_mean_triplets
        return self.pair_count

    def as_row(self) -> dict:
        return {
            "variant": self.variant.value,
            "batch_size": self.batch_size,
            "class_count": self.class_count,
            "confident_fraction": self.confident_fraction,
            "triplets": self.triplets,
            "pairwise_terms": self.census.pairwise_terms,
            "wall_time_ns_median": self.wall_time_ns,
            "repetitions": self.repetitions,
        }


class CensusRow(BaseModel):
    batch_size: int
    class_count: int
    census: TripletCensus
    closed_form_batch_all: int

    @property
    def matches_closed_form(self) -> bool:
        return self.census.batch_all_triplets == self.closed_form_batch_all

    def as_row(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "class_count": self.class_count,
            "batch_all_triplets": self.census.batch_all_triplets,
            "batch_hard_triplets": self.census.batch_hard_triplets,
            "batch_mean_triplets": self.census.batch_mean_triplets,
            "pairwise_terms": self.census.pairwise_terms,
            "closed_form_batch_all": self.closed_form_batch_all,
            "matches_closed_form": self.matches_closed_form,
        }
