from pydantic import BaseModel, ConfigDict

SCHEMA_EXIT = "nagumo.exit/1"
SCHEMA_FIT = "nagumo.fit/1"
SCHEMA_GROWTH = "nagumo.growth/1"
SCHEMA_WAVE = "nagumo.wave/1"
SCHEMA_METRIC = "nagumo.metric/1"
SCHEMA_MANIFEST = "nagumo.manifest/1"
SCHEMA_PROFILE = "nagumo.profile/1"
SCHEMA_SERIES = "nagumo.series/1"
SCHEMA_SNAPSHOT = "nagumo.snapshot/1"


class ConfigBase(BaseModel):
    """Immutable, hashable base for validated run configuration."""
    model_config = ConfigDict(frozen=True, extra="forbid")


class ReportBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_tag: str
