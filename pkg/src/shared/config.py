from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings

load_dotenv()

ARTIFACT_VERSION = "0.1.0"


class _Settings(BaseSettings):
    """Runtime defaults shared by the simulators and the CLI."""

    # Harness
    workers: int = Field(default=1, alias="PA_WORKERS")
    # relative --output, --edges and --trajectory paths resolve against this
    output_dir: str = Field(default=".", alias="PA_OUTPUT_DIR")

    # Polya point tree survival protocol
    ppt_generations: int = Field(default=30, alias="PPT_GENERATIONS")
    ppt_population_cap: int = Field(
        default=10_000, alias="PPT_POPULATION_CAP"
    )
    ppt_replicas: int = Field(default=10_000, alias="PPT_REPLICAS")
    ppt_batch_size: int = Field(default=64, alias="PPT_BATCH_SIZE")
    ppt_max_particles: int = Field(
        default=5_000_000, alias="PPT_MAX_PARTICLES"
    )

    # Percolation
    c2_ceiling: float = Field(default=0.02, alias="C2_CEILING")

    # Expansion
    expander_max_exact_n: int = Field(default=24, alias="EXPANDER_MAX_EXACT_N")

    # Power iteration
    power_tol: float = Field(default=1e-10, alias="POWER_TOL")
    power_max_iter: int = Field(default=10_000, alias="POWER_MAX_ITER")
    power_stable_iters: int = Field(default=5, alias="POWER_STABLE_ITERS")

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "extra": "ignore",
        "populate_by_name": True,
    }


# Create a singleton instance
Settings = _Settings()
