import pytest

from schemas.schemas import (
    AnalyzeConfig,
    CompareTransientConfig,
    PlantSample,
    SimulateNlConfig,
    TransferFunctionDoc,
)
from services.analysis_services import to_transfer_function
from services.catalog_services import benchmark_defaults
from services.nonlinear_services import compare_transient


@pytest.fixture
def b1_config() -> AnalyzeConfig:
    return AnalyzeConfig.model_validate(benchmark_defaults("B1", "analyze"))


@pytest.fixture
def b1_family(b1_config):
    return b1_config.family


@pytest.fixture
def b1_controller(b1_config):
    return to_transfer_function(b1_config.controller)


@pytest.fixture
def b1_qspec(b1_config):
    return b1_config.qfilter


@pytest.fixture
def b1_vertex() -> PlantSample:
    return PlantSample(alpha=[1.0, 4.0], beta=[2.0], g=0.8, provenance="vertex", sample_id=1)


@pytest.fixture
def static_controller():
    return to_transfer_function(TransferFunctionDoc(num=[2.0], den=[1.0]))


@pytest.fixture
def n1_config() -> SimulateNlConfig:
    return SimulateNlConfig.model_validate(benchmark_defaults("N1", "simulate-nl"))


@pytest.fixture(scope="session")
def n1_sweep_config() -> CompareTransientConfig:
    return CompareTransientConfig.model_validate(benchmark_defaults("N1", "compare-transient"))


@pytest.fixture(scope="session")
def n1_sweep(n1_sweep_config):
    return compare_transient(n1_sweep_config)
