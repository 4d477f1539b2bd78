"""Joint pricing of complementary products with GP-UCB demand models."""

from .exp_harness import ExperimentConfig, emit_results, load_config, run_experiment
from .market_sim import EnvSpec, generate_env, simulate_round
from .pricing_engine import COPP_KG, COPP_UG, IPP, PolicyConfig, PricingEngine
from .relation_miner import Partition, ValueMatrix, solve_partition

__all__ = [
    "COPP_KG", "COPP_UG", "IPP", "EnvSpec", "ExperimentConfig", "Partition", "PolicyConfig",
    "PricingEngine", "ValueMatrix", "emit_results", "generate_env", "load_config", "run_experiment",
    "simulate_round", "solve_partition",
]
__version__ = "0.1.0"
