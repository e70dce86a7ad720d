from . import config, sim, planner, experts, evaluate
__all__ = ['config', 'sim', 'planner', 'experts', 'evaluate']
