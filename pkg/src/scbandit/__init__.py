"""Sequential choice bandits: offline optimizer, UCB / GLM-UCB learners and
a seeded regret-simulation harness."""

__version__ = "0.1.0"
