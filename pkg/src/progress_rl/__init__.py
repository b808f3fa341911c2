"""Progress-based and self-certainty rewards for long-horizon RL finetuning."""

__version__ = "0.1.0"
