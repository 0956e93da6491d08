"""Learned rate control: features, policy network, PPO and training."""
