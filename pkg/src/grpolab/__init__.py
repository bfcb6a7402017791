"""Exact-enumeration laboratory for GRPO, its no-ratio ablation and TIC-GRPO."""
