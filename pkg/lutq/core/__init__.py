"""Core substrate: tensors, ledger models and storage."""
