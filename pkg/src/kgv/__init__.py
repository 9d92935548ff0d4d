"""Knowledge-guided visual representation learning."""
