"""PucciLab application package."""
