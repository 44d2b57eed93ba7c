"""Log-gamma directed polymer laboratory."""
