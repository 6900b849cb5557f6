"""Single-atom 87Rb D1 physics: level scheme, master equation, spin exchange, protocols."""
