# Soft CCA Core Package
