"""Model fitting: circles, point distribution models, CPD registration and shape morphing."""
