# Test package for the SBR reactive-settling simulator
