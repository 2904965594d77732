# Scripts package for the SBR reactive-settling simulator
