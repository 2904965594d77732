# SBR reactive-settling simulator package
