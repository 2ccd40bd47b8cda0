# orchestration layer: config loading, the stage pipeline and the command line
