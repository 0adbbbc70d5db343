// pipeline: stages implemented after core modules
