# Models package for the TMER recommendation pipeline
