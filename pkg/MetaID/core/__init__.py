# one module per stage; no imports here so each stays cheap to load
