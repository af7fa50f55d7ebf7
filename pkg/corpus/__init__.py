# Corpus package
