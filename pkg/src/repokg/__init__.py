"""Code knowledge graph indexing with entity lookup and tree-search retrieval."""
