# Models package - numerical domain objects
