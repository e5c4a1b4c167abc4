# Schemas package - pydantic records and stage configs
