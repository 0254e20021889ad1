"""The byte level vocabulary: 256 byte values followed by two specials."""

BYTE_COUNT = 256
BOS_ID = 256  # prepended to every sequence
VOCAB_SIZE = 258  # id 257 is reserved for padding and never produced by the data pipeline
