"""NWT1 and TQZ1 containers and index bit packing."""

from .bitpack import pack, packed_size, unpack
from .nwt import (FormatError, NwtFormatError, NwtRecord, load_model, load_tensor, network_to_records, parse_nwt,
                  read_nwt, records_to_network, serialize_nwt, tensor_record, write_nwt)
