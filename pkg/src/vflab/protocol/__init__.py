from .footprint import (
    PASSIVE_FINAL_LAYER_PARAMS,
    footprint_apcvfl,
    footprint_splitnn,
    footprint_vfedtrans,
    format_bytes,
)
from .frames import (
    DATA_FRAME_TYPES,
    HEADER_LEN,
    MAGIC,
    MATRIX_HEADER_LEN,
    PROTOCOL_VERSION,
    Frame,
    MsgType,
    decode_frame,
    decode_ids,
    decode_matrix,
    encode_frame,
    encode_ids,
    encode_matrix,
)
from .session import (
    SplitnnActiveParty,
    SplitnnPassiveParty,
    SplitnnResult,
    exchange_active,
    exchange_passive,
    run_apcvfl_exchange,
    run_paired,
    run_splitnn,
    splitnn_active,
    splitnn_passive,
)
from .transport import (
    CommLedger,
    LedgeredEndpoint,
    QueueEndpoint,
    TcpEndpoint,
    inprocess_pair,
    tcp_accept,
    tcp_connect,
    tcp_listen,
)
