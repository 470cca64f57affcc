from .encoding import (BOB_PHASE, PHASE_TABLE, Basis, MeasureOutcome, PulsePair, QubitPrep, alice_emit,
                       alice_emit_block, bob_measure, decode_phase, encode_phase, encode_phase_array,
                       error_probability, port_probabilities, sift)
from .parties import Alice, Bob, SessionAborted
from .transport import Endpoint, TransportError, inproc_pair, open_pair, parse_transport, tcp_pair
from .wire import (Ctrl, FrameReader, MsgType, ProtocolError, SiftFrame, TruncatedFrame, frame_decode,
                   frame_encode)
