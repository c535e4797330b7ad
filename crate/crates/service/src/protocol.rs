//! WebSocket message schema. Text frames carry JSON with a schema version
//! `v`; binary frames carry mono f32 little-endian audio (server to client:
//! synthesized output; client to server: excitation chunks).

use foley_core::fx::PostChainParams;
use serde::{Deserialize, Serialize};

use crate::engine::{EngineStats, ExcitationMode};
use crate::error::ServiceError;
use crate::model::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientCommand {
    /// Either one `index`/`value` pair or a full `values` vector.
    SetControl {
        #[serde(default)]
        index: Option<usize>,
        #[serde(default)]
        value: Option<f64>,
        #[serde(default)]
        values: Option<Vec<f64>>,
    },
    SetEnabled { index: usize, enabled: bool },
    SetPostchain { params: Option<PostChainParams> },
    SetMode { mode: ExcitationMode },
    PushAudioChunk { samples: Vec<f32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub v: u32,
    #[serde(default)]
    pub seq: Option<u64>,
    #[serde(flatten)]
    pub command: ClientCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Ready {
        v: u32,
        session_id: String,
        model_id: String,
        k: usize,
        frame_samples: usize,
        sample_rate: u32,
        frame_rate_hz: f64,
    },
    /// The command took effect; `frame` is the index of the first binary
    /// frame rendered with it.
    Ack {
        v: u32,
        seq: Option<u64>,
        frame: u64,
        controls: Vec<f64>,
        enabled: Vec<bool>,
        mode: ExcitationMode,
    },
    Error {
        v: u32,
        seq: Option<u64>,
        error: ServiceError,
    },
    Closed {
        v: u32,
        reason: String,
        stats: EngineStats,
    },
}

impl ServerMessage {
    pub fn error(seq: Option<u64>, error: ServiceError) -> Self {
        ServerMessage::Error {
            v: SCHEMA_VERSION,
            seq,
            error,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }
}

pub fn encode_frame(samples: &[f32]) -> Vec<u8> {
    samples.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// `None` when the payload length is not a multiple of four bytes.
pub fn decode_frame(bytes: &[u8]) -> Option<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_each_command() {
        let cases = [
            r#"{"v":1,"seq":3,"type":"set_control","index":0,"value":0.5}"#,
            r#"{"v":1,"type":"set_control","values":[0.1,0.2]}"#,
            r#"{"v":1,"type":"set_enabled","index":1,"enabled":false}"#,
            r#"{"v":1,"type":"set_postchain","params":null}"#,
            r#"{"v":1,"type":"set_mode","mode":"live_input"}"#,
            r#"{"v":1,"type":"push_audio_chunk","samples":[0.0,0.5]}"#,
        ];
        for c in cases {
            let m: ClientMessage = serde_json::from_str(c).unwrap_or_else(|e| panic!("{c}: {e}"));
            assert_eq!(m.v, 1);
        }
        let m: ClientMessage = serde_json::from_str(cases[0]).unwrap();
        assert_eq!(m.seq, Some(3));
        assert!(serde_json::from_str::<ClientMessage>(r#"{"v":1,"type":"explode"}"#).is_err());
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"set_mode","mode":"file"}"#).is_err());
    }

    #[test]
    fn frame_codec_round_trip() {
        let x = vec![0.0f32, -1.0, 0.25, f32::MIN_POSITIVE];
        let b = encode_frame(&x);
        assert_eq!(b.len(), 16);
        assert_eq!(decode_frame(&b).unwrap(), x);
        assert!(decode_frame(&b[..3]).is_none());
    }
}
