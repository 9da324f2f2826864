use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsl::Payload;
use crate::topology::DeviceInstance;

/// Payload bytes for a device.
///
/// Literal payloads are returned verbatim. Size payloads are pseudo-random
/// bytes drawn from a ChaCha8 stream keyed by `seed` and the device's
/// position, so the same seed reproduces the same bytes in every run.
pub fn make_payload(node_id: u16, edge_id: u16, device: &DeviceInstance, seed: u64) -> Vec<u8> {
    match &device.payload {
        Payload::Literal(bytes) => bytes.clone(),
        Payload::Size(size) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(
                (node_id as u64) << 32 | (edge_id as u64) << 16 | device.device_id as u64,
            );
            let mut out = vec![0u8; size.as_bytes() as usize];
            rng.fill_bytes(&mut out);
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::units::{SizeLit, SizeUnit};

    fn device(payload: Payload) -> DeviceInstance {
        DeviceInstance {
            device_id: 7,
            type_name: "D".into(),
            period_steps: 1,
            payload,
        }
    }

    #[test]
    fn literal_is_verbatim() {
        let d = device(Payload::Literal(b"23C".to_vec()));
        assert_eq!(make_payload(0, 0, &d, 1), vec![0x32, 0x33, 0x43]);
    }

    #[test]
    fn sized_is_deterministic_per_seed_and_device() {
        let d = device(Payload::Size(SizeLit {
            value: 8,
            unit: SizeUnit::B,
        }));
        let a = make_payload(1, 2, &d, 42);
        assert_eq!(a.len(), 8);
        assert_eq!(a, make_payload(1, 2, &d, 42));
        assert_ne!(a, make_payload(1, 2, &d, 43));
        assert_ne!(a, make_payload(1, 3, &d, 42));
    }
}
