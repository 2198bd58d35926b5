use proptest::prelude::*;
use solarvlc::channel::render_panel_voltage;
use solarvlc::codec::{decode_bits, encode_frame, receive_frame, PAYLOAD_MAX};
use solarvlc::*;

/// Render one frame inside an open-circuit window, filter, digitize, decode.
fn through_pipeline(payload: u32, offset: f64, noise: f64, seed: u64) -> Result<u32, CodecError> {
    let dt = 50e-6;
    let window = (0.0, 0.082);
    let ch = ChannelConfig {
        noise_sigma: noise,
        seed,
        ..Default::default()
    };
    let tx = Transmission::new(
        encode_frame(&VlcFrame::from_u32(payload)?),
        1.25e-3 + offset,
    );
    let panel = render_panel_voltage(&ch, Some(&tx), &[window], 0.0, window.1, dt).expect("trace");
    let mut fe = FrontEnd::new(&AfeConfig::default(), dt).expect("afe");
    let logic: Vec<f64> = panel
        .samples
        .iter()
        .map(|&v| if fe.process(v).1 { 1.0 } else { 0.0 })
        .collect();
    let trace = SignalTrace::new(logic, dt, 0.0).expect("trace");
    receive_frame(&trace, 800.0).map(|f| f.payload.value())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bits_roundtrip(p in 0..=PAYLOAD_MAX) {
        let f = VlcFrame::from_u32(p).unwrap();
        prop_assert_eq!(decode_bits(&encode_frame(&f).bits), Ok(f));
    }

    #[test]
    fn payload_survives_channel_and_front_end(
        p in 0..=PAYLOAD_MAX,
        offset in 0.0f64..0.035,
        seed in any::<u64>(),
    ) {
        prop_assert_eq!(through_pipeline(p, offset, 0.002, seed), Ok(p));
    }

    #[test]
    fn out_of_range_payload_rejected(p in (PAYLOAD_MAX + 1)..=u32::MAX) {
        prop_assert!(
            matches!(VlcFrame::from_u32(p), Err(CodecError::PayloadOutOfRange(_))),
            "{:?}",
            VlcFrame::from_u32(p)
        );
    }
}
