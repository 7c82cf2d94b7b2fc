//! External adapters driven by stand-in shell scripts found through the
//! tool directory variable. Kept in one test so the environment variable is
//! set only once per process.

#![cfg(unix)]

use std::fs;
use std::os::unix::fs::PermissionsExt;

use hybridvc::codecs::{self, external::TOOLDIR_ENV, CodecConfig, Frame, StreamInfo, VideoSequence};
use hybridvc::Error;

fn script(dir: &std::path::Path, name: &str, body: &str) {
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
}

#[test]
fn external_adapters_with_stand_in_tools() {
    let tools = tempfile::tempdir().unwrap();
    script(tools.path(), "fake-copy", r#"cp "$1" "$2""#);
    script(tools.path(), "fake-fail", r#"echo "bad bitstream" >&2; exit 3"#);
    std::env::set_var(TOOLDIR_ENV, tools.path());

    let rgb: Vec<u8> = (0..16 * 8 * 3).map(|i| [90u8, 140, 200][i % 3]).collect();
    let frame = Frame::from_rgb8(16, 8, &rgb).unwrap();
    let video = VideoSequence::new(vec![frame.clone(); 3], 24.0).unwrap();

    let cfg = CodecConfig::external_video("fake-copy {input} {output}", "fake-copy {input} {output}", 27);
    let enc = codecs::encode_video(&video, &cfg).unwrap();
    assert_eq!(enc.bitstream.len(), 3 * 16 * 8 * 3 / 2);
    assert_eq!(enc.rate_bits, 8 * enc.bitstream.len() as u64);
    let dec = codecs::decode_video(&enc.bitstream, &cfg, &StreamInfo::of(&video)).unwrap();
    let err = dec.frames[1].data().iter().zip(frame.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(err < 0.02, "yuv round trip error {err}");

    let lossless = CodecConfig::external_lossless("fake-copy {input} {output}", "fake-copy {input} {output}");
    let payload = codecs::encode_reference(&frame, &lossless).unwrap();
    assert_eq!(codecs::decode_reference(&payload, &lossless).unwrap(), frame);

    let failing = CodecConfig::external_video("fake-fail {input} {output}", "fake-copy {input} {output}", 27);
    match codecs::encode_video(&video, &failing) {
        Err(Error::CodecProcess { stderr, .. }) => assert!(stderr.contains("bad bitstream")),
        other => panic!("expected a codec process error, got {other:?}"),
    }
}
