mod common;

use proptest::prelude::*;
use strobe::apk::zip::{write_zip, METHOD_DEFLATE, METHOD_STORED};
use strobe::apk::{extract_app_strings_from_bytes, list_dex_entries};
use strobe::dex::{
    classify_strings, decode_mutf8, encode_mutf8, parse_dex, parse_dex_with, DexError, ParseOptions,
};
use strobe::synth::{build_dex, DexSpec};

use common::*;

fn hex(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn reference_digests_match_known_vectors() {
    assert_eq!(hex(&ref_sha1(b"abc")), "a9993e364706816aba3e25717850c26c9cd0d89d");
    assert_eq!(hex(&ref_sha1(b"")), "da39a3ee5e6b4b0d3255bfef95601890afd80709");
    let long = vec![b'a'; 1_000_000];
    assert_eq!(hex(&ref_sha1(&long)), "34aa973cd4c4daa4f61eeb2bdbad27316534016f");
    assert_eq!(ref_adler32(b"Wikipedia"), 0x11E6_0398);
    assert_eq!(ref_adler32(&long), strobe::dex::adler32(&long));
}

#[test]
fn reference_decoder_sanity() {
    assert_eq!(ref_decode_mutf8(&[0x61]).as_deref(), Some("a"));
    assert_eq!(ref_decode_mutf8(&[0xC0, 0x80]).as_deref(), Some("\u{0}"));
    assert_eq!(ref_decode_mutf8(&[0xE0, 0x20]), None);
    assert_eq!(decode_mutf8(&[0xC0, 0x80]).unwrap(), "\u{0}");
    assert!(decode_mutf8(&[0xE0, 0x20]).is_err());
    let emoji = encode_mutf8("😀");
    assert_eq!(emoji.len(), 6);
    assert_eq!(decode_mutf8(&emoji).unwrap(), "😀");
    assert!(decode_mutf8(&emoji[..3]).is_err());
}

fn spec(types: &[&str], methods: &[&str], plain: &[&str]) -> DexSpec {
    DexSpec {
        type_descriptors: types.iter().map(|s| s.to_string()).collect(),
        method_names: methods.iter().map(|s| s.to_string()).collect(),
        field_names: Vec::new(),
        source_file: None,
        non_identifier_strings: plain.iter().map(|s| s.to_string()).collect(),
    }
}

#[test]
fn classify_small_examples() {
    let dex = parse_dex(&build_dex(&spec(&["Lcom/x;"], &["doIt"], &["hello world"])).unwrap()).unwrap();
    let pool = classify_strings(&dex);
    assert_eq!(pool.non_identifier_strings().collect::<Vec<_>>(), ["hello world"]);
    assert!(pool.identifier_strings().any(|s| s == "doIt"));

    let dex = parse_dex(&build_dex(&spec(&["Lcom/x;", "Lcom/y;"], &["run"], &[])).unwrap()).unwrap();
    let pool = classify_strings(&dex);
    assert!(pool.non_identifier_indices.is_empty());
    assert_eq!(pool.identifier_indices.len(), dex.strings.len());

    let dex = parse_dex(&build_dex(&spec(&["Lcom/x;"], &[], &["a", "b"])).unwrap()).unwrap();
    let texts: Vec<&str> = dex.strings.iter().map(|s| s.text.as_str()).collect();
    assert_eq!(texts, ["Lcom/x;", "a", "b"]);
}

/// Replaces the final continuation byte of `needle`'s payload with a space.
fn corrupt(image: &mut [u8], needle: &[u8]) {
    let at = image.windows(needle.len()).position(|w| w == needle).expect("payload present");
    image[at + needle.len() - 1] = 0x20;
}

#[test]
fn strict_mode_excludes_patched_dex() {
    let mut image = build_dex(&spec(&["Lcom/x;"], &[], &["caf\u{e9}", "plain"])).unwrap();
    corrupt(&mut image, &encode_mutf8("caf\u{e9}"));
    let dex = parse_dex(&image).unwrap();
    assert_eq!(dex.decode_failures(), 1);
    assert_eq!(classify_strings(&dex).non_identifier_strings().collect::<Vec<_>>(), ["plain"]);
    assert_eq!(
        parse_dex_with(&image, ParseOptions { strict: true }),
        Err(DexError::Decode { failures: 1 })
    );

    let apk = write_zip(&[("classes.dex", &image, METHOD_DEFLATE)]);
    let lenient = extract_app_strings_from_bytes("x", &apk, false).unwrap();
    assert_eq!((lenient.decode_failures, lenient.strict_excluded), (1, false));
    let strict = extract_app_strings_from_bytes("x", &apk, true).unwrap();
    assert!(strict.strict_excluded);
}

#[test]
fn apk_dex_payloads_are_byte_identical() {
    let a = build_dex(&spec(&["La;"], &["m"], &["x"])).unwrap();
    let b = build_dex(&spec(&["Lb;"], &[], &["x", "y"])).unwrap();
    let apk = write_zip(&[
        ("classes2.dex", &b, METHOD_STORED),
        ("res/x.png", b"png", METHOD_STORED),
        ("classes.dex", &a, METHOD_DEFLATE),
    ]);
    let entries = list_dex_entries(&apk).unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!((entries[0].0.as_str(), &entries[0].1), ("classes.dex", &a));
    assert_eq!((entries[1].0.as_str(), &entries[1].1), ("classes2.dex", &b));
    let strings = extract_app_strings_from_bytes("x", &apk, false).unwrap();
    assert_eq!(strings.non_identifier_strings, ["x", "x", "y"]);
    assert_eq!(strings, extract_app_strings_from_bytes("x", &apk, false).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mutf8_roundtrip(s in "\\PC{0,40}", nul in any::<bool>()) {
        let s = if nul { format!("{s}\u{0}") } else { s };
        let bytes = encode_mutf8(&s);
        prop_assert!(!bytes.contains(&0));
        prop_assert_eq!(decode_mutf8(&bytes).unwrap(), s);
    }

    #[test]
    fn parser_survives_arbitrary_bytes(data in proptest::collection::vec(any::<u8>(), 0..400)) {
        let _ = parse_dex(&data);
        let mut with_magic = b"dex\n035\0".to_vec();
        with_magic.extend_from_slice(&data);
        let _ = parse_dex(&with_magic);
        let _ = list_dex_entries(&data);
    }

    #[test]
    fn parser_survives_mutated_images(seed in any::<u64>(), flips in proptest::collection::vec((any::<usize>(), any::<u8>()), 1..12), cut in any::<usize>()) {
        let mut rng = chacha(seed);
        let mut image = build_dex(&random_spec(&mut rng)).unwrap();
        for (at, v) in flips {
            let i = at % image.len();
            image[i] = v;
        }
        if let Ok(dex) = parse_dex(&image) {
            let pool = classify_strings(&dex);
            prop_assert!(pool.identifier_indices.is_disjoint(&pool.non_identifier_indices));
            prop_assert_eq!(pool.identifier_indices.len() + pool.non_identifier_indices.len(), dex.strings.len());
        }
        image.truncate(cut % (image.len() + 1));
        let _ = parse_dex(&image);
        let apk = write_zip(&[("classes.dex", &image, METHOD_DEFLATE)]);
        let mut broken = apk.clone();
        let i = seed as usize % broken.len();
        broken[i] ^= 0x5A;
        let _ = extract_app_strings_from_bytes("x", &broken, true);
    }
}
